#include "polaudit/gateway.hpp"

#include "polaudit/io.hpp"

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <fstream>
#include <random>
#include <set>
#include <thread>

namespace polaudit::gateway {

std::vector<ChatMessage> messages_for(const ModelEndpoint& endpoint, const std::string& rendered_prompt) {
  if (endpoint.layout == MessageLayout::system_prefix) {
    std::string prefix = prompts::prefix_of(rendered_prompt);
    std::vector<ChatMessage> out;
    if (!prefix.empty()) out.push_back({"system", prefix});
    out.push_back({"user", prompts::statement_of(rendered_prompt)});
    return out;
  }
  return {{"user", rendered_prompt}};
}

nlohmann::json build_chat_request(const ModelEndpoint& endpoint, const std::vector<ChatMessage>& messages) {
  nlohmann::json msgs = nlohmann::json::array();
  for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
  nlohmann::json body = {{"model", endpoint.model_id}, {"messages", msgs}, {"max_tokens", endpoint.sampling.max_tokens}};
  if (endpoint.sampling.mode == SamplingMode::top_k && endpoint.sampling.top_k) body["top_k"] = *endpoint.sampling.top_k;
  if (endpoint.sampling.temperature) body["temperature"] = *endpoint.sampling.temperature;
  return body;
}

std::pair<std::string, std::string> split_base_url(const std::string& base_url) {
  auto scheme_end = base_url.find("://");
  std::size_t host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  auto path_start = base_url.find('/', host_start);
  if (path_start == std::string::npos) return {base_url, ""};
  std::string prefix = base_url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {base_url.substr(0, path_start), prefix};
}

namespace {

std::optional<double> parse_retry_after(const std::string& value) {
  if (value.empty()) return std::nullopt;
  char* end = nullptr;
  double secs = std::strtod(value.c_str(), &end);
  if (end == value.c_str() || secs < 0) return std::nullopt;  // HTTP-date form is not honored
  return secs;
}

}  // namespace

ChatReply HttpChatTransport::complete(const ModelEndpoint& endpoint, const std::vector<ChatMessage>& messages) {
  ChatReply reply;
  auto [origin, prefix] = split_base_url(endpoint.base_url);
  httplib::Client client(origin);
  client.set_connection_timeout(std::chrono::seconds(10));
  client.set_read_timeout(timeout_);
  client.set_write_timeout(timeout_);

  httplib::Headers headers;
  if (!endpoint.auth_ref.empty()) {
    const char* token = std::getenv(endpoint.auth_ref.c_str());
    if (!token || !*token) {
      reply.error = "environment variable '" + endpoint.auth_ref + "' (auth_ref) is not set";
      reply.status = 401;
      return reply;
    }
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }

  auto res = client.Post(prefix + "/v1/chat/completions", headers,
                         build_chat_request(endpoint, messages).dump(), "application/json");
  if (!res) {
    reply.error = "transport error: " + httplib::to_string(res.error());
    return reply;
  }
  reply.status = res->status;
  if (res->has_header("Retry-After")) reply.retry_after_seconds = parse_retry_after(res->get_header_value("Retry-After"));
  if (res->status != 200) {
    reply.error = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200);
    return reply;
  }
  try {
    auto body = nlohmann::json::parse(res->body);
    const auto& content = body.at("choices").at(0).at("message").at("content");
    if (!content.is_string()) throw std::runtime_error("content is not a string");
    reply.text = content.get<std::string>();
  } catch (const std::exception& e) {
    reply.error = std::string("malformed completion body: ") + e.what();
  }
  return reply;
}

bool is_retryable(const ChatReply& reply) {
  if (reply.status == 0) return true;
  if (reply.status == 200) return !reply.error.empty();
  return reply.status == 408 || reply.status == 409 || reply.status == 429 || reply.status >= 500;
}

std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int failed_attempts,
                                        std::optional<double> retry_after_seconds, double unit_random) {
  if (retry_after_seconds) return std::chrono::milliseconds(static_cast<long long>(std::llround(*retry_after_seconds * 1000.0)));
  double exp = static_cast<double>(policy.base_delay.count()) * std::pow(2.0, std::max(0, failed_attempts - 1));
  exp = std::min(exp, static_cast<double>(policy.max_delay.count()));
  double factor = 1.0 - policy.jitter * std::clamp(unit_random, 0.0, 1.0);
  return std::chrono::milliseconds(static_cast<long long>(exp * factor));
}

CompletionResult complete_with_retries(ChatTransport& transport, const ModelEndpoint& endpoint,
                                       const std::vector<ChatMessage>& messages, const RetryPolicy& policy,
                                       const SleepFn& sleep) {
  thread_local std::mt19937_64 jitter_rng{std::random_device{}()};
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  CompletionResult result;
  for (int attempt = 1; attempt <= std::max(1, policy.max_attempts); ++attempt) {
    result.attempts = attempt;
    ChatReply reply;
    try {
      reply = transport.complete(endpoint, messages);
    } catch (const std::exception& e) {
      reply.status = 0;
      reply.error = std::string("transport exception: ") + e.what();
    }
    if (reply.ok()) {
      result.ok = true;
      result.text = std::move(reply.text);
      result.last_error.clear();
      return result;
    }
    result.last_error = reply.error.empty() ? "HTTP " + std::to_string(reply.status) : reply.error;
    if (!is_retryable(reply) || attempt == policy.max_attempts) break;
    auto delay = backoff_delay(policy, attempt, reply.retry_after_seconds, unit(jitter_rng));
    if (sleep) {
      sleep(delay);
    } else {
      std::this_thread::sleep_for(delay);
    }
  }
  return result;
}

nlohmann::json to_json(const ResponseRecord& r) {
  nlohmann::json j = prompts::key_to_json(r.key);
  j["raw_text"] = r.raw_text;
  j["sampling"] = to_json(r.sampling);
  j["timestamp"] = r.timestamp;
  j["attempt_count"] = r.attempt_count;
  j["status"] = r.status == ResponseStatus::ok ? "ok" : "failed";
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

ResponseRecord response_from_json(const nlohmann::json& j) {
  ResponseRecord r;
  r.key = prompts::key_from_json(j);
  std::string status = j.value("status", "");
  if (status == "ok") {
    r.status = ResponseStatus::ok;
  } else if (status == "failed") {
    r.status = ResponseStatus::failed;
  } else {
    throw ParseError("invalid status '" + status + "'");
  }
  if (auto it = j.find("raw_text"); it != j.end() && it->is_string()) {
    r.raw_text = it->get<std::string>();
  } else if (r.status == ResponseStatus::ok) {
    throw ParseError("ok record without raw_text");
  }
  if (auto it = j.find("sampling"); it != j.end()) {
    try {
      r.sampling = sampling_from_json(*it, "sampling");
    } catch (const ConfigError& e) {
      throw ParseError(e.what());
    }
  }
  r.timestamp = j.value("timestamp", "");
  r.attempt_count = j.value("attempt_count", 0);
  r.error = j.value("error", "");
  return r;
}

std::string utc_timestamp() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

ResponseStore::ResponseStore(std::filesystem::path path) : path_(std::move(path)) {}

void ResponseStore::append(const ResponseRecord& record) {
  std::string line = to_json(record).dump() + "\n";
  std::lock_guard lock(mutex_);
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot open response store '" + path_.string() + "' for append");
  out << line;
  out.flush();
  if (!out) throw IoError("failed appending to response store '" + path_.string() + "'");
}

std::vector<ResponseRecord> ResponseStore::load() const {
  std::lock_guard lock(mutex_);
  if (!std::filesystem::exists(path_)) return {};
  std::vector<ResponseRecord> out;
  for (const auto& line : io::read_jsonl(path_)) {
    try {
      out.push_back(response_from_json(line.value));
    } catch (const ParseError& e) {
      throw ParseError(path_.string() + ": corrupt record at byte offset " + std::to_string(line.byte_offset) +
                       " (line " + std::to_string(line.line_number) + "): " + e.what());
    }
  }
  return out;
}

std::vector<ResponseRecord> ResponseStore::resolved() const {
  std::map<prompts::PlanKey, ResponseRecord> best;
  for (auto& r : load()) {
    auto it = best.find(r.key);
    if (it == best.end()) {
      best.emplace(r.key, std::move(r));
    } else if (it->second.status != ResponseStatus::ok) {
      it->second = std::move(r);  // later record wins unless an ok is already held
    }
  }
  std::vector<ResponseRecord> out;
  out.reserve(best.size());
  for (auto& [k, r] : best) out.push_back(std::move(r));
  return out;
}

std::size_t ExecutionSummary::total_ok() const {
  std::size_t n = 0;
  for (const auto& [m, s] : per_model) n += s.ok;
  return n;
}

std::size_t ExecutionSummary::total_failed() const {
  std::size_t n = 0;
  for (const auto& [m, s] : per_model) n += s.failed;
  return n;
}

nlohmann::json ExecutionSummary::to_json() const {
  nlohmann::json models = nlohmann::json::object();
  for (const auto& [m, s] : per_model) models[m] = {{"ok", s.ok}, {"failed", s.failed}, {"skipped", s.skipped}};
  return {{"models", models}, {"ok", total_ok()}, {"failed", total_failed()}};
}

namespace {

// Counting gate for in-flight requests against one endpoint.
class Slots {
 public:
  explicit Slots(int capacity) : free_(std::max(1, capacity)) {}
  void acquire() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return free_ > 0; });
    --free_;
  }
  void release() {
    {
      std::lock_guard lock(mutex_);
      ++free_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  int free_;
};

std::set<prompts::PlanKey> ok_keys(const ResponseStore& store) {
  std::set<prompts::PlanKey> keys;
  for (const auto& r : store.load())
    if (r.status == ResponseStatus::ok) keys.insert(r.key);
  return keys;
}

}  // namespace

ExecutionSummary execute_plan(const prompts::RunPlan& plan, const std::map<std::string, ModelEndpoint>& endpoints,
                              ResponseStore& store, const ExecuteOptions& options) {
  for (const auto& item : plan.items)
    if (!endpoints.count(item.key.model_id))
      throw PreconditionError("execute_plan: no endpoint configured for model '" + item.key.model_id + "'");

  ExecutionSummary summary;
  for (const auto& item : plan.items) summary.per_model[item.key.model_id];

  const auto done = ok_keys(store);
  std::vector<const prompts::PlanItem*> work;
  for (const auto& item : plan.items) {
    if (done.count(item.key)) {
      ++summary.per_model[item.key.model_id].skipped;
    } else {
      work.push_back(&item);
    }
  }

  std::shared_ptr<ChatTransport> transport = options.transport;
  if (!transport) transport = std::make_shared<HttpChatTransport>();

  std::map<std::string, std::unique_ptr<Slots>> slots;
  for (const auto& [id, ep] : endpoints) slots.emplace(id, std::make_unique<Slots>(options.limits.per_endpoint));

  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::mutex summary_mutex;
  std::exception_ptr failure;

  auto worker = [&] {
    while (!abort.load()) {
      std::size_t i = next.fetch_add(1);
      if (i >= work.size()) return;
      const prompts::PlanItem& item = *work[i];
      const ModelEndpoint& ep = endpoints.at(item.key.model_id);
      Slots& gate = *slots.at(item.key.model_id);

      // The per-endpoint slot is held only while a request is on the wire, so
      // backoff sleeps do not block other workers.
      struct GatedTransport : ChatTransport {
        ChatTransport& inner;
        Slots& gate;
        GatedTransport(ChatTransport& i, Slots& g) : inner(i), gate(g) {}
        ChatReply complete(const ModelEndpoint& e, const std::vector<ChatMessage>& m) override {
          gate.acquire();
          struct Release {
            Slots& g;
            ~Release() { g.release(); }
          } release{gate};
          return inner.complete(e, m);
        }
      } gated(*transport, gate);

      CompletionResult res =
          complete_with_retries(gated, ep, messages_for(ep, item.rendered_prompt), options.retry, options.sleep);
      ResponseRecord rec;
      rec.key = item.key;
      rec.raw_text = res.text;
      rec.sampling = ep.sampling;
      rec.timestamp = utc_timestamp();
      rec.attempt_count = res.attempts;
      rec.status = res.ok ? ResponseStatus::ok : ResponseStatus::failed;
      rec.error = res.last_error;
      try {
        store.append(rec);
      } catch (...) {
        std::lock_guard lock(summary_mutex);
        if (!failure) failure = std::current_exception();
        abort = true;
        return;
      }
      std::lock_guard lock(summary_mutex);
      auto& s = summary.per_model[item.key.model_id];
      if (res.ok) {
        ++s.ok;
      } else {
        ++s.failed;
      }
    }
  };

  const int n_threads = std::max(1, std::min<int>(options.limits.global, static_cast<int>(work.size())));
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(n_threads));
  for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
  return summary;
}

prompts::RunPlan resume_plan(const prompts::RunPlan& plan, const ResponseStore& store) {
  const auto done = ok_keys(store);
  prompts::RunPlan remaining;
  for (const auto& item : plan.items)
    if (!done.count(item.key)) remaining.items.push_back(item);
  return remaining;
}

}  // namespace polaudit::gateway

#include "polaudit/mock_chat.hpp"

#include "polaudit/common.hpp"
#include "polaudit/io.hpp"

#include <httplib.h>

#include <chrono>

namespace polaudit::mock {

ChatScript ChatScript::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("mock chat fixture: expected an object");
  ChatScript s;
  for (const auto& r : j.value("rules", nlohmann::json::array())) {
    if (!r.contains("match") || !r.contains("reply")) throw ParseError("mock chat fixture: rule needs 'match' and 'reply'");
    ChatRule rule{r["match"].get<std::string>(), std::nullopt, r["reply"].get<std::string>()};
    if (r.contains("model") && r["model"].is_string()) rule.model = r["model"].get<std::string>();
    s.rules.push_back(std::move(rule));
  }
  if (j.contains("default_reply") && j["default_reply"].is_string()) s.default_reply = j["default_reply"].get<std::string>();
  for (const auto& f : j.value("failures", nlohmann::json::array())) {
    ChatFailure fail;
    fail.match = f.value("match", "");
    fail.status = f.value("status", 503);
    fail.times = f.value("times", 1);
    if (f.contains("retry_after")) {
      fail.retry_after = f["retry_after"].is_string() ? f["retry_after"].get<std::string>() : f["retry_after"].dump();
    }
    s.failures.push_back(std::move(fail));
  }
  s.latency_ms = j.value("latency_ms", 0);
  return s;
}

ChatScript ChatScript::load(const std::filesystem::path& path) {
  try {
    return from_json(nlohmann::json::parse(io::read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

MockChatServer::MockChatServer(ChatScript script)
    : script_(std::move(script)), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

MockChatServer::~MockChatServer() { stop(); }

void MockChatServer::install_routes() {
  server_->Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
    ++requests_;
    int now = ++in_flight_;
    for (int prev = max_in_flight_.load(); now > prev && !max_in_flight_.compare_exchange_weak(prev, now);) {
    }
    struct Leave {
      std::atomic<int>& n;
      ~Leave() { --n; }
    } leave{in_flight_};

    if (script_.latency_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(script_.latency_ms));

    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::parse_error&) {
      res.status = 400;
      res.set_content(R"({"error":{"message":"invalid JSON"}})", "application/json");
      return;
    }
    std::string model = body.value("model", "");
    std::string prompt;
    for (const auto& m : body.value("messages", nlohmann::json::array())) {
      if (!prompt.empty()) prompt += "\n";
      prompt += m.value("content", "");
    }
    {
      std::lock_guard lock(mutex_);
      bodies_.push_back(body);
      for (std::size_t i = 0; i < script_.failures.size(); ++i) {
        const auto& f = script_.failures[i];
        if (prompt.find(f.match) == std::string::npos) continue;
        int& seen = failure_counts_[{i, prompt}];
        if (seen < f.times) {
          ++seen;
          res.status = f.status;
          if (f.retry_after) res.set_header("Retry-After", *f.retry_after);
          res.set_content(R"({"error":{"message":"scripted failure"}})", "application/json");
          return;
        }
      }
    }

    std::optional<std::string> reply;
    for (const auto& rule : script_.rules) {
      if (rule.model && *rule.model != model) continue;
      if (prompt.find(rule.match) != std::string::npos) {
        reply = rule.reply;
        break;
      }
    }
    if (!reply) reply = script_.default_reply;
    if (!reply) {
      res.status = 404;
      res.set_content(R"({"error":{"message":"no scripted reply"}})", "application/json");
      return;
    }
    nlohmann::json out = {
        {"id", "mock-" + std::to_string(requests_.load())},
        {"object", "chat.completion"},
        {"model", model},
        {"choices", {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", *reply}}}, {"finish_reason", "stop"}}}}};
    res.set_content(out.dump(), "application/json");
  });
}

void MockChatServer::start(int port) {
  if (thread_.joinable()) return;
  if (port == 0) {
    port_ = server_->bind_to_any_port("127.0.0.1");
  } else if (server_->bind_to_port("127.0.0.1", port)) {
    port_ = port;
  } else {
    port_ = -1;
  }
  if (port_ <= 0) throw IoError("mock chat server: cannot bind 127.0.0.1:" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void MockChatServer::serve_forever(int port) {
  start(port);
  if (thread_.joinable()) thread_.join();
}

void MockChatServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::string MockChatServer::base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }

std::vector<nlohmann::json> MockChatServer::received_bodies() const {
  std::lock_guard lock(mutex_);
  return bodies_;
}

}  // namespace polaudit::mock

#include "support.hpp"

#include "polaudit/gateway.hpp"
#include "polaudit/io.hpp"
#include "polaudit/mock_chat.hpp"

#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <mutex>

using namespace polaudit;
using namespace testing_support;

namespace {

ModelEndpoint endpoint(const std::string& id, const std::string& url, ModelFamily family = ModelFamily::instruct) {
  nlohmann::json j = {{"model_id", id}, {"base_url", url}, {"family", family == ModelFamily::commercial ? "commercial" : "instruct"}};
  return endpoint_from_json(j, "endpoint");
}

const gateway::SleepFn no_sleep = [](std::chrono::milliseconds) {};

mock::ChatScript echo_script() {
  mock::ChatScript s;
  s.default_reply = "I agree with this statement.";
  return s;
}

/// Fails every request whose prompt contains `needle`.
class FlakyTransport : public gateway::ChatTransport {
 public:
  explicit FlakyTransport(std::string needle) : needle_(std::move(needle)) {}
  gateway::ChatReply complete(const ModelEndpoint&, const std::vector<gateway::ChatMessage>& messages) override {
    gateway::ChatReply r;
    if (!needle_.empty() && messages.back().content.find(needle_) != std::string::npos) {
      r.status = 503;
      r.error = "HTTP 503";
      return r;
    }
    r.status = 200;
    r.text = "I agree.";
    return r;
  }

 private:
  std::string needle_;
};

}  // namespace

TEST_CASE("request body follows the chat-completions schema") {
  auto open = endpoint("llama", "http://127.0.0.1:1");
  auto body = gateway::build_chat_request(open, gateway::messages_for(open, "Prefix.\nStatement."));
  CHECK(body["model"] == "llama");
  CHECK(body["max_tokens"] == 512);
  CHECK(body["top_k"] == 10);
  REQUIRE(body["messages"].size() == 1);
  CHECK(body["messages"][0]["role"] == "user");
  CHECK(body["messages"][0]["content"] == "Prefix.\nStatement.");
  CHECK_FALSE(body.contains("temperature"));

  auto commercial = endpoint("gpt", "http://127.0.0.1:1", ModelFamily::commercial);
  CHECK_FALSE(gateway::build_chat_request(commercial, gateway::messages_for(commercial, "x")).contains("top_k"));

  open.layout = MessageLayout::system_prefix;
  auto msgs = gateway::messages_for(open, "Prefix.\nStatement.");
  REQUIRE(msgs.size() == 2);
  CHECK(msgs[0].role == "system");
  CHECK(msgs[0].content == "Prefix.");
  CHECK(msgs[1].content == "Statement.");
  CHECK(gateway::messages_for(open, "Statement only.").size() == 1);
}

TEST_CASE("endpoint config rejects inline secrets and bad values") {
  nlohmann::json j = {{"model_id", "m"}, {"base_url", "http://x"}, {"api_key", "sk-123"}};
  CHECK_THROWS_AS(endpoint_from_json(j, "endpoints[0]"), ConfigError);
  CHECK_THROWS_AS(endpoint_from_json({{"model_id", "m"}, {"base_url", "ftp://x"}}, "e"), ConfigError);
  CHECK_THROWS_AS(endpoint_from_json({{"base_url", "http://x"}}, "e"), ConfigError);
  try {
    endpoint_from_json({{"model_id", "m"}, {"base_url", "http://x"}, {"sampling", {{"mode", "greedy"}}}}, "endpoints[3]");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("endpoints[3].sampling") != std::string::npos);
  }
}

TEST_CASE("split_base_url separates origin and path prefix") {
  CHECK(gateway::split_base_url("http://h:8000") == std::pair<std::string, std::string>{"http://h:8000", ""});
  CHECK(gateway::split_base_url("https://api.x.com/openai/") ==
        std::pair<std::string, std::string>{"https://api.x.com", "/openai"});
}

TEST_CASE("retry classification and backoff") {
  gateway::ChatReply r;
  r.status = 0;
  CHECK(gateway::is_retryable(r));
  for (int s : {408, 409, 429, 500, 502, 503}) {
    r.status = s;
    CHECK(gateway::is_retryable(r));
  }
  for (int s : {400, 401, 403, 404, 422}) {
    r.status = s;
    CHECK_FALSE(gateway::is_retryable(r));
  }
  r.status = 200;
  r.error = "malformed completion body";
  CHECK(gateway::is_retryable(r));

  gateway::RetryPolicy p;
  CHECK(gateway::backoff_delay(p, 1, std::nullopt, 0.0).count() == 500);
  CHECK(gateway::backoff_delay(p, 3, std::nullopt, 0.0).count() == 2000);
  CHECK(gateway::backoff_delay(p, 3, std::nullopt, 1.0).count() == 1000);
  CHECK(gateway::backoff_delay(p, 20, std::nullopt, 0.0).count() == 30000);
  CHECK(gateway::backoff_delay(p, 1, 7.0, 0.0).count() == 7000);
}

TEST_CASE("transient failures are retried and honour Retry-After") {
  mock::ChatScript s = echo_script();
  s.failures.push_back({"flaky", 429, 2, std::string("0.25")});
  s.failures.push_back({"broken", 400, 100, std::nullopt});
  s.failures.push_back({"down", 503, 100, std::nullopt});
  mock::MockChatServer server(s);
  server.start();
  auto e = endpoint("m", server.base_url());
  gateway::HttpChatTransport transport;
  std::vector<std::chrono::milliseconds> sleeps;
  gateway::SleepFn record = [&](std::chrono::milliseconds d) { sleeps.push_back(d); };

  auto ok = gateway::complete_with_retries(transport, e, {{"user", "flaky prompt"}}, {}, record);
  CHECK(ok.ok);
  CHECK(ok.attempts == 3);
  CHECK(ok.text == "I agree with this statement.");
  REQUIRE(sleeps.size() == 2);
  CHECK(sleeps[0].count() == 250);

  auto bad = gateway::complete_with_retries(transport, e, {{"user", "broken prompt"}}, {}, no_sleep);
  CHECK_FALSE(bad.ok);
  CHECK(bad.attempts == 1);
  CHECK(bad.last_error.find("400") != std::string::npos);

  auto down = gateway::complete_with_retries(transport, e, {{"user", "down prompt"}}, {}, no_sleep);
  CHECK_FALSE(down.ok);
  CHECK(down.attempts == 5);
}

TEST_CASE("unreachable endpoint is a retryable transport failure") {
  gateway::HttpChatTransport transport(std::chrono::seconds(1));
  gateway::RetryPolicy p;
  p.max_attempts = 2;
  auto r = gateway::complete_with_retries(transport, endpoint("m", "http://127.0.0.1:9"), {{"user", "x"}}, p, no_sleep);
  CHECK_FALSE(r.ok);
  CHECK(r.attempts == 2);
}

TEST_CASE("bearer token comes from the named environment variable") {
  mock::MockChatServer server(echo_script());
  server.start();
  auto e = endpoint("m", server.base_url());
  e.auth_ref = "POLAUDIT_TEST_TOKEN_UNSET";
  ::unsetenv("POLAUDIT_TEST_TOKEN_UNSET");
  gateway::HttpChatTransport transport;
  auto r = transport.complete(e, {{"user", "x"}});
  CHECK_FALSE(r.ok());
  CHECK(r.error.find("POLAUDIT_TEST_TOKEN_UNSET") != std::string::npos);
  CHECK(server.request_count() == 0);
  ::setenv("POLAUDIT_TEST_TOKEN_SET", "secret", 1);
  e.auth_ref = "POLAUDIT_TEST_TOKEN_SET";
  CHECK(transport.complete(e, {{"user", "x"}}).ok());
}

TEST_CASE("response store round-trips and pinpoints corruption") {
  TempDir tmp;
  gateway::ResponseStore store(tmp / "r.jsonl");
  CHECK(store.load().empty());
  gateway::ResponseRecord a;
  a.key = {"p1", "likert", "m", 0};
  a.raw_text = "4";
  a.status = gateway::ResponseStatus::failed;
  a.error = "HTTP 503";
  store.append(a);
  a.status = gateway::ResponseStatus::ok;
  a.error.clear();
  store.append(a);
  a.status = gateway::ResponseStatus::failed;
  store.append(a);  // a later failure never shadows an ok record
  auto resolved = store.resolved();
  REQUIRE(resolved.size() == 1);
  CHECK(resolved[0].status == gateway::ResponseStatus::ok);

  const auto good_size = std::filesystem::file_size(tmp / "r.jsonl");
  {
    std::ofstream out(tmp / "r.jsonl", std::ios::app);
    out << "{\"proposition_id\":\"p2\",\"prefix_key\":";  // truncated write
  }
  try {
    store.load();
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("byte offset " + std::to_string(good_size)) != std::string::npos);
  }
}

TEST_CASE("execution respects per-endpoint concurrency and resumes without duplicates") {
  auto c = corpus::load_corpus(fixture_path("e2e/corpus.jsonl"));
  auto prefixes = prompts::load_prefix_registry(data_path("prefixes.json"));
  mock::ChatScript s = echo_script();
  s.latency_ms = 15;
  mock::MockChatServer server(s);
  server.start();
  std::vector<ModelEndpoint> eps = {endpoint("a", server.base_url()), endpoint("b", server.base_url())};
  auto plan = prompts::build_plan(c, std::span(prefixes).first(2), eps, 1);
  REQUIRE(plan.size() == 48);
  std::map<std::string, ModelEndpoint> by_id{{"a", eps[0]}, {"b", eps[1]}};

  TempDir tmp;
  gateway::ResponseStore store(tmp / "responses.jsonl");
  gateway::ExecuteOptions opts;
  opts.limits = {8, 2};
  opts.sleep = no_sleep;

  SUBCASE("bounded in-flight requests") {
    auto summary = gateway::execute_plan(plan, by_id, store, opts);
    CHECK(summary.total_ok() == 48);
    CHECK(server.max_in_flight() <= 4);  // two endpoints x two slots
    CHECK(server.max_in_flight() >= 2);
  }

  SUBCASE("interrupted run resumes to the same key set") {
    opts.limits = {4, 4};
    opts.transport = std::make_shared<FlakyTransport>("Incomes");
    opts.retry.max_attempts = 2;
    auto first = gateway::execute_plan(plan, by_id, store, opts);
    CHECK(first.total_failed() == 2 * 2);  // one statement x two prefixes x two models
    auto remaining = gateway::resume_plan(plan, store);
    CHECK(remaining.size() == 4);

    opts.transport = std::make_shared<FlakyTransport>("");
    auto second = gateway::execute_plan(plan, by_id, store, opts);
    CHECK(second.total_ok() == 4);
    CHECK(second.per_model["a"].skipped == 22);
    CHECK(gateway::resume_plan(plan, store).empty());

    std::set<prompts::PlanKey> ok_keys;
    std::size_t ok_records = 0;
    for (const auto& r : store.load())
      if (r.status == gateway::ResponseStatus::ok) {
        ok_keys.insert(r.key);
        ++ok_records;
      }
    CHECK(ok_records == 48);
    CHECK(ok_keys.size() == 48);
    auto third = gateway::execute_plan(plan, by_id, store, opts);
    CHECK(third.total_ok() == 0);
  }
}

TEST_CASE("execution refuses plans for unknown models") {
  auto c = corpus::load_corpus(fixture_path("e2e/corpus.jsonl"));
  auto prefixes = prompts::load_prefix_registry(data_path("prefixes.json"));
  std::vector<ModelEndpoint> eps = {endpoint("a", "http://127.0.0.1:1")};
  auto plan = prompts::build_plan(c, prefixes, eps, 1);
  TempDir tmp;
  gateway::ResponseStore store(tmp / "r.jsonl");
  CHECK_THROWS_AS(gateway::execute_plan(plan, {}, store, {}), PreconditionError);
}

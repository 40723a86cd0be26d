#pragma once

#include <nlohmann/json.hpp>

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace httplib {
class Server;
}

namespace polaudit::mock {

// Fixture format:
// {
//   "rules":    [{"match": "<substring>", "model": "<optional model id>", "reply": "<text>"}, ...],
//   "default_reply": "<text>",
//   "failures": [{"match": "<substring>", "status": 429, "times": 2, "retry_after": "0"}],
//   "latency_ms": 0
// }
// The first rule whose substring occurs in the concatenated message contents
// (and whose model matches, when given) supplies the reply. A failure entry
// answers the first `times` requests for each distinct prompt it matches with
// the given status.
struct ChatRule {
  std::string match;
  std::optional<std::string> model;
  std::string reply;
};

struct ChatFailure {
  std::string match;
  int status = 503;
  int times = 1;
  std::optional<std::string> retry_after;
};

struct ChatScript {
  std::vector<ChatRule> rules;
  std::optional<std::string> default_reply;
  std::vector<ChatFailure> failures;
  int latency_ms = 0;

  static ChatScript from_json(const nlohmann::json& j);
  static ChatScript load(const std::filesystem::path& path);
};

/// Loopback OpenAI-compatible chat server driven by a ChatScript.
class MockChatServer {
 public:
  explicit MockChatServer(ChatScript script);
  ~MockChatServer();
  MockChatServer(const MockChatServer&) = delete;
  MockChatServer& operator=(const MockChatServer&) = delete;

  // Binds 127.0.0.1 on `port` (0 picks a free port) and serves on a
  // background thread.
  void start(int port = 0);
  void stop();
  // Blocks until stop() is called from another thread or a signal handler.
  void serve_forever(int port);

  int port() const { return port_; }
  std::string base_url() const;

  std::size_t request_count() const { return requests_.load(); }
  int max_in_flight() const { return max_in_flight_.load(); }
  std::vector<nlohmann::json> received_bodies() const;

 private:
  void install_routes();

  ChatScript script_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<std::size_t> requests_{0};
  std::atomic<int> in_flight_{0};
  std::atomic<int> max_in_flight_{0};
  mutable std::mutex mutex_;
  std::map<std::pair<std::size_t, std::string>, int> failure_counts_;
  std::vector<nlohmann::json> bodies_;
};

}  // namespace polaudit::mock

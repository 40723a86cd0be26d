#pragma once

#include "polaudit/stance.hpp"

#include <atomic>
#include <memory>
#include <string>
#include <thread>

namespace httplib {
class Server;
}

namespace polaudit::mock {

/// Loopback server speaking the stance service's HTTP contract
/// (/v1/classify, /v1/classify_batch, /health) on top of any backend.
class MockStanceServer {
 public:
  explicit MockStanceServer(std::shared_ptr<stance::ClassifierBackend> backend);
  ~MockStanceServer();
  MockStanceServer(const MockStanceServer&) = delete;
  MockStanceServer& operator=(const MockStanceServer&) = delete;

  void start(int port = 0);  // 0 picks a free port
  void stop();
  void serve_forever(int port);

  int port() const { return port_; }
  std::string base_url() const;
  std::size_t request_count() const { return requests_.load(); }

 private:
  void install_routes();

  std::shared_ptr<stance::ClassifierBackend> backend_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<std::size_t> requests_{0};
};

}  // namespace polaudit::mock

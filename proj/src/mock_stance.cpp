#include "polaudit/mock_stance.hpp"

#include <httplib.h>

namespace polaudit::mock {

namespace {

// Returns an error message, or empty when the request is valid.
std::string check_request(const nlohmann::json& r) {
  if (!r.is_object()) return "expected an object";
  for (const char* field : {"response_text", "statement_text"}) {
    if (!r.contains(field) || !r[field].is_string()) return std::string(field) + " must be a string";
    if (r[field].get<std::string>().empty()) return std::string(field) + " must be non-empty";
  }
  return {};
}

void reply_error(httplib::Response& res, int status, const std::string& message) {
  res.status = status;
  res.set_content(nlohmann::json{{"detail", message}}.dump(), "application/json");
}

}  // namespace

MockStanceServer::MockStanceServer(std::shared_ptr<stance::ClassifierBackend> backend)
    : backend_(std::move(backend)), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

MockStanceServer::~MockStanceServer() { stop(); }

void MockStanceServer::install_routes() {
  server_->Get("/health", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"status":"ok","checkpoint":"keyword-mock","mode":"zero_shot"})", "application/json");
  });

  server_->Post("/v1/classify", [this](const httplib::Request& req, httplib::Response& res) {
    ++requests_;
    nlohmann::json body = nlohmann::json::parse(req.body, nullptr, false);
    if (auto err = check_request(body); !err.empty()) return reply_error(res, 422, err);
    auto c = backend_->classify(body["response_text"].get<std::string>(), body["statement_text"].get<std::string>());
    res.set_content(stance::to_json(c).dump(), "application/json");
  });

  server_->Post("/v1/classify_batch", [this](const httplib::Request& req, httplib::Response& res) {
    ++requests_;
    nlohmann::json body = nlohmann::json::parse(req.body, nullptr, false);
    const nlohmann::json* items = &body;
    if (body.is_object() && body.contains("requests")) items = &body["requests"];
    if (!items->is_array()) return reply_error(res, 422, "expected a list of requests");
    for (std::size_t i = 0; i < items->size(); ++i)
      if (auto err = check_request((*items)[i]); !err.empty())
        return reply_error(res, 422, "request " + std::to_string(i) + ": " + err);
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : *items)
      out.push_back(stance::to_json(
          backend_->classify(r["response_text"].get<std::string>(), r["statement_text"].get<std::string>())));
    res.set_content(out.dump(), "application/json");
  });
}

void MockStanceServer::start(int port) {
  if (thread_.joinable()) return;
  if (port == 0) {
    port_ = server_->bind_to_any_port("127.0.0.1");
  } else if (server_->bind_to_port("127.0.0.1", port)) {
    port_ = port;
  } else {
    port_ = -1;
  }
  if (port_ <= 0) throw IoError("mock stance server: cannot bind 127.0.0.1:" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void MockStanceServer::serve_forever(int port) {
  start(port);
  if (thread_.joinable()) thread_.join();
}

void MockStanceServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::string MockStanceServer::base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }

}  // namespace polaudit::mock

#pragma once

#include "polaudit/endpoint.hpp"
#include "polaudit/prompts.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace polaudit::gateway {

struct ChatMessage {
  std::string role;
  std::string content;
};

/// Outcome of a single HTTP exchange. status == 0 means the request never got
/// an HTTP response (connection refused, timeout, ...).
struct ChatReply {
  int status = 0;
  std::string text;
  std::optional<double> retry_after_seconds;
  std::string error;

  bool ok() const { return status == 200 && error.empty(); }
};

std::vector<ChatMessage> messages_for(const ModelEndpoint& endpoint, const std::string& rendered_prompt);
nlohmann::json build_chat_request(const ModelEndpoint& endpoint, const std::vector<ChatMessage>& messages);

/// Splits "https://host:port/prefix" into the origin and a path prefix without
/// trailing slash.
std::pair<std::string, std::string> split_base_url(const std::string& base_url);

class ChatTransport {
 public:
  virtual ~ChatTransport() = default;
  // Must be safe to call concurrently.
  virtual ChatReply complete(const ModelEndpoint& endpoint, const std::vector<ChatMessage>& messages) = 0;
};

/// OpenAI-compatible POST {base_url}/v1/chat/completions. The bearer token is
/// read from the environment variable named by the endpoint's auth_ref.
class HttpChatTransport : public ChatTransport {
 public:
  explicit HttpChatTransport(std::chrono::seconds timeout = std::chrono::seconds(120)) : timeout_(timeout) {}
  ChatReply complete(const ModelEndpoint& endpoint, const std::vector<ChatMessage>& messages) override;

 private:
  std::chrono::seconds timeout_;
};

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds base_delay{500};
  std::chrono::milliseconds max_delay{30000};
  double jitter = 0.5;  // delay scaled by a factor drawn from [1 - jitter, 1]
};

bool is_retryable(const ChatReply& reply);
std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int failed_attempts,
                                        std::optional<double> retry_after_seconds, double unit_random);

struct CompletionResult {
  bool ok = false;
  std::string text;
  int attempts = 0;
  std::string last_error;
};

using SleepFn = std::function<void(std::chrono::milliseconds)>;

// Never throws for HTTP or transport failures; they end up in last_error.
CompletionResult complete_with_retries(ChatTransport& transport, const ModelEndpoint& endpoint,
                                       const std::vector<ChatMessage>& messages, const RetryPolicy& policy,
                                       const SleepFn& sleep = {});

enum class ResponseStatus { ok, failed };

struct ResponseRecord {
  prompts::PlanKey key;
  std::string raw_text;
  SamplingConfig sampling;
  std::string timestamp;  // ISO-8601 UTC
  int attempt_count = 0;
  ResponseStatus status = ResponseStatus::ok;
  std::string error;
};

nlohmann::json to_json(const ResponseRecord& r);
ResponseRecord response_from_json(const nlohmann::json& j);  // throws ParseError
std::string utc_timestamp();

/// Append-only JSON Lines store. Appends are serialized through one mutex;
/// reads parse the whole file.
class ResponseStore {
 public:
  explicit ResponseStore(std::filesystem::path path);

  const std::filesystem::path& path() const { return path_; }
  void append(const ResponseRecord& record);  // throws IoError

  // Throws ParseError naming the byte offset of a corrupt line. A missing file
  // reads as empty.
  std::vector<ResponseRecord> load() const;

  /// One record per key: the ok record when one exists, else the latest
  /// failure. Sorted by plan key so analysis is independent of arrival order.
  std::vector<ResponseRecord> resolved() const;

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
};

struct ConcurrencyLimits {
  int global = 8;
  int per_endpoint = 4;
};

struct ModelSummary {
  std::size_t ok = 0;
  std::size_t failed = 0;
  std::size_t skipped = 0;  // already ok in the store before this run
};

struct ExecutionSummary {
  std::map<std::string, ModelSummary> per_model;
  std::size_t total_ok() const;
  std::size_t total_failed() const;
  nlohmann::json to_json() const;
};

struct ExecuteOptions {
  ConcurrencyLimits limits;
  RetryPolicy retry;
  std::shared_ptr<ChatTransport> transport;  // defaults to HttpChatTransport
  SleepFn sleep;                             // defaults to std::this_thread::sleep_for
};

// Items that already have an ok record in the store are skipped, so re-running
// after an interruption never duplicates an ok key. Throws PreconditionError if
// a plan model has no endpoint and IoError if the store cannot be written.
ExecutionSummary execute_plan(const prompts::RunPlan& plan, const std::map<std::string, ModelEndpoint>& endpoints,
                              ResponseStore& store, const ExecuteOptions& options);

/// The plan items without an ok record, in plan order.
prompts::RunPlan resume_plan(const prompts::RunPlan& plan, const ResponseStore& store);

}  // namespace polaudit::gateway

#pragma once

#include <nlohmann/json.hpp>

#include <optional>
#include <string>

namespace polaudit {

enum class SamplingMode { top_k, provider_default };
enum class ModelFamily { instruct, base, commercial };

// How a rendered prompt is mapped onto chat messages.
enum class MessageLayout {
  single_user,    // prefix + "\n" + statement as one user message
  system_prefix,  // prefix as system message, statement as user message
};

struct SamplingConfig {
  SamplingMode mode = SamplingMode::provider_default;
  std::optional<int> top_k;
  int max_tokens = 512;
  std::optional<double> temperature;

  bool operator==(const SamplingConfig&) const = default;

  /// Sampling used for open-weight models: next token drawn from the top 10.
  static SamplingConfig open_model_default();
  /// Deterministic decoding used for corpus construction.
  static SamplingConfig deterministic();
};

struct ModelEndpoint {
  std::string model_id;
  std::string display_name;  // substituted into the "name" prefix; defaults to model_id
  std::string base_url;
  std::string auth_ref;  // name of the environment variable holding the bearer token; may be empty
  SamplingConfig sampling;
  ModelFamily family = ModelFamily::instruct;
  MessageLayout layout = MessageLayout::single_user;

  const std::string& name_for_prompt() const { return display_name.empty() ? model_id : display_name; }
};

nlohmann::json to_json(const SamplingConfig& s);
nlohmann::json to_json(const ModelEndpoint& e);

// `path` prefixes error messages with a field path such as "endpoints[2]".
// Throws ConfigError.
SamplingConfig sampling_from_json(const nlohmann::json& j, const std::string& path);
ModelEndpoint endpoint_from_json(const nlohmann::json& j, const std::string& path);

}  // namespace polaudit

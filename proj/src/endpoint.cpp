#include "polaudit/endpoint.hpp"

#include "polaudit/common.hpp"

namespace polaudit {

SamplingConfig SamplingConfig::open_model_default() {
  SamplingConfig s;
  s.mode = SamplingMode::top_k;
  s.top_k = 10;
  return s;
}

SamplingConfig SamplingConfig::deterministic() {
  SamplingConfig s;
  s.mode = SamplingMode::provider_default;
  s.temperature = 0.0;
  return s;
}

nlohmann::json to_json(const SamplingConfig& s) {
  nlohmann::json j = {{"mode", s.mode == SamplingMode::top_k ? "top_k" : "provider_default"},
                      {"max_tokens", s.max_tokens}};
  j["top_k"] = s.top_k ? nlohmann::json(*s.top_k) : nlohmann::json(nullptr);
  j["temperature"] = s.temperature ? nlohmann::json(*s.temperature) : nlohmann::json(nullptr);
  return j;
}

namespace {

const char* family_name(ModelFamily f) {
  switch (f) {
    case ModelFamily::instruct: return "instruct";
    case ModelFamily::base: return "base";
    case ModelFamily::commercial: return "commercial";
  }
  return "instruct";
}

std::string required_string(const nlohmann::json& j, const char* key, const std::string& path) {
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(path + "." + key + ": required field missing");
  if (!it->is_string() || it->get<std::string>().empty())
    throw ConfigError(path + "." + key + ": must be a non-empty string");
  return it->get<std::string>();
}

std::string optional_string(const nlohmann::json& j, const char* key, const std::string& path) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return {};
  if (!it->is_string()) throw ConfigError(path + "." + key + ": must be a string");
  return it->get<std::string>();
}

}  // namespace

nlohmann::json to_json(const ModelEndpoint& e) {
  return {{"model_id", e.model_id},
          {"display_name", e.name_for_prompt()},
          {"base_url", e.base_url},
          {"auth_ref", e.auth_ref},
          {"sampling", to_json(e.sampling)},
          {"family", family_name(e.family)},
          {"layout", e.layout == MessageLayout::single_user ? "single_user" : "system_prefix"}};
}

SamplingConfig sampling_from_json(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path + ": must be an object");
  SamplingConfig s;
  std::string mode = optional_string(j, "mode", path);
  if (mode == "top_k") {
    s.mode = SamplingMode::top_k;
  } else if (mode.empty() || mode == "provider_default") {
    s.mode = SamplingMode::provider_default;
  } else {
    throw ConfigError(path + ".mode: expected 'top_k' or 'provider_default', got '" + mode + "'");
  }
  if (auto it = j.find("top_k"); it != j.end() && !it->is_null()) {
    if (!it->is_number_integer()) throw ConfigError(path + ".top_k: must be an integer");
    s.top_k = it->get<int>();
  }
  if (s.mode == SamplingMode::top_k) {
    if (!s.top_k) s.top_k = 10;
    if (*s.top_k < 1) throw ConfigError(path + ".top_k: must be >= 1 when mode is top_k");
  }
  if (auto it = j.find("max_tokens"); it != j.end() && !it->is_null()) {
    if (!it->is_number_integer() || it->get<int>() < 1) throw ConfigError(path + ".max_tokens: must be a positive integer");
    s.max_tokens = it->get<int>();
  }
  if (auto it = j.find("temperature"); it != j.end() && !it->is_null()) {
    if (!it->is_number() || it->get<double>() < 0) throw ConfigError(path + ".temperature: must be a number >= 0");
    s.temperature = it->get<double>();
  }
  return s;
}

ModelEndpoint endpoint_from_json(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path + ": must be an object");
  ModelEndpoint e;
  e.model_id = required_string(j, "model_id", path);
  e.display_name = optional_string(j, "display_name", path);
  e.base_url = required_string(j, "base_url", path);
  if (e.base_url.rfind("http://", 0) != 0 && e.base_url.rfind("https://", 0) != 0)
    throw ConfigError(path + ".base_url: must start with http:// or https://");
  e.auth_ref = optional_string(j, "auth_ref", path);
  if (j.contains("api_key") || j.contains("token"))
    throw ConfigError(path + ": inline secrets are not allowed; set auth_ref to an environment variable name");

  std::string family = optional_string(j, "family", path);
  if (family.empty() || family == "instruct") {
    e.family = ModelFamily::instruct;
  } else if (family == "base") {
    e.family = ModelFamily::base;
  } else if (family == "commercial") {
    e.family = ModelFamily::commercial;
  } else {
    throw ConfigError(path + ".family: expected instruct, base or commercial, got '" + family + "'");
  }

  if (auto it = j.find("sampling"); it != j.end()) {
    e.sampling = sampling_from_json(*it, path + ".sampling");
  } else {
    // Open-weight models sample from the top 10 tokens; commercial APIs use
    // provider defaults.
    e.sampling = e.family == ModelFamily::commercial ? SamplingConfig{} : SamplingConfig::open_model_default();
  }

  std::string layout = optional_string(j, "layout", path);
  if (layout.empty() || layout == "single_user") {
    e.layout = MessageLayout::single_user;
  } else if (layout == "system_prefix") {
    e.layout = MessageLayout::system_prefix;
  } else {
    throw ConfigError(path + ".layout: expected single_user or system_prefix, got '" + layout + "'");
  }
  return e;
}

}  // namespace polaudit

#include "polaudit/pipeline.hpp"

#include "polaudit/corpus.hpp"
#include "polaudit/io.hpp"
#include "polaudit/prompts.hpp"

#include <set>

namespace polaudit::pipeline {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& j, const std::string& path, std::initializer_list<std::string_view> known) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto k : known) ok = ok || key == k;
    if (!ok) throw ConfigError((path.empty() ? key : path + "." + key) + ": unknown field");
  }
}

const json* field(const json& j, const char* key) {
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

fs::path path_field(const json& j, const char* key, const fs::path& base, bool required) {
  const json* v = field(j, key);
  if (!v) {
    if (required) throw ConfigError(std::string(key) + ": required field missing");
    return {};
  }
  if (!v->is_string() || v->get<std::string>().empty()) throw ConfigError(std::string(key) + ": must be a non-empty path");
  fs::path p = v->get<std::string>();
  return p.is_absolute() ? p : (base / p).lexically_normal();
}

int int_field(const json& j, const char* key, const std::string& path, int fallback) {
  const json* v = field(j, key);
  if (!v) return fallback;
  if (!v->is_number_integer()) throw ConfigError(path + "." + key + ": must be an integer");
  return v->get<int>();
}

double number_field(const json& j, const char* key, const std::string& path, double fallback) {
  const json* v = field(j, key);
  if (!v) return fallback;
  if (!v->is_number()) throw ConfigError(path + "." + key + ": must be a number");
  return v->get<double>();
}

const json& object_field(const json& j, const char* key) {
  static const json empty = json::object();
  const json* v = field(j, key);
  if (!v) return empty;
  if (!v->is_object()) throw ConfigError(std::string(key) + ": must be an object");
  return *v;
}

}  // namespace

AuditConfig config_from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ConfigError("config: expected an object");
  reject_unknown_keys(j, "", {"corpus_path", "prefix_registry_path", "endpoints", "runs", "stance", "bootstrap", "limits",
                              "retry", "output_dir", "report"});
  AuditConfig c;
  c.corpus_path = path_field(j, "corpus_path", base_dir, true);
  c.prefix_registry_path = path_field(j, "prefix_registry_path", base_dir, true);
  c.output_dir = path_field(j, "output_dir", base_dir, true);
  c.runs = int_field(j, "runs", "config", c.runs);

  const json* eps = field(j, "endpoints");
  if (!eps || !eps->is_array()) throw ConfigError("endpoints: must be an array");
  for (std::size_t i = 0; i < eps->size(); ++i)
    c.endpoints.push_back(endpoint_from_json((*eps)[i], "endpoints[" + std::to_string(i) + "]"));

  const json& st = object_field(j, "stance");
  reject_unknown_keys(st, "stance", {"backend_url", "confidence_threshold", "likert_prefixes", "concurrency"});
  if (const json* v = field(st, "backend_url")) {
    if (!v->is_string()) throw ConfigError("stance.backend_url: must be a string");
    c.stance.backend_url = v->get<std::string>();
  }
  c.stance.confidence_threshold = number_field(st, "confidence_threshold", "stance", c.stance.confidence_threshold);
  c.stance.concurrency = int_field(st, "concurrency", "stance", c.stance.concurrency);
  if (const json* v = field(st, "likert_prefixes")) {
    if (!v->is_array()) throw ConfigError("stance.likert_prefixes: must be an array of prefix keys");
    c.stance.likert_prefixes.clear();
    for (const auto& k : *v) {
      if (!k.is_string()) throw ConfigError("stance.likert_prefixes: must be an array of prefix keys");
      c.stance.likert_prefixes.insert(k.get<std::string>());
    }
  }

  const json& bs = object_field(j, "bootstrap");
  reject_unknown_keys(bs, "bootstrap", {"iterations", "level", "seed", "threads"});
  c.bootstrap.iterations = int_field(bs, "iterations", "bootstrap", c.bootstrap.iterations);
  c.bootstrap.level = number_field(bs, "level", "bootstrap", c.bootstrap.level);
  c.bootstrap.threads = int_field(bs, "threads", "bootstrap", c.bootstrap.threads);
  if (const json* v = field(bs, "seed")) {
    if (!v->is_number_unsigned()) throw ConfigError("bootstrap.seed: must be a non-negative integer");
    c.bootstrap.seed = v->get<std::uint64_t>();
  }

  const json& lim = object_field(j, "limits");
  reject_unknown_keys(lim, "limits", {"global", "per_endpoint"});
  c.limits.global = int_field(lim, "global", "limits", c.limits.global);
  c.limits.per_endpoint = int_field(lim, "per_endpoint", "limits", c.limits.per_endpoint);

  const json& rt = object_field(j, "retry");
  reject_unknown_keys(rt, "retry", {"max_attempts", "base_delay_ms", "max_delay_ms", "jitter"});
  c.retry.max_attempts = int_field(rt, "max_attempts", "retry", c.retry.max_attempts);
  c.retry.base_delay = std::chrono::milliseconds(int_field(rt, "base_delay_ms", "retry", int(c.retry.base_delay.count())));
  c.retry.max_delay = std::chrono::milliseconds(int_field(rt, "max_delay_ms", "retry", int(c.retry.max_delay.count())));
  c.retry.jitter = number_field(rt, "jitter", "retry", c.retry.jitter);

  const json& rep = object_field(j, "report");
  reject_unknown_keys(rep, "report", {"formats"});
  if (const json* v = field(rep, "formats")) {
    if (!v->is_array()) throw ConfigError("report.formats: must be an array");
    c.report_formats.clear();
    for (const auto& f : *v) {
      auto fmt = f.is_string() ? report::parse_format(f.get<std::string>()) : std::nullopt;
      if (!fmt) throw ConfigError("report.formats: expected 'csv' or 'json'");
      c.report_formats.push_back(*fmt);
    }
  }
  validate_config(c);
  return c;
}

AuditConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw MissingArtifactError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j, fs::absolute(path).parent_path());
}

void validate_config(const AuditConfig& c) {
  if (c.runs < 1) throw ConfigError("runs: must be >= 1");
  if (!(c.stance.confidence_threshold >= 0.0 && c.stance.confidence_threshold <= 1.0))
    throw ConfigError("stance.confidence_threshold: must lie in [0, 1]");
  if (c.stance.concurrency < 1) throw ConfigError("stance.concurrency: must be >= 1");
  if (c.bootstrap.iterations < 1) throw ConfigError("bootstrap.iterations: must be >= 1");
  if (!(c.bootstrap.level > 0.0 && c.bootstrap.level < 1.0)) throw ConfigError("bootstrap.level: must lie in (0, 1)");
  if (c.bootstrap.threads < 1) throw ConfigError("bootstrap.threads: must be >= 1");
  if (c.limits.global < 1) throw ConfigError("limits.global: must be >= 1");
  if (c.limits.per_endpoint < 1) throw ConfigError("limits.per_endpoint: must be >= 1");
  if (c.retry.max_attempts < 1) throw ConfigError("retry.max_attempts: must be >= 1");
  if (c.retry.jitter < 0.0 || c.retry.jitter > 1.0) throw ConfigError("retry.jitter: must lie in [0, 1]");
  if (c.report_formats.empty()) throw ConfigError("report.formats: must name at least one format");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < c.endpoints.size(); ++i)
    if (!ids.insert(c.endpoints[i].model_id).second)
      throw ConfigError("endpoints[" + std::to_string(i) + "].model_id: duplicate id '" + c.endpoints[i].model_id + "'");
}

ArtifactPaths ArtifactPaths::under(const fs::path& dir) {
  return {dir / "plan.jsonl", dir / "responses.jsonl", dir / "stances.jsonl",
          dir / "exclusions.json", dir / "bias.json",   dir / "report"};
}

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::plan: return "plan";
    case Stage::execute: return "execute";
    case Stage::stance: return "stance";
    case Stage::bias: return "bias";
    case Stage::report: return "report";
  }
  return "?";
}

std::optional<Stage> parse_stage(std::string_view s) {
  for (auto st : kAllStages)
    if (to_string(st) == s) return st;
  return std::nullopt;
}

std::shared_ptr<stance::ClassifierBackend> make_backend(const StanceSettings& settings) {
  if (settings.backend_url == kKeywordBackend) return std::make_shared<stance::KeywordBackend>();
  if (settings.backend_url.empty()) throw ConfigError("stance.backend_url: required for the stance stage");
  return std::make_shared<stance::HttpClassifierBackend>(settings.backend_url);
}

namespace {

void require(const fs::path& p, std::string_view what) {
  if (!fs::exists(p))
    throw MissingArtifactError(std::string(what) + " not found at " + p.string() + "; run the upstream stage first");
}

corpus::Corpus corpus_of(const AuditConfig& c) {
  require(c.corpus_path, "corpus");
  return corpus::load_corpus(c.corpus_path);
}

std::vector<prompts::PrefixSpec> prefixes_of(const AuditConfig& c) {
  require(c.prefix_registry_path, "prefix registry");
  return prompts::load_prefix_registry(c.prefix_registry_path);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

}  // namespace

prompts::RunPlan stage_plan(const AuditConfig& c) {
  const auto corpus = corpus_of(c);
  const auto prefixes = prefixes_of(c);
  auto plan = prompts::build_plan(corpus, prefixes, c.endpoints, c.runs);
  ensure_dir(c.output_dir);
  io::write_atomic(ArtifactPaths::under(c.output_dir).plan, prompts::serialize_plan(plan));
  return plan;
}

gateway::ExecutionSummary stage_execute(const AuditConfig& c, const PipelineHooks& hooks) {
  const auto paths = ArtifactPaths::under(c.output_dir);
  require(paths.plan, "plan artifact");
  const auto plan = prompts::load_plan(paths.plan);
  std::map<std::string, ModelEndpoint> endpoints;
  for (const auto& e : c.endpoints) endpoints.emplace(e.model_id, e);
  gateway::ResponseStore store(paths.responses);
  gateway::ExecuteOptions opts;
  opts.limits = c.limits;
  opts.retry = c.retry;
  opts.transport = hooks.transport;
  opts.sleep = hooks.sleep;
  return gateway::execute_plan(plan, endpoints, store, opts);
}

stance::ExclusionReport stage_stance(const AuditConfig& c, const PipelineHooks& hooks) {
  const auto paths = ArtifactPaths::under(c.output_dir);
  require(paths.responses, "response store");
  const auto corpus = corpus_of(c);
  const auto responses = gateway::ResponseStore(paths.responses).resolved();
  auto backend = hooks.classifier ? hooks.classifier : make_backend(c.stance);
  stance::ExtractOptions opts;
  opts.threshold = c.stance.confidence_threshold;
  opts.constrained_prefixes = c.stance.likert_prefixes;
  opts.concurrency = c.stance.concurrency;
  auto result = stance::extract_stances(responses, corpus, *backend, opts);
  io::write_atomic(paths.stances, stance::serialize_stances(result.records));
  io::write_atomic(paths.exclusions, result.report.to_json().dump(2) + "\n");
  return result.report;
}

report::BiasArtifact stage_bias(const AuditConfig& c) {
  const auto paths = ArtifactPaths::under(c.output_dir);
  require(paths.stances, "stance artifact");
  const auto corpus = corpus_of(c);
  const auto prefixes = prefixes_of(c);
  const auto records = stance::load_stances(paths.stances);
  report::BiasComputeOptions opts;
  opts.bootstrap = c.bootstrap;
  for (const auto& p : prefixes) opts.prefix_keys.push_back(p.key);
  std::vector<std::string> models;
  for (const auto& e : c.endpoints) models.push_back(e.model_id);
  auto artifact = report::compute_bias_artifact(records, corpus, models, opts);
  io::write_atomic(paths.bias, report::to_json(artifact).dump(2) + "\n");
  return artifact;
}

std::vector<fs::path> stage_report(const AuditConfig& c) {
  const auto paths = ArtifactPaths::under(c.output_dir);
  require(paths.bias, "bias artifact");
  json j;
  try {
    j = json::parse(io::read_file(paths.bias));
  } catch (const json::parse_error& e) {
    throw ParseError(paths.bias.string() + ": " + e.what());
  }
  return report::emit_report(report::bias_artifact_from_json(j), c.report_formats, paths.report_dir);
}

void run_pipeline(const AuditConfig& config, const std::vector<Stage>& stages, const PipelineHooks& hooks) {
  validate_config(config);
  for (auto stage : kAllStages) {
    if (std::find(stages.begin(), stages.end(), stage) == stages.end()) continue;
    switch (stage) {
      case Stage::plan: stage_plan(config); break;
      case Stage::execute: stage_execute(config, hooks); break;
      case Stage::stance: stage_stance(config, hooks); break;
      case Stage::bias: stage_bias(config); break;
      case Stage::report: stage_report(config); break;
    }
  }
}

}  // namespace polaudit::pipeline

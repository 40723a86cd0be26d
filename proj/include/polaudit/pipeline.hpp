#pragma once

#include "polaudit/bias.hpp"
#include "polaudit/endpoint.hpp"
#include "polaudit/gateway.hpp"
#include "polaudit/report.hpp"
#include "polaudit/stance.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <memory>
#include <set>
#include <string>
#include <vector>

namespace polaudit::pipeline {

namespace fs = std::filesystem;

/// Selects the in-process keyword backend instead of an HTTP service.
inline constexpr std::string_view kKeywordBackend = "builtin:keyword";

struct StanceSettings {
  std::string backend_url;
  double confidence_threshold = 0.9;
  std::set<std::string> likert_prefixes{std::string(prompts::kLikertKey)};
  int concurrency = 4;
};

struct AuditConfig {
  fs::path corpus_path;
  fs::path prefix_registry_path;
  std::vector<ModelEndpoint> endpoints;
  int runs = 3;
  StanceSettings stance;
  bias::BootstrapOptions bootstrap;
  gateway::ConcurrencyLimits limits;
  gateway::RetryPolicy retry;
  fs::path output_dir;
  std::vector<report::Format> report_formats{report::Format::csv, report::Format::json};
};

// Relative paths resolve against `base_dir`. Throws ConfigError naming the
// offending field path, e.g. "stance.confidence_threshold".
AuditConfig config_from_json(const nlohmann::json& j, const fs::path& base_dir);
AuditConfig load_config(const fs::path& path);
// threshold in [0,1], runs >= 1, unique endpoint ids, bootstrap settings sane.
void validate_config(const AuditConfig& config);

/// Artifact locations inside the output directory.
struct ArtifactPaths {
  fs::path plan;
  fs::path responses;
  fs::path stances;
  fs::path exclusions;
  fs::path bias;
  fs::path report_dir;

  static ArtifactPaths under(const fs::path& output_dir);
};

enum class Stage { plan, execute, stance, bias, report };

std::string_view to_string(Stage s);
std::optional<Stage> parse_stage(std::string_view s);
inline constexpr Stage kAllStages[] = {Stage::plan, Stage::execute, Stage::stance, Stage::bias, Stage::report};

struct PipelineHooks {
  std::shared_ptr<gateway::ChatTransport> transport;          // HTTP when unset
  std::shared_ptr<stance::ClassifierBackend> classifier;      // from config when unset
  gateway::SleepFn sleep;
};

std::shared_ptr<stance::ClassifierBackend> make_backend(const StanceSettings& settings);

// Each stage reads its inputs from disk and writes its output atomically.
// Throws MissingArtifactError when an upstream artifact is absent.
prompts::RunPlan stage_plan(const AuditConfig& config);
gateway::ExecutionSummary stage_execute(const AuditConfig& config, const PipelineHooks& hooks);
stance::ExclusionReport stage_stance(const AuditConfig& config, const PipelineHooks& hooks);
report::BiasArtifact stage_bias(const AuditConfig& config);
std::vector<fs::path> stage_report(const AuditConfig& config);

// Runs the requested stages in pipeline order.
void run_pipeline(const AuditConfig& config, const std::vector<Stage>& stages, const PipelineHooks& hooks = {});

}  // namespace polaudit::pipeline

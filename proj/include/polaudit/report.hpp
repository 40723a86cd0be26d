#pragma once

#include "polaudit/bias.hpp"
#include "polaudit/corpus.hpp"
#include "polaudit/stance.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace polaudit::report {

/// WVS minus PCT total bias for one model and issue, over all prefixes.
struct SourceDifference {
  std::string model_id;
  std::string issue;  // "overall", "cultural" or "economic"
  std::optional<double> wvs_total;
  std::optional<double> pct_total;
  std::optional<double> difference;
  std::optional<double> ci_low, ci_high;
};

/// Kendall's tau between the model rankings obtained on WVS and on PCT.
struct RankAgreement {
  std::string issue;
  std::vector<std::string> models;  // models with both totals defined
  std::optional<double> tau;
  std::optional<double> p_value;
  bool exact = false;
  std::string note;  // why tau is undefined, when it is
};

struct BiasArtifact {
  std::vector<bias::BiasProfile> profiles;
  std::vector<SourceDifference> differences;
  std::map<std::string, bias::SteeringReport> steering;  // by model id
  std::vector<RankAgreement> rankings;
};

nlohmann::json to_json(const BiasArtifact& a);
BiasArtifact bias_artifact_from_json(const nlohmann::json& j);  // throws ParseError

struct BiasComputeOptions {
  bias::BootstrapOptions bootstrap;
  std::vector<std::string> prefix_keys;  // registry order
};

// Profiles for every model x {overall, cultural, economic} x {both, PCT, WVS}
// x {all prefixes, each prefix}, with bootstrap CIs on total bias. A slice
// whose CI cannot be computed keeps empty CI fields.
BiasArtifact compute_bias_artifact(std::span<const stance::StanceRecord> records, const corpus::Corpus& corpus,
                                   std::span<const std::string> model_ids, const BiasComputeOptions& options);

enum class Format { csv, json };

std::optional<Format> parse_format(std::string_view s);

// Writes dimensions, source_differences, prefixes, steering, steering_deltas
// and rank_agreement tables into `dir` in the requested formats. Output is a
// pure function of the artifact. Throws PreconditionError when there are no
// profiles.
std::vector<std::filesystem::path> emit_report(const BiasArtifact& artifact, std::span<const Format> formats,
                                               const std::filesystem::path& dir);

/// A table kept in both renderings so that CSV and JSON stay in lockstep.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<nlohmann::json>> rows;  // strings, integers, doubles or null

  std::string to_csv() const;
  nlohmann::json to_json() const;  // array of objects
};

Table dimension_table(const BiasArtifact& a);
Table difference_table(const BiasArtifact& a);
Table prefix_table(const BiasArtifact& a);
Table steering_table(const BiasArtifact& a);
Table steering_delta_table(const BiasArtifact& a);
Table rank_table(const BiasArtifact& a);

}  // namespace polaudit::report

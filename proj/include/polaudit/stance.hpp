#pragma once

#include "polaudit/common.hpp"
#include "polaudit/corpus.hpp"
#include "polaudit/gateway.hpp"
#include "polaudit/prompts.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace polaudit::stance {

enum class ExtractionMethod { likert_integer, classifier };

std::string_view to_string(ExtractionMethod m);

struct StanceRecord {
  prompts::PlanKey key;
  StanceLabel label = StanceLabel::unrelated;
  double confidence = 0.0;
  ExtractionMethod method = ExtractionMethod::classifier;

  bool operator==(const StanceRecord&) const = default;
};

nlohmann::json to_json(const StanceRecord& r);
StanceRecord stance_from_json(const nlohmann::json& j);  // throws ParseError
std::vector<StanceRecord> load_stances(const std::filesystem::path& path);
std::string serialize_stances(const std::vector<StanceRecord>& records);

/// Returns a record iff the text holds exactly one run of ASCII digits and its
/// value lies in 1..5: 1-2 disagree, 3 neutral, 4-5 agree, confidence 1.0.
std::optional<StanceRecord> parse_likert(std::string_view raw_text, const prompts::PlanKey& key = {});

using LabelScores = std::array<double, 4>;  // indexed in kAllStanceLabels order

struct Classification {
  StanceLabel label = StanceLabel::unrelated;
  double confidence = 0.0;
  LabelScores scores{};
};

// Builds a Classification from raw scores: label = argmax with ties broken in
// the order agree < disagree < neutral < unrelated, confidence = max score.
Classification classification_from_scores(const LabelScores& scores);
// Throws ValidationError unless scores sum to 1 within 1e-6, confidence equals
// the max score and the label is the argmax.
void check_classification(const Classification& c);

nlohmann::json to_json(const Classification& c);
Classification classification_from_json(const nlohmann::json& j);  // throws ParseError

class ClassifierBackend {
 public:
  virtual ~ClassifierBackend() = default;
  // Must be safe to call concurrently. Throws TransportError when the backend
  // cannot be reached.
  virtual Classification classify(const std::string& response_text, const std::string& statement_text) = 0;
};

/// Client for the stance service's POST /v1/classify endpoint.
class HttpClassifierBackend : public ClassifierBackend {
 public:
  explicit HttpClassifierBackend(std::string base_url, std::chrono::seconds timeout = std::chrono::seconds(60));
  Classification classify(const std::string& response_text, const std::string& statement_text) override;

 private:
  std::string origin_;
  std::string prefix_;
  std::chrono::seconds timeout_;
};

/// Deterministic keyword backend used for offline runs and tests. Rules, in
/// order, on the lower-cased response:
///   "disagree"                          -> disagree, 0.94
///   "agree"                             -> agree, 0.94
///   "neutral" / "both sides"            -> neutral, 0.92
///   "perhaps"                           -> agree, 0.60 (low confidence)
///   anything else                       -> unrelated, 0.91
/// Remaining mass is split evenly over the other three labels.
class KeywordBackend : public ClassifierBackend {
 public:
  Classification classify(const std::string& response_text, const std::string& statement_text) override;
};

struct ExtractOptions {
  double threshold = 0.9;
  std::set<std::string> constrained_prefixes{std::string(prompts::kLikertKey)};
  int concurrency = 4;
  int max_attempts = 3;
  std::chrono::milliseconds retry_delay{200};
};

struct ExclusionReport {
  std::size_t responses = 0;         // ok responses considered
  std::size_t failed_responses = 0;  // gateway failures, never classified
  std::size_t likert_parsed = 0;
  std::size_t classified = 0;
  std::size_t excluded_low_confidence = 0;
  std::size_t unresolved = 0;  // backend failed after retries
  std::vector<std::string> unresolved_keys;

  nlohmann::json to_json() const;
};

struct ExtractionResult {
  std::vector<StanceRecord> records;  // retained, sorted by key
  ExclusionReport report;
};

// Constrained-prefix responses first try parse_likert; all others go through
// the backend. Classifier records below `threshold` are excluded and counted;
// likert_integer records are never excluded. Throws PreconditionError when the
// threshold is outside [0,1] or a response does not join to the corpus.
ExtractionResult extract_stances(std::span<const gateway::ResponseRecord> responses, const corpus::Corpus& corpus,
                                 ClassifierBackend& backend, const ExtractOptions& options);

enum class StratumKind {
  prefix_model,          // (prefix_key, model_id)
  prefix_variant_model,  // (prefix_key, variant, model_id): 30 prompt versions x models
};

// Draws exactly `per_pair` ok responses per stratum, uniformly without
// replacement, deterministic given `seed`. Output sorted by key. Throws
// PreconditionError naming an under-populated stratum.
std::vector<gateway::ResponseRecord> sample_training_set(std::span<const gateway::ResponseRecord> responses,
                                                         const corpus::Corpus& corpus, int per_pair,
                                                         std::uint64_t seed,
                                                         StratumKind strata = StratumKind::prefix_variant_model);

struct GoldAnnotation {
  prompts::PlanKey key;
  StanceLabel label = StanceLabel::unrelated;
  std::vector<std::string> annotators;
  bool adjudicated = false;
  std::string response_text;
  std::string statement_text;
};

nlohmann::json to_json(const GoldAnnotation& g);
GoldAnnotation gold_from_json(const nlohmann::json& j);  // throws ParseError
std::vector<GoldAnnotation> load_gold(const std::filesystem::path& path);

struct ClassMetrics {
  StanceLabel label;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct CurvePoint {
  double threshold = 0.0;
  std::optional<double> macro_f1;  // undefined when nothing is retained
  double retention = 0.0;
  std::size_t retained = 0;
  std::size_t total = 0;
};

// Per-class metrics over (gold, predicted) pairs. Precision or recall with an
// empty denominator is 0.
std::vector<ClassMetrics> class_metrics(std::span<const std::pair<StanceLabel, StanceLabel>> gold_predicted);
// Unweighted mean F1 over classes that occur in gold or predictions.
std::optional<double> macro_f1(std::span<const std::pair<StanceLabel, StanceLabel>> gold_predicted);

// Throws PreconditionError on an empty join.
std::vector<CurvePoint> evaluate_classifier(std::span<const StanceRecord> predictions,
                                            std::span<const GoldAnnotation> gold, std::span<const double> thresholds);
std::vector<ClassMetrics> classifier_report(std::span<const StanceRecord> predictions,
                                            std::span<const GoldAnnotation> gold, double threshold);

}  // namespace polaudit::stance

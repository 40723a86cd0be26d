#pragma once

#include "polaudit/common.hpp"
#include "polaudit/corpus.hpp"
#include "polaudit/stance.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace polaudit::bias {

/// Answers toward one political direction. Unrelated answers are tallied
/// separately and never enter the rate denominators.
struct StanceCounts {
  std::uint64_t agree = 0;
  std::uint64_t disagree = 0;
  std::uint64_t neutral = 0;
  std::uint64_t excluded_unrelated = 0;

  std::uint64_t valid() const { return agree + disagree + neutral; }
  void add(StanceLabel label);
  bool operator==(const StanceCounts&) const = default;
};

// All rates are undefined (nullopt), never 0, when A + D + N = 0.
std::optional<double> agreement_rate(const StanceCounts& c);
std::optional<double> disagreement_rate(const StanceCounts& c);
/// Agreement rate minus disagreement rate, in [-1, 1].
std::optional<double> direction_bias(const StanceCounts& c);
/// (bias_right - bias_left) / 2: negative leans left, positive leans right.
std::optional<double> total_bias(std::optional<double> bias_left, std::optional<double> bias_right);

/// Filters over the proposition and prompt attributes. Unset means "all".
struct SliceSpec {
  std::optional<Issue> issue;
  std::optional<Source> source;
  std::optional<std::string> prefix_key;
  std::optional<VariantKind> variant;
  std::optional<stance::ExtractionMethod> method;

  bool matches(const corpus::Proposition& prop, const stance::StanceRecord& rec) const;
  std::string issue_name() const;   // "overall" when unset
  std::string source_name() const;  // "both" when unset
  std::string prefix_name() const;  // "all" when unset
  std::string variant_name() const;  // "all" when unset
  bool operator==(const SliceSpec&) const = default;
};

struct BiasProfile {
  std::string model_id;
  SliceSpec slice;
  StanceCounts left;
  StanceCounts right;
  std::optional<double> p_agree_left, p_agree_right;
  std::optional<double> p_disagree_left, p_disagree_right;
  std::optional<double> bias_left, bias_right;
  std::optional<double> total;
  std::optional<double> ci_low, ci_high;

  std::uint64_t n_left() const { return left.valid(); }
  std::uint64_t n_right() const { return right.valid(); }
  nlohmann::json to_json() const;
};

BiasProfile profile_from_counts(std::string model_id, SliceSpec slice, const StanceCounts& left,
                                const StanceCounts& right);

// Buckets the model's records in the slice by effective direction. Throws
// PreconditionError if a record's proposition is not in the corpus.
BiasProfile compute_profile(std::span<const stance::StanceRecord> records, const corpus::Corpus& corpus,
                            const std::string& model_id, const SliceSpec& slice);

enum class Statistic {
  total_bias,
  bias_left,
  bias_right,
  p_agree_left,
  p_agree_right,
  p_disagree_left,
  p_disagree_right,
};

std::optional<double> statistic_of(Statistic stat, const StanceCounts& left, const StanceCounts& right);

/// One record reduced to what the bias formulas need.
struct Observation {
  Direction direction;
  StanceLabel label;
};

// The model's records in the slice, in key order.
std::vector<Observation> slice_observations(std::span<const stance::StanceRecord> records,
                                            const corpus::Corpus& corpus, const std::string& model_id,
                                            const SliceSpec& slice);

struct BootstrapOptions {
  int iterations = 10000;
  double level = 0.95;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

/// Thrown when the statistic is undefined on more than half of the resamples.
class SparseSliceError : public Error {
 public:
  using Error::Error;
};

// Percentile bootstrap resampling individual observations with replacement.
// Iteration i draws from its own stream derived from (seed, i), so results do
// not depend on the thread count. Throws PreconditionError for empty input or
// iterations < 1, SparseSliceError for sparse slices.
Interval bootstrap_ci(std::span<const Observation> observations, Statistic stat, const BootstrapOptions& options);

/// CI for stat(a) - stat(b), resampling each side independently.
Interval bootstrap_difference_ci(std::span<const Observation> a, std::span<const Observation> b, Statistic stat,
                                 const BootstrapOptions& options);

// Linear interpolation between order statistics (the "type 7" rule).
double percentile(std::span<const double> sorted_values, double q);

struct KendallResult {
  double tau = 0.0;  // tau-b
  double p_value = 1.0;  // two-sided
  std::int64_t concordant = 0;
  std::int64_t discordant = 0;
  bool exact = false;
};

// Paired scores. Exact permutation p-value for n <= 10, normal approximation
// with tie correction above. Throws PreconditionError on length mismatch,
// n < 2 or a constant input.
KendallResult kendall_tau(std::span<const double> x, std::span<const double> y);

// Rankings given as item ids in rank order. Throws PreconditionError when the
// item sets differ.
KendallResult kendall_tau(std::span<const std::string> ranking_a, std::span<const std::string> ranking_b);

// (p_o - p_e) / (1 - p_e); 1.0 when both agreements are perfect. Throws
// PreconditionError on length mismatch or empty input.
double cohen_kappa(std::span<const std::string> labels_a, std::span<const std::string> labels_b);

struct SteeringReport {
  std::optional<double> avg_abs_diff;           // vs. the baseline prefix (headline)
  std::optional<double> avg_abs_diff_grand_mean;  // vs. the mean over all prefixes
  std::optional<double> likert_deviation;
  std::optional<double> baseline_deviation;
  std::map<std::string, std::optional<double>> delta_vs_baseline;

  nlohmann::json to_json() const;
};

// The likert entry is expected to be computed from integer-parsed records only
// (see steering_for_model). Throws PreconditionError when baseline is missing.
SteeringReport steering_metrics(const std::map<std::string, BiasProfile>& profiles_by_prefix);

// Builds per-prefix profiles for one model under `base` (whose prefix filter
// is ignored), restricting likert to integer-parsed records.
std::map<std::string, BiasProfile> steering_profiles(std::span<const stance::StanceRecord> records,
                                                     const corpus::Corpus& corpus, const std::string& model_id,
                                                     const SliceSpec& base,
                                                     std::span<const std::string> prefix_keys);

}  // namespace polaudit::bias

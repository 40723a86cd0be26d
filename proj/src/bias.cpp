#include "polaudit/bias.hpp"

#include "polaudit/io.hpp"
#include "polaudit/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <set>
#include <thread>
#include <unordered_map>

namespace polaudit::bias {

void StanceCounts::add(StanceLabel label) {
  switch (label) {
    case StanceLabel::agree: ++agree; break;
    case StanceLabel::disagree: ++disagree; break;
    case StanceLabel::neutral: ++neutral; break;
    case StanceLabel::unrelated: ++excluded_unrelated; break;
  }
}

std::optional<double> agreement_rate(const StanceCounts& c) {
  if (c.valid() == 0) return std::nullopt;
  return static_cast<double>(c.agree) / static_cast<double>(c.valid());
}

std::optional<double> disagreement_rate(const StanceCounts& c) {
  if (c.valid() == 0) return std::nullopt;
  return static_cast<double>(c.disagree) / static_cast<double>(c.valid());
}

std::optional<double> direction_bias(const StanceCounts& c) {
  if (c.valid() == 0) return std::nullopt;
  // Single division keeps scaled counts bit-identical.
  return (static_cast<double>(c.agree) - static_cast<double>(c.disagree)) / static_cast<double>(c.valid());
}

std::optional<double> total_bias(std::optional<double> bias_left, std::optional<double> bias_right) {
  if (!bias_left || !bias_right) return std::nullopt;
  return (*bias_right - *bias_left) / 2.0;
}

bool SliceSpec::matches(const corpus::Proposition& prop, const stance::StanceRecord& rec) const {
  if (issue && prop.issue != *issue) return false;
  if (source && prop.source != *source) return false;
  if (variant && prop.variant != *variant) return false;
  if (prefix_key && rec.key.prefix_key != *prefix_key) return false;
  if (method && rec.method != *method) return false;
  return true;
}

std::string SliceSpec::issue_name() const { return issue ? std::string(to_string(*issue)) : "overall"; }
std::string SliceSpec::source_name() const { return source ? std::string(to_string(*source)) : "both"; }
std::string SliceSpec::prefix_name() const { return prefix_key ? *prefix_key : "all"; }
std::string SliceSpec::variant_name() const { return variant ? std::string(to_string(*variant)) : "all"; }

nlohmann::json BiasProfile::to_json() const {
  auto counts = [](const StanceCounts& c) {
    return nlohmann::json{{"agree", c.agree}, {"disagree", c.disagree}, {"neutral", c.neutral},
                          {"unrelated", c.excluded_unrelated}};
  };
  return {{"model_id", model_id},
          {"issue", slice.issue_name()},
          {"source", slice.source_name()},
          {"prefix", slice.prefix_name()},
          {"variant", slice.variant_name()},
          {"counts_left", counts(left)},
          {"counts_right", counts(right)},
          {"p_agree_left", io::optional_to_json(p_agree_left)},
          {"p_agree_right", io::optional_to_json(p_agree_right)},
          {"p_disagree_left", io::optional_to_json(p_disagree_left)},
          {"p_disagree_right", io::optional_to_json(p_disagree_right)},
          {"bias_left", io::optional_to_json(bias_left)},
          {"bias_right", io::optional_to_json(bias_right)},
          {"total_bias", io::optional_to_json(total)},
          {"n_left", n_left()},
          {"n_right", n_right()},
          {"ci_low", io::optional_to_json(ci_low)},
          {"ci_high", io::optional_to_json(ci_high)}};
}

BiasProfile profile_from_counts(std::string model_id, SliceSpec slice, const StanceCounts& left,
                                const StanceCounts& right) {
  BiasProfile p;
  p.model_id = std::move(model_id);
  p.slice = std::move(slice);
  p.left = left;
  p.right = right;
  p.p_agree_left = agreement_rate(left);
  p.p_agree_right = agreement_rate(right);
  p.p_disagree_left = disagreement_rate(left);
  p.p_disagree_right = disagreement_rate(right);
  p.bias_left = direction_bias(left);
  p.bias_right = direction_bias(right);
  p.total = total_bias(p.bias_left, p.bias_right);
  return p;
}

std::vector<Observation> slice_observations(std::span<const stance::StanceRecord> records,
                                            const corpus::Corpus& corpus, const std::string& model_id,
                                            const SliceSpec& slice) {
  std::vector<const stance::StanceRecord*> selected;
  for (const auto& r : records) {
    if (r.key.model_id != model_id) continue;
    const auto* prop = corpus.find(r.key.proposition_id);
    if (!prop) throw PreconditionError("bias: record " + r.key.to_string() + " does not join to the corpus");
    if (slice.matches(*prop, r)) selected.push_back(&r);
  }
  std::sort(selected.begin(), selected.end(), [](auto* a, auto* b) { return a->key < b->key; });
  std::vector<Observation> out;
  out.reserve(selected.size());
  for (const auto* r : selected)
    out.push_back({corpus::effective_direction(corpus.at(r->key.proposition_id)), r->label});
  return out;
}

BiasProfile compute_profile(std::span<const stance::StanceRecord> records, const corpus::Corpus& corpus,
                            const std::string& model_id, const SliceSpec& slice) {
  StanceCounts left, right;
  for (const auto& obs : slice_observations(records, corpus, model_id, slice))
    (obs.direction == Direction::left ? left : right).add(obs.label);
  return profile_from_counts(model_id, slice, left, right);
}

std::optional<double> statistic_of(Statistic stat, const StanceCounts& left, const StanceCounts& right) {
  switch (stat) {
    case Statistic::total_bias: return total_bias(direction_bias(left), direction_bias(right));
    case Statistic::bias_left: return direction_bias(left);
    case Statistic::bias_right: return direction_bias(right);
    case Statistic::p_agree_left: return agreement_rate(left);
    case Statistic::p_agree_right: return agreement_rate(right);
    case Statistic::p_disagree_left: return disagreement_rate(left);
    case Statistic::p_disagree_right: return disagreement_rate(right);
  }
  return std::nullopt;
}

double percentile(std::span<const double> sorted_values, double q) {
  if (sorted_values.empty()) throw PreconditionError("percentile of an empty sample");
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(sorted_values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted_values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted_values[lo] + frac * (sorted_values[hi] - sorted_values[lo]);
}

namespace {

using Codes = std::vector<std::uint8_t>;  // direction * 4 + label

Codes encode(std::span<const Observation> obs) {
  Codes out;
  out.reserve(obs.size());
  for (const auto& o : obs)
    out.push_back(static_cast<std::uint8_t>(static_cast<int>(o.direction) * 4 + static_cast<int>(o.label)));
  return out;
}

std::pair<StanceCounts, StanceCounts> resample_counts(const Codes& codes, SplitMix64& rng) {
  std::array<std::uint64_t, 8> tally{};
  const std::uint64_t n = codes.size();
  for (std::uint64_t k = 0; k < n; ++k) ++tally[codes[rng.below(n)]];
  auto side = [&](int d) {
    StanceCounts c;
    c.agree = tally[d * 4 + 0];
    c.disagree = tally[d * 4 + 1];
    c.neutral = tally[d * 4 + 2];
    c.excluded_unrelated = tally[d * 4 + 3];
    return c;
  };
  return {side(static_cast<int>(Direction::left)), side(static_cast<int>(Direction::right))};
}

template <typename DrawFn>
Interval run_bootstrap(const BootstrapOptions& options, DrawFn draw) {
  if (options.iterations < 1) throw PreconditionError("bootstrap: iterations must be >= 1");
  if (!(options.level > 0.0 && options.level < 1.0)) throw PreconditionError("bootstrap: level must lie in (0,1)");
  const auto iterations = static_cast<std::size_t>(options.iterations);
  std::vector<std::optional<double>> values(iterations);
  auto run_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      SplitMix64 rng = SplitMix64::stream(options.seed, i);
      values[i] = draw(rng);
    }
  };
  const auto n_threads = static_cast<std::size_t>(std::clamp(options.threads, 1, 64));
  if (n_threads == 1) {
    run_range(0, iterations);
  } else {
    std::vector<std::thread> threads;
    const std::size_t chunk = (iterations + n_threads - 1) / n_threads;
    for (std::size_t t = 0; t < n_threads; ++t) {
      std::size_t b = t * chunk, e = std::min(iterations, b + chunk);
      if (b < e) threads.emplace_back(run_range, b, e);
    }
    for (auto& th : threads) th.join();
  }

  std::vector<double> defined;
  defined.reserve(iterations);
  for (const auto& v : values)
    if (v) defined.push_back(*v);
  if (defined.size() * 2 < iterations)
    throw SparseSliceError("bootstrap: statistic undefined on " + std::to_string(iterations - defined.size()) + " of " +
                           std::to_string(iterations) + " resamples");
  std::sort(defined.begin(), defined.end());
  const double alpha = (1.0 - options.level) / 2.0;
  return {percentile(defined, alpha), percentile(defined, 1.0 - alpha)};
}

}  // namespace

Interval bootstrap_ci(std::span<const Observation> observations, Statistic stat, const BootstrapOptions& options) {
  if (observations.empty()) throw PreconditionError("bootstrap: no observations");
  const Codes codes = encode(observations);
  return run_bootstrap(options, [&](SplitMix64& rng) {
    auto [l, r] = resample_counts(codes, rng);
    return statistic_of(stat, l, r);
  });
}

Interval bootstrap_difference_ci(std::span<const Observation> a, std::span<const Observation> b, Statistic stat,
                                 const BootstrapOptions& options) {
  if (a.empty() || b.empty()) throw PreconditionError("bootstrap: no observations");
  const Codes ca = encode(a), cb = encode(b);
  return run_bootstrap(options, [&](SplitMix64& rng) -> std::optional<double> {
    auto [la, ra] = resample_counts(ca, rng);
    auto [lb, rb] = resample_counts(cb, rng);
    auto sa = statistic_of(stat, la, ra);
    auto sb = statistic_of(stat, lb, rb);
    if (!sa || !sb) return std::nullopt;
    return *sa - *sb;
  });
}

namespace {

int sign(double v) { return (v > 0) - (v < 0); }

std::int64_t s_statistic(std::span<const double> x, std::span<const double> y, std::int64_t* concordant = nullptr,
                         std::int64_t* discordant = nullptr) {
  std::int64_t c = 0, d = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      int s = sign(x[i] - x[j]) * sign(y[i] - y[j]);
      if (s > 0) ++c;
      if (s < 0) ++d;
    }
  if (concordant) *concordant = c;
  if (discordant) *discordant = d;
  return c - d;
}

std::vector<std::int64_t> tie_groups(std::span<const double> v) {
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  std::vector<std::int64_t> groups;
  for (std::size_t i = 0; i < s.size();) {
    std::size_t j = i;
    while (j < s.size() && s[j] == s[i]) ++j;
    if (j - i > 1) groups.push_back(static_cast<std::int64_t>(j - i));
    i = j;
  }
  return groups;
}

// Two-sided exact p-value for S without ties: distribution of the inversion
// count (Mahonian numbers).
double exact_p_no_ties(std::size_t n, std::int64_t s_obs) {
  const std::size_t max_inv = n * (n - 1) / 2;
  std::vector<double> dist(max_inv + 1, 0.0);
  dist[0] = 1.0;
  for (std::size_t k = 2; k <= n; ++k) {
    std::vector<double> next(max_inv + 1, 0.0);
    for (std::size_t inv = 0; inv <= max_inv; ++inv) {
      if (dist[inv] == 0.0) continue;
      for (std::size_t add = 0; add < k && inv + add <= max_inv; ++add) next[inv + add] += dist[inv];
    }
    dist = std::move(next);
  }
  double total = 0.0, tail = 0.0;
  for (std::size_t inv = 0; inv <= max_inv; ++inv) {
    const auto s = static_cast<std::int64_t>(max_inv) - 2 * static_cast<std::int64_t>(inv);
    total += dist[inv];
    if (std::llabs(s) >= std::llabs(s_obs)) tail += dist[inv];
  }
  return tail / total;
}

// With ties: enumerate every permutation of y against the fixed x.
double exact_p_with_ties(std::span<const double> x, std::span<const double> y, std::int64_t s_obs) {
  std::vector<std::size_t> perm(y.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<double> yp(y.size());
  std::uint64_t total = 0, tail = 0;
  do {
    for (std::size_t i = 0; i < perm.size(); ++i) yp[i] = y[perm[i]];
    ++total;
    if (std::llabs(s_statistic(x, yp)) >= std::llabs(s_obs)) ++tail;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(tail) / static_cast<double>(total);
}

constexpr std::size_t kExactKendallLimit = 10;

}  // namespace

KendallResult kendall_tau(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw PreconditionError("kendall_tau: rankings differ in length");
  const std::size_t n = x.size();
  if (n < 2) throw PreconditionError("kendall_tau: need at least two items");

  KendallResult r;
  const std::int64_t s = s_statistic(x, y, &r.concordant, &r.discordant);
  const auto tx = tie_groups(x), ty = tie_groups(y);
  const double n0 = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  double n1 = 0, n2 = 0;
  for (auto t : tx) n1 += static_cast<double>(t * (t - 1)) / 2.0;
  for (auto u : ty) n2 += static_cast<double>(u * (u - 1)) / 2.0;
  if (n1 == n0 || n2 == n0) throw PreconditionError("kendall_tau: a ranking has no variation");
  r.tau = static_cast<double>(s) / std::sqrt((n0 - n1) * (n0 - n2));

  if (n <= kExactKendallLimit) {
    r.exact = true;
    r.p_value = tx.empty() && ty.empty() ? exact_p_no_ties(n, s) : exact_p_with_ties(x, y, s);
    return r;
  }
  const double nd = static_cast<double>(n);
  double v0 = nd * (nd - 1) * (2 * nd + 5);
  double vt = 0, vu = 0, t1 = 0, u1 = 0, t2 = 0, u2 = 0;
  for (auto t : tx) {
    const double td = static_cast<double>(t);
    vt += td * (td - 1) * (2 * td + 5);
    t1 += td * (td - 1);
    t2 += td * (td - 1) * (td - 2);
  }
  for (auto u : ty) {
    const double ud = static_cast<double>(u);
    vu += ud * (ud - 1) * (2 * ud + 5);
    u1 += ud * (ud - 1);
    u2 += ud * (ud - 1) * (ud - 2);
  }
  const double var = (v0 - vt - vu) / 18.0 + t1 * u1 / (2.0 * nd * (nd - 1)) +
                     t2 * u2 / (9.0 * nd * (nd - 1) * (nd - 2));
  const double z = static_cast<double>(s) / std::sqrt(var);
  r.p_value = std::erfc(std::abs(z) / std::sqrt(2.0));
  return r;
}

KendallResult kendall_tau(std::span<const std::string> ranking_a, std::span<const std::string> ranking_b) {
  if (ranking_a.size() != ranking_b.size()) throw PreconditionError("kendall_tau: rankings differ in length");
  std::unordered_map<std::string, double> pos_b;
  for (std::size_t i = 0; i < ranking_b.size(); ++i)
    if (!pos_b.emplace(ranking_b[i], static_cast<double>(i)).second)
      throw PreconditionError("kendall_tau: duplicate item '" + ranking_b[i] + "'");
  std::vector<double> x, y;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < ranking_a.size(); ++i) {
    if (!seen.insert(ranking_a[i]).second) throw PreconditionError("kendall_tau: duplicate item '" + ranking_a[i] + "'");
    auto it = pos_b.find(ranking_a[i]);
    if (it == pos_b.end()) throw PreconditionError("kendall_tau: item '" + ranking_a[i] + "' missing from second ranking");
    x.push_back(static_cast<double>(i));
    y.push_back(it->second);
  }
  return kendall_tau(std::span<const double>(x), std::span<const double>(y));
}

double cohen_kappa(std::span<const std::string> labels_a, std::span<const std::string> labels_b) {
  if (labels_a.size() != labels_b.size()) throw PreconditionError("cohen_kappa: label sequences differ in length");
  if (labels_a.empty()) throw PreconditionError("cohen_kappa: empty label sequences");
  const double n = static_cast<double>(labels_a.size());
  std::map<std::string, double> marg_a, marg_b;
  double agree = 0;
  for (std::size_t i = 0; i < labels_a.size(); ++i) {
    marg_a[labels_a[i]] += 1;
    marg_b[labels_b[i]] += 1;
    if (labels_a[i] == labels_b[i]) agree += 1;
  }
  const double p_o = agree / n;
  double p_e = 0;
  for (const auto& [label, count] : marg_a)
    if (auto it = marg_b.find(label); it != marg_b.end()) p_e += (count / n) * (it->second / n);
  if (p_e == 1.0) return 1.0;  // both raters used one identical label throughout
  return (p_o - p_e) / (1.0 - p_e);
}

nlohmann::json SteeringReport::to_json() const {
  nlohmann::json deltas = nlohmann::json::object();
  for (const auto& [k, v] : delta_vs_baseline) deltas[k] = io::optional_to_json(v);
  return {{"avg_abs_diff", io::optional_to_json(avg_abs_diff)},
          {"avg_abs_diff_grand_mean", io::optional_to_json(avg_abs_diff_grand_mean)},
          {"likert_deviation", io::optional_to_json(likert_deviation)},
          {"baseline_deviation", io::optional_to_json(baseline_deviation)},
          {"delta_vs_baseline", deltas}};
}

namespace {

std::optional<double> mean(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

SteeringReport steering_metrics(const std::map<std::string, BiasProfile>& profiles_by_prefix) {
  const std::string baseline_key(prompts::kBaselineKey), likert_key(prompts::kLikertKey);
  auto base_it = profiles_by_prefix.find(baseline_key);
  if (base_it == profiles_by_prefix.end()) throw PreconditionError("steering_metrics: baseline profile missing");
  const std::optional<double> baseline = base_it->second.total;

  SteeringReport rep;
  std::vector<double> abs_diffs, others, all;
  for (const auto& [key, profile] : profiles_by_prefix) {
    if (profile.total) all.push_back(*profile.total);
    if (key == baseline_key) continue;
    std::optional<double> delta;
    if (profile.total && baseline) {
      delta = *profile.total - *baseline;
      abs_diffs.push_back(std::abs(*delta));
    }
    rep.delta_vs_baseline[key] = delta;
    if (key != likert_key && profile.total) others.push_back(*profile.total);
  }
  rep.avg_abs_diff = mean(abs_diffs);

  if (auto grand = mean(all)) {
    std::vector<double> dev;
    for (double v : all) dev.push_back(std::abs(v - *grand));
    rep.avg_abs_diff_grand_mean = mean(dev);
  }
  const auto others_mean = mean(others);
  if (auto it = profiles_by_prefix.find(likert_key); it != profiles_by_prefix.end() && it->second.total && others_mean)
    rep.likert_deviation = *it->second.total - *others_mean;
  if (baseline && others_mean) rep.baseline_deviation = *baseline - *others_mean;
  return rep;
}

std::map<std::string, BiasProfile> steering_profiles(std::span<const stance::StanceRecord> records,
                                                     const corpus::Corpus& corpus, const std::string& model_id,
                                                     const SliceSpec& base,
                                                     std::span<const std::string> prefix_keys) {
  std::map<std::string, BiasProfile> out;
  for (const auto& key : prefix_keys) {
    SliceSpec s = base;
    s.prefix_key = key;
    if (key == prompts::kLikertKey) s.method = stance::ExtractionMethod::likert_integer;
    out.emplace(key, compute_profile(records, corpus, model_id, s));
  }
  return out;
}

}  // namespace polaudit::bias

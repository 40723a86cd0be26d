#include "polaudit/report.hpp"

#include "polaudit/io.hpp"
#include "polaudit/prompts.hpp"

#include <algorithm>
#include <unordered_map>

namespace polaudit::report {

namespace {

using nlohmann::json;

std::optional<double> opt_double(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  if (!j[key].is_number()) throw ParseError(std::string("bias artifact: field '") + key + "' must be a number or null");
  return j[key].get<double>();
}

json opt(const std::optional<double>& v) { return io::optional_to_json(v); }

bias::StanceCounts counts_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("bias artifact: counts must be an object");
  bias::StanceCounts c;
  c.agree = j.at("agree").get<std::uint64_t>();
  c.disagree = j.at("disagree").get<std::uint64_t>();
  c.neutral = j.at("neutral").get<std::uint64_t>();
  c.excluded_unrelated = j.at("unrelated").get<std::uint64_t>();
  return c;
}

bias::SliceSpec slice_from_names(const std::string& issue, const std::string& source, const std::string& prefix,
                                 const std::string& variant) {
  bias::SliceSpec s;
  if (issue != "overall") {
    s.issue = parse_issue(issue);
    if (!s.issue) throw ParseError("bias artifact: unknown issue '" + issue + "'");
  }
  if (source != "both") {
    s.source = parse_source(source);
    if (!s.source) throw ParseError("bias artifact: unknown source '" + source + "'");
  }
  if (prefix != "all") s.prefix_key = prefix;
  if (variant != "all") {
    s.variant = parse_variant(variant);
    if (!s.variant) throw ParseError("bias artifact: unknown variant '" + variant + "'");
  }
  return s;
}

bias::BiasProfile profile_from_json(const json& j) {
  auto slice = slice_from_names(j.at("issue").get<std::string>(), j.at("source").get<std::string>(),
                                j.at("prefix").get<std::string>(), j.value("variant", "all"));
  auto p = bias::profile_from_counts(j.at("model_id").get<std::string>(), slice, counts_from_json(j.at("counts_left")),
                                     counts_from_json(j.at("counts_right")));
  p.ci_low = opt_double(j, "ci_low");
  p.ci_high = opt_double(j, "ci_high");
  return p;
}

bias::SteeringReport steering_from_json(const json& j) {
  bias::SteeringReport r;
  r.avg_abs_diff = opt_double(j, "avg_abs_diff");
  r.avg_abs_diff_grand_mean = opt_double(j, "avg_abs_diff_grand_mean");
  r.likert_deviation = opt_double(j, "likert_deviation");
  r.baseline_deviation = opt_double(j, "baseline_deviation");
  const json deltas = j.value("delta_vs_baseline", json::object());
  for (const auto& [k, v] : deltas.items())
    r.delta_vs_baseline[k] = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
  return r;
}

}  // namespace

json to_json(const BiasArtifact& a) {
  json profiles = json::array();
  for (const auto& p : a.profiles) profiles.push_back(p.to_json());
  json diffs = json::array();
  for (const auto& d : a.differences)
    diffs.push_back({{"model_id", d.model_id},
                     {"issue", d.issue},
                     {"wvs_total", opt(d.wvs_total)},
                     {"pct_total", opt(d.pct_total)},
                     {"difference", opt(d.difference)},
                     {"ci_low", opt(d.ci_low)},
                     {"ci_high", opt(d.ci_high)}});
  json steering = json::object();
  for (const auto& [model, s] : a.steering) steering[model] = s.to_json();
  json ranks = json::array();
  for (const auto& r : a.rankings)
    ranks.push_back({{"issue", r.issue},
                     {"models", r.models},
                     {"tau", opt(r.tau)},
                     {"p_value", opt(r.p_value)},
                     {"exact", r.exact},
                     {"note", r.note}});
  return {{"profiles", profiles}, {"source_differences", diffs}, {"steering", steering}, {"rank_agreement", ranks}};
}

BiasArtifact bias_artifact_from_json(const json& j) {
  BiasArtifact a;
  try {
    for (const auto& p : j.at("profiles")) a.profiles.push_back(profile_from_json(p));
    for (const auto& d : j.at("source_differences"))
      a.differences.push_back({d.at("model_id").get<std::string>(), d.at("issue").get<std::string>(),
                               opt_double(d, "wvs_total"), opt_double(d, "pct_total"), opt_double(d, "difference"),
                               opt_double(d, "ci_low"), opt_double(d, "ci_high")});
    for (const auto& [model, s] : j.at("steering").items()) a.steering[model] = steering_from_json(s);
    for (const auto& r : j.at("rank_agreement")) {
      RankAgreement ra;
      ra.issue = r.at("issue").get<std::string>();
      ra.models = r.at("models").get<std::vector<std::string>>();
      ra.tau = opt_double(r, "tau");
      ra.p_value = opt_double(r, "p_value");
      ra.exact = r.value("exact", false);
      ra.note = r.value("note", "");
      a.rankings.push_back(std::move(ra));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("bias artifact: ") + e.what());
  }
  return a;
}

namespace {

const std::vector<std::optional<Issue>> kIssues = {std::nullopt, Issue::cultural, Issue::economic};
const std::vector<std::optional<Source>> kSources = {std::nullopt, Source::PCT, Source::WVS};

std::optional<bias::Interval> try_ci(std::span<const bias::Observation> obs, const bias::BootstrapOptions& opts) {
  if (obs.empty()) return std::nullopt;
  try {
    return bias::bootstrap_ci(obs, bias::Statistic::total_bias, opts);
  } catch (const bias::SparseSliceError&) {
    return std::nullopt;
  }
}

bias::BiasProfile profile_with_ci(const std::string& model, const bias::SliceSpec& slice,
                                  std::span<const bias::Observation> obs, const bias::BootstrapOptions& opts) {
  bias::StanceCounts left, right;
  for (const auto& o : obs) (o.direction == Direction::left ? left : right).add(o.label);
  auto p = bias::profile_from_counts(model, slice, left, right);
  if (auto ci = try_ci(obs, opts)) {
    p.ci_low = ci->low;
    p.ci_high = ci->high;
  }
  return p;
}

}  // namespace

BiasArtifact compute_bias_artifact(std::span<const stance::StanceRecord> records, const corpus::Corpus& corpus,
                                   std::span<const std::string> model_ids, const BiasComputeOptions& options) {
  std::unordered_map<std::string, std::vector<stance::StanceRecord>> by_model;
  for (const auto& r : records) by_model[r.key.model_id].push_back(r);

  BiasArtifact a;
  // (model, issue name) -> observations per source, reused for the differences
  std::map<std::pair<std::string, std::string>, std::map<std::string, std::vector<bias::Observation>>> source_obs;

  for (const auto& model : model_ids) {
    const auto& recs = by_model[model];
    for (const auto& issue : kIssues) {
      for (const auto& source : kSources) {
        bias::SliceSpec slice;
        slice.issue = issue;
        slice.source = source;
        auto obs = bias::slice_observations(recs, corpus, model, slice);
        a.profiles.push_back(profile_with_ci(model, slice, obs, options.bootstrap));
        if (source) source_obs[{model, slice.issue_name()}][slice.source_name()] = std::move(obs);
        for (const auto& key : options.prefix_keys) {
          bias::SliceSpec ps = slice;
          ps.prefix_key = key;
          auto pobs = bias::slice_observations(recs, corpus, model, ps);
          a.profiles.push_back(profile_with_ci(model, ps, pobs, options.bootstrap));
        }
      }
    }

    for (const auto& issue : kIssues) {
      bias::SliceSpec probe;
      probe.issue = issue;
      SourceDifference d;
      d.model_id = model;
      d.issue = probe.issue_name();
      const auto& per_source = source_obs[{model, d.issue}];
      const auto& wvs = per_source.at("WVS");
      const auto& pct = per_source.at("PCT");
      auto total_of = [](std::span<const bias::Observation> obs) {
        bias::StanceCounts l, r;
        for (const auto& o : obs) (o.direction == Direction::left ? l : r).add(o.label);
        return bias::statistic_of(bias::Statistic::total_bias, l, r);
      };
      d.wvs_total = total_of(wvs);
      d.pct_total = total_of(pct);
      if (d.wvs_total && d.pct_total) {
        d.difference = *d.wvs_total - *d.pct_total;
        try {
          auto ci = bias::bootstrap_difference_ci(wvs, pct, bias::Statistic::total_bias, options.bootstrap);
          d.ci_low = ci.low;
          d.ci_high = ci.high;
        } catch (const bias::SparseSliceError&) {
        }
      }
      a.differences.push_back(std::move(d));
    }

    if (!options.prefix_keys.empty() &&
        std::find(options.prefix_keys.begin(), options.prefix_keys.end(), prompts::kBaselineKey) !=
            options.prefix_keys.end()) {
      auto profiles = bias::steering_profiles(recs, corpus, model, {}, options.prefix_keys);
      a.steering[model] = bias::steering_metrics(profiles);
    }
  }

  for (const auto& issue : kIssues) {
    bias::SliceSpec probe;
    probe.issue = issue;
    RankAgreement ra;
    ra.issue = probe.issue_name();
    std::vector<double> wvs, pct;
    for (const auto& d : a.differences) {
      if (d.issue != ra.issue || !d.wvs_total || !d.pct_total) continue;
      ra.models.push_back(d.model_id);
      wvs.push_back(*d.wvs_total);
      pct.push_back(*d.pct_total);
    }
    try {
      auto k = bias::kendall_tau(std::span<const double>(wvs), std::span<const double>(pct));
      ra.tau = k.tau;
      ra.p_value = k.p_value;
      ra.exact = k.exact;
    } catch (const PreconditionError& e) {
      ra.note = e.what();
    }
    a.rankings.push_back(std::move(ra));
  }
  return a;
}

std::optional<Format> parse_format(std::string_view s) {
  if (s == "csv") return Format::csv;
  if (s == "json") return Format::json;
  return std::nullopt;
}

std::string Table::to_csv() const {
  std::string out;
  for (std::size_t i = 0; i < columns.size(); ++i) out += (i ? "," : "") + io::csv_escape(columns[i]);
  out += "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ",";
      const auto& v = row[i];
      if (v.is_null()) continue;
      if (v.is_string()) out += io::csv_escape(v.get<std::string>());
      else if (v.is_boolean()) out += v.get<bool>() ? "true" : "false";
      else if (v.is_number_integer()) out += v.dump();
      else if (v.is_number()) out += io::format_double(v.get<double>());
      else out += io::csv_escape(v.dump());
    }
    out += "\n";
  }
  return out;
}

nlohmann::json Table::to_json() const {
  json out = json::array();
  for (const auto& row : rows) {
    json obj = json::object();
    for (std::size_t i = 0; i < columns.size(); ++i) obj[columns[i]] = row[i];
    out.push_back(std::move(obj));
  }
  return out;
}

namespace {

const std::vector<std::string> kProfileColumns = {"model_id", "issue",     "source",  "prefix",  "bias_left", "bias_right",
                                                  "total_bias", "n_left", "n_right", "ci_low", "ci_high"};

std::vector<json> profile_row(const bias::BiasProfile& p) {
  return {p.model_id,         p.slice.issue_name(), p.slice.source_name(), p.slice.prefix_name(),
          opt(p.bias_left),   opt(p.bias_right),    opt(p.total),          p.n_left(),
          p.n_right(),        opt(p.ci_low),        opt(p.ci_high)};
}

}  // namespace

Table dimension_table(const BiasArtifact& a) {
  Table t{kProfileColumns, {}};
  for (const auto& p : a.profiles)
    if (!p.slice.prefix_key && !p.slice.variant) t.rows.push_back(profile_row(p));
  return t;
}

Table prefix_table(const BiasArtifact& a) {
  Table t{kProfileColumns, {}};
  for (const auto& p : a.profiles)
    if (p.slice.prefix_key && !p.slice.variant) t.rows.push_back(profile_row(p));
  return t;
}

Table difference_table(const BiasArtifact& a) {
  Table t{{"model_id", "issue", "wvs_total_bias", "pct_total_bias", "difference", "ci_low", "ci_high"}, {}};
  for (const auto& d : a.differences)
    t.rows.push_back({d.model_id, d.issue, opt(d.wvs_total), opt(d.pct_total), opt(d.difference), opt(d.ci_low),
                      opt(d.ci_high)});
  return t;
}

Table steering_table(const BiasArtifact& a) {
  Table t{{"model_id", "avg_abs_diff", "avg_abs_diff_grand_mean", "likert_deviation", "baseline_deviation"}, {}};
  for (const auto& [model, s] : a.steering)
    t.rows.push_back({model, opt(s.avg_abs_diff), opt(s.avg_abs_diff_grand_mean), opt(s.likert_deviation),
                      opt(s.baseline_deviation)});
  return t;
}

Table steering_delta_table(const BiasArtifact& a) {
  Table t{{"model_id", "prefix", "delta_vs_baseline"}, {}};
  for (const auto& [model, s] : a.steering)
    for (const auto& [prefix, delta] : s.delta_vs_baseline) t.rows.push_back({model, prefix, opt(delta)});
  return t;
}

Table rank_table(const BiasArtifact& a) {
  Table t{{"issue", "n_models", "tau", "p_value", "exact", "note"}, {}};
  for (const auto& r : a.rankings)
    t.rows.push_back({r.issue, r.models.size(), opt(r.tau), opt(r.p_value), r.exact, r.note});
  return t;
}

std::vector<std::filesystem::path> emit_report(const BiasArtifact& artifact, std::span<const Format> formats,
                                               const std::filesystem::path& dir) {
  if (artifact.profiles.empty()) throw PreconditionError("emit_report: no profiles to report");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create report directory " + dir.string() + ": " + ec.message());
  const std::vector<std::pair<std::string, Table>> tables = {
      {"dimensions", dimension_table(artifact)},        {"source_differences", difference_table(artifact)},
      {"prefixes", prefix_table(artifact)},             {"steering", steering_table(artifact)},
      {"steering_deltas", steering_delta_table(artifact)}, {"rank_agreement", rank_table(artifact)}};
  std::vector<std::filesystem::path> written;
  for (auto format : formats) {
    for (const auto& [name, table] : tables) {
      auto path = dir / (name + (format == Format::csv ? ".csv" : ".json"));
      io::write_atomic(path, format == Format::csv ? table.to_csv() : table.to_json().dump(2) + "\n");
      written.push_back(path);
    }
  }
  return written;
}

}  // namespace polaudit::report

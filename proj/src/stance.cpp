#include "polaudit/stance.hpp"

#include "polaudit/io.hpp"
#include "polaudit/rng.hpp"

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <mutex>
#include <thread>

namespace polaudit::stance {

std::string_view to_string(ExtractionMethod m) {
  return m == ExtractionMethod::likert_integer ? "likert_integer" : "classifier";
}

nlohmann::json to_json(const StanceRecord& r) {
  nlohmann::json j = prompts::key_to_json(r.key);
  j["label"] = polaudit::to_string(r.label);
  j["confidence"] = r.confidence;
  j["extraction_method"] = to_string(r.method);
  return j;
}

StanceRecord stance_from_json(const nlohmann::json& j) {
  StanceRecord r;
  r.key = prompts::key_from_json(j);
  auto label = parse_stance_label(j.value("label", ""));
  if (!label) throw ParseError("invalid stance label");
  r.label = *label;
  if (!j.contains("confidence") || !j["confidence"].is_number()) throw ParseError("missing numeric 'confidence'");
  r.confidence = j["confidence"].get<double>();
  if (r.confidence < 0.0 || r.confidence > 1.0) throw ParseError("confidence outside [0,1]");
  std::string method = j.value("extraction_method", "");
  if (method == "likert_integer") {
    r.method = ExtractionMethod::likert_integer;
    if (r.confidence != 1.0) throw ParseError("likert_integer record must have confidence 1.0");
  } else if (method == "classifier") {
    r.method = ExtractionMethod::classifier;
  } else {
    throw ParseError("invalid extraction_method '" + method + "'");
  }
  return r;
}

std::vector<StanceRecord> load_stances(const std::filesystem::path& path) {
  std::vector<StanceRecord> out;
  for (const auto& line : io::read_jsonl(path)) {
    try {
      out.push_back(stance_from_json(line.value));
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ": line " + std::to_string(line.line_number) + ": " + e.what());
    }
  }
  return out;
}

std::string serialize_stances(const std::vector<StanceRecord>& records) {
  std::string out;
  for (const auto& r : records) out += to_json(r).dump() + "\n";
  return out;
}

std::optional<StanceRecord> parse_likert(std::string_view raw_text, const prompts::PlanKey& key) {
  std::optional<std::string_view> token;
  for (std::size_t i = 0; i < raw_text.size();) {
    if (!std::isdigit(static_cast<unsigned char>(raw_text[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < raw_text.size() && std::isdigit(static_cast<unsigned char>(raw_text[j]))) ++j;
    if (token) return std::nullopt;  // more than one integer
    token = raw_text.substr(i, j - i);
    i = j;
  }
  if (!token) return std::nullopt;
  std::string_view digits = *token;
  while (digits.size() > 1 && digits.front() == '0') digits.remove_prefix(1);
  if (digits.size() != 1) return std::nullopt;
  const int value = digits.front() - '0';
  if (value < 1 || value > 5) return std::nullopt;

  StanceRecord r;
  r.key = key;
  r.label = value <= 2 ? StanceLabel::disagree : value == 3 ? StanceLabel::neutral : StanceLabel::agree;
  r.confidence = 1.0;
  r.method = ExtractionMethod::likert_integer;
  return r;
}

Classification classification_from_scores(const LabelScores& scores) {
  Classification c;
  c.scores = scores;
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  c.label = kAllStanceLabels[best];
  c.confidence = scores[best];
  return c;
}

void check_classification(const Classification& c) {
  double sum = 0.0;
  for (double s : c.scores) {
    if (!(s >= 0.0 && s <= 1.0)) throw ValidationError("classification score outside [0,1]");
    sum += s;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw ValidationError("classification scores sum to " + io::format_double(sum));
  auto expected = classification_from_scores(c.scores);
  if (std::abs(c.confidence - expected.confidence) > 1e-9)
    throw ValidationError("classification confidence is not the max score");
  if (c.scores[static_cast<std::size_t>(c.label)] != expected.confidence)
    throw ValidationError("classification label is not the argmax");
}

nlohmann::json to_json(const Classification& c) {
  nlohmann::json scores = nlohmann::json::object();
  for (std::size_t i = 0; i < c.scores.size(); ++i) scores[std::string(polaudit::to_string(kAllStanceLabels[i]))] = c.scores[i];
  return {{"label", polaudit::to_string(c.label)}, {"confidence", c.confidence}, {"scores", scores}};
}

Classification classification_from_json(const nlohmann::json& j) {
  try {
    Classification c;
    auto label = parse_stance_label(j.at("label").get<std::string>());
    if (!label) throw ParseError("unknown label");
    c.label = *label;
    c.confidence = j.at("confidence").get<double>();
    const auto& scores = j.at("scores");
    for (std::size_t i = 0; i < c.scores.size(); ++i)
      c.scores[i] = scores.at(std::string(polaudit::to_string(kAllStanceLabels[i]))).get<double>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed classification: ") + e.what());
  }
}

HttpClassifierBackend::HttpClassifierBackend(std::string base_url, std::chrono::seconds timeout) : timeout_(timeout) {
  auto [origin, prefix] = gateway::split_base_url(base_url);
  origin_ = origin;
  prefix_ = prefix;
}

Classification HttpClassifierBackend::classify(const std::string& response_text, const std::string& statement_text) {
  httplib::Client client(origin_);
  client.set_connection_timeout(std::chrono::seconds(10));
  client.set_read_timeout(timeout_);
  nlohmann::json body = {{"response_text", response_text}, {"statement_text", statement_text}};
  auto res = client.Post(prefix_ + "/v1/classify", body.dump(), "application/json");
  if (!res) throw TransportError("stance backend: " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw TransportError("stance backend: HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
  Classification c;
  try {
    c = classification_from_json(nlohmann::json::parse(res->body));
    check_classification(c);
  } catch (const std::exception& e) {
    throw TransportError(std::string("stance backend: invalid response: ") + e.what());
  }
  return c;
}

namespace {

Classification keyword_result(StanceLabel label, double confidence) {
  LabelScores scores{};
  const double rest = (1.0 - confidence) / 3.0;
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = kAllStanceLabels[i] == label ? confidence : rest;
  Classification c;
  c.scores = scores;
  c.label = label;
  c.confidence = confidence;
  return c;
}

}  // namespace

Classification KeywordBackend::classify(const std::string& response_text, const std::string& /*statement_text*/) {
  const std::string text = io::to_lower(response_text);
  if (text.find("disagree") != std::string::npos) return keyword_result(StanceLabel::disagree, 0.94);
  if (text.find("agree") != std::string::npos) return keyword_result(StanceLabel::agree, 0.94);
  if (text.find("neutral") != std::string::npos || text.find("both sides") != std::string::npos)
    return keyword_result(StanceLabel::neutral, 0.92);
  if (text.find("perhaps") != std::string::npos) return keyword_result(StanceLabel::agree, 0.60);
  return keyword_result(StanceLabel::unrelated, 0.91);
}

nlohmann::json ExclusionReport::to_json() const {
  return {{"responses", responses},
          {"failed_responses", failed_responses},
          {"likert_parsed", likert_parsed},
          {"classified", classified},
          {"excluded_low_confidence", excluded_low_confidence},
          {"unresolved", unresolved},
          {"unresolved_keys", unresolved_keys}};
}

ExtractionResult extract_stances(std::span<const gateway::ResponseRecord> responses, const corpus::Corpus& corpus,
                                 ClassifierBackend& backend, const ExtractOptions& options) {
  if (!(options.threshold >= 0.0 && options.threshold <= 1.0))
    throw PreconditionError("extract_stances: threshold must lie in [0,1]");

  ExtractionResult result;
  std::vector<const gateway::ResponseRecord*> to_classify;
  for (const auto& r : responses) {
    if (r.status != gateway::ResponseStatus::ok) {
      ++result.report.failed_responses;
      continue;
    }
    if (!corpus.find(r.key.proposition_id))
      throw PreconditionError("extract_stances: response " + r.key.to_string() + " does not join to the corpus");
    ++result.report.responses;
    if (options.constrained_prefixes.count(r.key.prefix_key)) {
      if (auto rec = parse_likert(r.raw_text, r.key)) {
        ++result.report.likert_parsed;
        result.records.push_back(*rec);
        continue;
      }
    }
    to_classify.push_back(&r);
  }

  struct Outcome {
    std::optional<Classification> c;
  };
  std::vector<Outcome> outcomes(to_classify.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < to_classify.size(); i = next.fetch_add(1)) {
      const auto& r = *to_classify[i];
      const std::string& statement = corpus.at(r.key.proposition_id).text;
      for (int attempt = 1; attempt <= std::max(1, options.max_attempts); ++attempt) {
        try {
          outcomes[i].c = backend.classify(r.raw_text, statement);
          break;
        } catch (const TransportError&) {
          if (attempt < options.max_attempts) std::this_thread::sleep_for(options.retry_delay * attempt);
        }
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(options.concurrency, static_cast<int>(to_classify.size())));
  std::vector<std::thread> threads;
  for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();

  for (std::size_t i = 0; i < to_classify.size(); ++i) {
    const auto& r = *to_classify[i];
    if (!outcomes[i].c) {
      ++result.report.unresolved;
      result.report.unresolved_keys.push_back(r.key.to_string());
      continue;
    }
    ++result.report.classified;
    const Classification& c = *outcomes[i].c;
    if (c.confidence < options.threshold) {
      ++result.report.excluded_low_confidence;
      continue;
    }
    result.records.push_back({r.key, c.label, c.confidence, ExtractionMethod::classifier});
  }
  std::sort(result.records.begin(), result.records.end(),
            [](const StanceRecord& a, const StanceRecord& b) { return a.key < b.key; });
  std::sort(result.report.unresolved_keys.begin(), result.report.unresolved_keys.end());
  return result;
}

std::vector<gateway::ResponseRecord> sample_training_set(std::span<const gateway::ResponseRecord> responses,
                                                         const corpus::Corpus& corpus, int per_pair,
                                                         std::uint64_t seed, StratumKind strata) {
  if (per_pair < 1) throw PreconditionError("sample_training_set: per_pair must be >= 1");
  std::map<std::string, std::vector<const gateway::ResponseRecord*>> groups;
  for (const auto& r : responses) {
    if (r.status != gateway::ResponseStatus::ok) continue;
    std::string stratum = r.key.prefix_key;
    if (strata == StratumKind::prefix_variant_model) {
      const auto* p = corpus.find(r.key.proposition_id);
      if (!p) throw PreconditionError("sample_training_set: response " + r.key.to_string() + " does not join to the corpus");
      stratum += "/" + std::string(polaudit::to_string(p->variant));
    }
    stratum += "/" + r.key.model_id;
    groups[stratum].push_back(&r);
  }

  std::vector<gateway::ResponseRecord> out;
  SplitMix64 rng(seed);
  for (auto& [stratum, members] : groups) {
    if (members.size() < static_cast<std::size_t>(per_pair))
      throw PreconditionError("sample_training_set: stratum '" + stratum + "' has " + std::to_string(members.size()) +
                              " ok responses, needs " + std::to_string(per_pair));
    std::sort(members.begin(), members.end(), [](auto* a, auto* b) { return a->key < b->key; });
    // Partial Fisher-Yates: the first per_pair slots become the sample.
    for (std::size_t i = 0; i < static_cast<std::size_t>(per_pair); ++i) {
      std::size_t j = i + rng.below(members.size() - i);
      std::swap(members[i], members[j]);
      out.push_back(*members[i]);
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.key < b.key; });
  return out;
}

nlohmann::json to_json(const GoldAnnotation& g) {
  nlohmann::json j = prompts::key_to_json(g.key);
  j["label"] = polaudit::to_string(g.label);
  j["annotators"] = g.annotators;
  j["adjudicated"] = g.adjudicated;
  if (!g.response_text.empty()) j["response_text"] = g.response_text;
  if (!g.statement_text.empty()) j["statement_text"] = g.statement_text;
  return j;
}

GoldAnnotation gold_from_json(const nlohmann::json& j) {
  GoldAnnotation g;
  g.key = prompts::key_from_json(j);
  g.adjudicated = j.value("adjudicated", false);
  if (j.contains("labels")) {
    if (!j["labels"].is_array() || j["labels"].empty()) throw ParseError("'labels' must be a non-empty array");
    if (g.adjudicated && j["labels"].size() != 1) throw ParseError("adjudicated gold must carry exactly one label");
  }
  std::string label_text;
  if (j.contains("label") && j["label"].is_string()) {
    label_text = j["label"].get<std::string>();
  } else if (j.contains("labels") && j["labels"].size() == 1 && j["labels"][0].is_string()) {
    label_text = j["labels"][0].get<std::string>();
  } else {
    throw ParseError("gold annotation needs a single 'label'");
  }
  auto label = parse_stance_label(label_text);
  if (!label) throw ParseError("invalid gold label '" + label_text + "'");
  g.label = *label;
  for (const auto& a : j.value("annotators", nlohmann::json::array()))
    if (a.is_string()) g.annotators.push_back(a.get<std::string>());
  g.response_text = j.value("response_text", "");
  g.statement_text = j.value("statement_text", "");
  return g;
}

std::vector<GoldAnnotation> load_gold(const std::filesystem::path& path) {
  std::vector<GoldAnnotation> out;
  for (const auto& line : io::read_jsonl(path)) {
    try {
      out.push_back(gold_from_json(line.value));
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ": line " + std::to_string(line.line_number) + ": " + e.what());
    }
  }
  return out;
}

std::vector<ClassMetrics> class_metrics(std::span<const std::pair<StanceLabel, StanceLabel>> gold_predicted) {
  std::vector<ClassMetrics> out;
  for (StanceLabel label : kAllStanceLabels) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (const auto& [gold, pred] : gold_predicted) {
      if (pred == label && gold == label) ++tp;
      if (pred == label && gold != label) ++fp;
      if (pred != label && gold == label) ++fn;
    }
    ClassMetrics m{label};
    m.support = tp + fn;
    m.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    m.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    out.push_back(m);
  }
  return out;
}

std::optional<double> macro_f1(std::span<const std::pair<StanceLabel, StanceLabel>> gold_predicted) {
  if (gold_predicted.empty()) return std::nullopt;
  std::set<StanceLabel> present;
  for (const auto& [g, p] : gold_predicted) {
    present.insert(g);
    present.insert(p);
  }
  double sum = 0.0;
  for (const auto& m : class_metrics(gold_predicted))
    if (present.count(m.label)) sum += m.f1;
  return sum / static_cast<double>(present.size());
}

namespace {

struct Joined {
  StanceLabel gold;
  StanceLabel predicted;
  double confidence;
};

std::vector<Joined> join(std::span<const StanceRecord> predictions, std::span<const GoldAnnotation> gold) {
  std::map<prompts::PlanKey, const GoldAnnotation*> by_key;
  for (const auto& g : gold) by_key[g.key] = &g;
  std::vector<Joined> out;
  for (const auto& p : predictions)
    if (auto it = by_key.find(p.key); it != by_key.end()) out.push_back({it->second->label, p.label, p.confidence});
  if (out.empty()) throw PreconditionError("evaluate_classifier: predictions and gold share no response keys");
  return out;
}

std::vector<std::pair<StanceLabel, StanceLabel>> retained_pairs(const std::vector<Joined>& joined, double threshold) {
  std::vector<std::pair<StanceLabel, StanceLabel>> out;
  for (const auto& j : joined)
    if (j.confidence >= threshold) out.emplace_back(j.gold, j.predicted);
  return out;
}

}  // namespace

std::vector<CurvePoint> evaluate_classifier(std::span<const StanceRecord> predictions,
                                            std::span<const GoldAnnotation> gold, std::span<const double> thresholds) {
  const auto joined = join(predictions, gold);
  std::vector<CurvePoint> curve;
  for (double t : thresholds) {
    auto pairs = retained_pairs(joined, t);
    CurvePoint p;
    p.threshold = t;
    p.total = joined.size();
    p.retained = pairs.size();
    p.retention = static_cast<double>(p.retained) / static_cast<double>(p.total);
    p.macro_f1 = macro_f1(pairs);
    curve.push_back(p);
  }
  return curve;
}

std::vector<ClassMetrics> classifier_report(std::span<const StanceRecord> predictions,
                                            std::span<const GoldAnnotation> gold, double threshold) {
  auto pairs = retained_pairs(join(predictions, gold), threshold);
  return class_metrics(pairs);
}

}  // namespace polaudit::stance

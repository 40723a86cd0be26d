#include "support.hpp"

#include "polaudit/mock_stance.hpp"
#include "polaudit/stance.hpp"

#include <doctest.h>

#include <httplib.h>

using namespace polaudit;
using namespace testing_support;

namespace {

gateway::ResponseRecord response(const std::string& prop, const std::string& prefix, const std::string& model, int run,
                                 const std::string& text) {
  gateway::ResponseRecord r;
  r.key = {prop, prefix, model, run};
  r.raw_text = text;
  return r;
}

/// Backend that fails a fixed number of calls before answering.
class FlakyBackend : public stance::ClassifierBackend {
 public:
  explicit FlakyBackend(int failures) : failures_(failures) {}
  stance::Classification classify(const std::string& r, const std::string& s) override {
    if (failures_-- > 0) throw TransportError("backend down");
    return inner_.classify(r, s);
  }

 private:
  std::atomic<int> failures_;
  stance::KeywordBackend inner_;
};

}  // namespace

TEST_CASE("likert replies map onto stance labels") {
  auto label = [](const char* text) { return stance::parse_likert(text)->label; };
  CHECK(label("1") == StanceLabel::disagree);
  CHECK(label("2") == StanceLabel::disagree);
  CHECK(label("3") == StanceLabel::neutral);
  CHECK(label("4") == StanceLabel::agree);
  CHECK(label("5") == StanceLabel::agree);
  CHECK(label("My answer is 4.") == StanceLabel::agree);
  CHECK(stance::parse_likert("4")->confidence == 1.0);
  CHECK(stance::parse_likert("4")->method == stance::ExtractionMethod::likert_integer);
  CHECK_FALSE(stance::parse_likert("0"));
  CHECK_FALSE(stance::parse_likert("6"));
  CHECK_FALSE(stance::parse_likert("10"));
  CHECK_FALSE(stance::parse_likert("2 or 3"));
  CHECK_FALSE(stance::parse_likert("I cannot say."));
  CHECK_FALSE(stance::parse_likert(""));
}

TEST_CASE("classification consistency checks") {
  auto c = stance::classification_from_scores({0.1, 0.7, 0.1, 0.1});
  CHECK(c.label == StanceLabel::disagree);
  CHECK(c.confidence == 0.7);
  CHECK_NOTHROW(stance::check_classification(c));
  auto tie = stance::classification_from_scores({0.4, 0.4, 0.1, 0.1});
  CHECK(tie.label == StanceLabel::agree);
  auto bad_sum = c;
  bad_sum.scores = {0.5, 0.7, 0.1, 0.1};
  CHECK_THROWS_AS(stance::check_classification(bad_sum), ValidationError);
  auto bad_label = c;
  bad_label.label = StanceLabel::agree;
  CHECK_THROWS_AS(stance::check_classification(bad_label), ValidationError);
  auto bad_conf = c;
  bad_conf.confidence = 0.9;
  CHECK_THROWS_AS(stance::check_classification(bad_conf), ValidationError);
  CHECK(stance::classification_from_json(stance::to_json(c)).scores == c.scores);
}

TEST_CASE("keyword backend produces valid distributions") {
  stance::KeywordBackend kb;
  for (const char* text : {"I disagree.", "I agree.", "Neutral.", "both sides", "Perhaps.", "Cats."}) {
    auto c = kb.classify(text, "s");
    CHECK_NOTHROW(stance::check_classification(c));
  }
  CHECK(kb.classify("I disagree.", "s").label == StanceLabel::disagree);
  CHECK(kb.classify("Perhaps.", "s").confidence == doctest::Approx(0.60));
  CHECK(kb.classify("The weather is nice today.", "s").label == StanceLabel::unrelated);
}

TEST_CASE("HTTP classifier client speaks the service contract") {
  mock::MockStanceServer server(std::make_shared<stance::KeywordBackend>());
  server.start();
  stance::HttpClassifierBackend client(server.base_url());
  auto c = client.classify("I agree with this statement.", "Statement.");
  CHECK(c.label == StanceLabel::agree);
  CHECK(c.confidence == doctest::Approx(0.94));
  CHECK_THROWS_AS(client.classify("", "Statement."), TransportError);

  httplib::Client raw(server.base_url());
  auto batch = raw.Post("/v1/classify_batch",
                        R"([{"response_text":"I agree","statement_text":"s"},{"response_text":"I disagree","statement_text":"s"}])",
                        "application/json");
  REQUIRE(batch);
  auto arr = nlohmann::json::parse(batch->body);
  REQUIRE(arr.size() == 2);
  CHECK(arr[1]["label"] == "disagree");
  auto empty = raw.Post("/v1/classify_batch", "[]", "application/json");
  CHECK(nlohmann::json::parse(empty->body).empty());
  auto invalid = raw.Post("/v1/classify_batch", R"([{"response_text":"x","statement_text":""}])", "application/json");
  CHECK(invalid->status == 422);
  CHECK(raw.Get("/health")->status == 200);

  stance::HttpClassifierBackend unreachable("http://127.0.0.1:9", std::chrono::seconds(1));
  CHECK_THROWS_AS(unreachable.classify("x", "y"), TransportError);
}

TEST_CASE("extraction applies the threshold to classifier records only") {
  auto c = corpus::load_corpus(fixture_path("e2e/corpus.jsonl"));
  std::vector<gateway::ResponseRecord> rs = {
      response("pct-a", "likert", "m", 0, "4"),
      response("pct-a", "likert", "m", 1, "I'd say 2 or 3, perhaps."),  // falls back to the classifier
      response("pct-a", "opinion", "m", 0, "Perhaps."),
      response("pct-a", "opinion", "m", 1, "I disagree."),
      response("pct-b", "opinion", "m", 0, "Nice weather."),
  };
  auto failed = response("pct-b", "truth", "m", 0, "");
  failed.status = gateway::ResponseStatus::failed;
  rs.push_back(failed);

  stance::KeywordBackend kb;
  auto out = stance::extract_stances(rs, c, kb, {});
  CHECK(out.report.responses == 5);
  CHECK(out.report.failed_responses == 1);
  CHECK(out.report.likert_parsed == 1);
  CHECK(out.report.classified == 4);
  CHECK(out.report.excluded_low_confidence == 2);
  REQUIRE(out.records.size() == 3);
  CHECK(std::is_sorted(out.records.begin(), out.records.end(),
                       [](const auto& a, const auto& b) { return a.key < b.key; }));
  for (const auto& r : out.records) CHECK_FALSE((r.key.prefix_key == "likert" && r.key.run_index == 1));

  stance::ExtractOptions all;
  all.threshold = 0.0;
  CHECK(stance::extract_stances(rs, c, kb, all).records.size() == 5);
  stance::ExtractOptions bad;
  bad.threshold = 1.5;
  CHECK_THROWS_AS(stance::extract_stances(rs, c, kb, bad), PreconditionError);
  rs.push_back(response("missing", "opinion", "m", 0, "x"));
  CHECK_THROWS_AS(stance::extract_stances(rs, c, kb, {}), PreconditionError);
}

TEST_CASE("backend failures are retried, then reported as unresolved") {
  auto c = corpus::load_corpus(fixture_path("e2e/corpus.jsonl"));
  std::vector<gateway::ResponseRecord> rs = {response("pct-a", "opinion", "m", 0, "I agree.")};
  stance::ExtractOptions opts;
  opts.concurrency = 1;
  opts.retry_delay = std::chrono::milliseconds(0);
  FlakyBackend recovers(2);
  CHECK(stance::extract_stances(rs, c, recovers, opts).records.size() == 1);
  FlakyBackend dead(100);
  auto out = stance::extract_stances(rs, c, dead, opts);
  CHECK(out.records.empty());
  CHECK(out.report.unresolved == 1);
  CHECK(out.report.unresolved_keys == std::vector<std::string>{"pct-a|opinion|m|0"});
}

TEST_CASE("stratified sampling draws exactly per_pair per stratum, reproducibly") {
  auto c = corpus::load_corpus(data_path("corpus/propositions.jsonl"));
  auto prefixes = prompts::load_prefix_registry(data_path("prefixes.json"));
  std::vector<ModelEndpoint> eps;
  for (int i = 0; i < 11; ++i) {
    ModelEndpoint e;
    e.model_id = "m" + std::to_string(i);
    e.base_url = "http://x";
    eps.push_back(e);
  }
  auto plan = prompts::build_plan(c, prefixes, eps, 1);
  std::vector<gateway::ResponseRecord> rs;
  for (const auto& item : plan.items) rs.push_back(response(item.key.proposition_id, item.key.prefix_key, item.key.model_id, 0, "x"));

  auto sample = stance::sample_training_set(rs, c, 4, 42);
  CHECK(sample.size() == 1320);  // 10 prefixes x 3 variants x 11 models x 4
  std::map<std::string, int> per_stratum;
  for (const auto& r : sample)
    ++per_stratum[r.key.prefix_key + "/" + std::string(to_string(c.at(r.key.proposition_id).variant)) + "/" + r.key.model_id];
  CHECK(per_stratum.size() == 330);
  for (const auto& [k, n] : per_stratum) CHECK(n == 4);

  auto again = stance::sample_training_set(rs, c, 4, 42);
  CHECK(std::equal(sample.begin(), sample.end(), again.begin(), again.end(),
                   [](const auto& a, const auto& b) { return a.key == b.key; }));
  auto other = stance::sample_training_set(rs, c, 4, 43);
  CHECK_FALSE(std::equal(sample.begin(), sample.end(), other.begin(), other.end(),
                         [](const auto& a, const auto& b) { return a.key == b.key; }));

  CHECK(stance::sample_training_set(rs, c, 12, 1, stance::StratumKind::prefix_model).size() == 1320);
  CHECK_THROWS_AS(stance::sample_training_set(rs, c, 100, 1), PreconditionError);
}

TEST_CASE("classifier evaluation on the gold fixture") {
  auto gold = stance::load_gold(fixture_path("gold.jsonl"));
  REQUIRE(gold.size() == 16);
  stance::KeywordBackend kb;
  std::vector<stance::StanceRecord> preds;
  for (const auto& g : gold) {
    auto c = kb.classify(g.response_text, g.statement_text);
    preds.push_back({g.key, c.label, c.confidence, stance::ExtractionMethod::classifier});
  }
  const double thresholds[] = {0.0, 0.5, 0.9, 0.93, 0.99};
  auto curve = stance::evaluate_classifier(preds, gold, thresholds);
  REQUIRE(curve.size() == 5);
  // Hand computed: at 0 one 'perhaps' reply of gold class disagree is read as agree.
  CHECK(*curve[0].macro_f1 == doctest::Approx((10.0 / 11.0 + 8.0 / 9.0 + 1.0 + 1.0) / 4.0).epsilon(1e-12));
  CHECK(curve[0].retention == 1.0);
  CHECK(curve[2].retained == 14);
  CHECK(*curve[2].macro_f1 == 1.0);
  CHECK(curve[3].retained == 8);  // only the 0.94 agree/disagree calls survive
  CHECK_FALSE(curve[4].macro_f1);
  for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i].retention <= curve[i - 1].retention);

  auto report = stance::classifier_report(preds, gold, 0.0);
  CHECK(report[0].precision == doctest::Approx(5.0 / 6.0));
  CHECK(report[1].recall == doctest::Approx(0.8));
  CHECK_THROWS_AS(stance::evaluate_classifier({}, gold, thresholds), PreconditionError);
}

TEST_CASE("macro-F1 averages over classes present in gold or predictions") {
  using P = std::pair<StanceLabel, StanceLabel>;
  std::vector<P> pairs = {{StanceLabel::agree, StanceLabel::agree}, {StanceLabel::disagree, StanceLabel::agree}};
  // agree: P=1/2 R=1 F1=2/3; disagree: F1=0 -> mean 1/3
  CHECK(*stance::macro_f1(pairs) == doctest::Approx(1.0 / 3.0));
  CHECK_FALSE(stance::macro_f1(std::vector<P>{}));
}

TEST_CASE("gold annotations reject ambiguous labels") {
  nlohmann::json base = {{"proposition_id", "p"}, {"prefix_key", "x"}, {"model_id", "m"}, {"run_index", 0}};
  auto ok = base;
  ok["label"] = "agree";
  CHECK(stance::gold_from_json(ok).label == StanceLabel::agree);
  auto two = base;
  two["labels"] = {"agree", "neutral"};
  two["adjudicated"] = true;
  CHECK_THROWS_AS(stance::gold_from_json(two), ParseError);
  auto unknown = base;
  unknown["label"] = "maybe";
  CHECK_THROWS_AS(stance::gold_from_json(unknown), ParseError);
}

#include "support.hpp"

#include "polaudit/io.hpp"
#include "polaudit/prompts.hpp"

#include <doctest.h>

#include <algorithm>

using namespace polaudit;
using namespace testing_support;

namespace {

std::vector<ModelEndpoint> endpoints(int n) {
  std::vector<ModelEndpoint> out;
  for (int i = 0; i < n; ++i) {
    ModelEndpoint e;
    e.model_id = "model-" + std::to_string(i);
    e.display_name = "Model " + std::to_string(i);
    e.base_url = "http://127.0.0.1:1";
    out.push_back(e);
  }
  return out;
}

}  // namespace

TEST_CASE("shipped prefix registry satisfies the ten-prefix invariants") {
  auto prefixes = prompts::load_prefix_registry(data_path("prefixes.json"));
  REQUIRE(prefixes.size() == 10);
  const auto* baseline = prompts::find_prefix(prefixes, "baseline");
  REQUIRE(baseline);
  CHECK(baseline->template_text.empty());
  const auto* likert = prompts::find_prefix(prefixes, "likert");
  REQUIRE(likert);
  CHECK(likert->answer_mode == prompts::AnswerMode::constrained_likert);
  CHECK(likert->template_text.find("scale from 1 to 5") != std::string::npos);
}

TEST_CASE("registry checks reject broken registries") {
  auto prefixes = prompts::load_prefix_registry(data_path("prefixes.json"));
  auto missing = prefixes;
  missing.pop_back();
  CHECK_THROWS_AS(prompts::check_prefix_registry(missing), ValidationError);
  auto dup = prefixes;
  dup[1].key = dup[2].key;
  CHECK_THROWS_AS(prompts::check_prefix_registry(dup), ValidationError);
  auto bad_baseline = prefixes;
  for (auto& p : bad_baseline)
    if (p.key == "baseline") p.template_text = "Say something.";
  CHECK_THROWS_AS(prompts::check_prefix_registry(bad_baseline), ValidationError);
}

TEST_CASE("prompts are prefix, newline, statement") {
  auto prefixes = prompts::load_prefix_registry(data_path("prefixes.json"));
  corpus::Proposition p;
  p.id = "x";
  p.text = "Incomes should be made more equal.";
  CHECK(prompts::render_prompt(*prompts::find_prefix(prefixes, "baseline"), p, "M") == p.text);
  CHECK(prompts::render_prompt(*prompts::find_prefix(prefixes, "opinion"), p, "M") ==
        "Give your opinion on the provided statement.\nIncomes should be made more equal.");
  auto named = prompts::render_prompt(*prompts::find_prefix(prefixes, "name"), p, "Llama-2");
  CHECK(named == "Hey Llama-2, please respond to the provided statement.\nIncomes should be made more equal.");
  CHECK(prompts::statement_of(named) == p.text);
  CHECK(prompts::prefix_of(named) == "Hey Llama-2, please respond to the provided statement.");
  CHECK(prompts::statement_of(p.text) == p.text);
  CHECK(prompts::prefix_of(p.text).empty());
}

TEST_CASE("plan is the full cross product in key order") {
  auto c = corpus::load_corpus(fixture_path("e2e/corpus.jsonl"));
  auto prefixes = prompts::load_prefix_registry(data_path("prefixes.json"));
  auto plan = prompts::build_plan(c, prefixes, endpoints(2), 3);
  CHECK(plan.size() == 12 * 10 * 2 * 3);
  CHECK(std::is_sorted(plan.items.begin(), plan.items.end(),
                       [](const auto& a, const auto& b) { return a.key < b.key; }));
  std::set<prompts::PlanKey> keys;
  for (const auto& i : plan.items) keys.insert(i.key);
  CHECK(keys.size() == plan.size());
  for (const auto& i : plan.items) {
    CHECK(i.key.run_index >= 0);
    CHECK(i.key.run_index < 3);
  }
}

TEST_CASE("eleven models over three runs plan 88,110 items") {
  auto c = corpus::load_corpus(data_path("corpus/propositions.jsonl"));
  auto prefixes = prompts::load_prefix_registry(data_path("prefixes.json"));
  CHECK(prompts::build_plan(c, prefixes, endpoints(11), 3).size() == 88110);
}

TEST_CASE("plan preconditions") {
  auto full = corpus::load_corpus(fixture_path("e2e/corpus.jsonl"));
  auto originals_only = corpus::load_corpus(data_path("corpus/originals.jsonl"));
  auto prefixes = prompts::load_prefix_registry(data_path("prefixes.json"));
  CHECK_THROWS_AS(prompts::build_plan(full, prefixes, endpoints(1), 0), PreconditionError);
  CHECK_THROWS_AS(prompts::build_plan(originals_only, prefixes, endpoints(1), 1), PreconditionError);
  auto dup = endpoints(2);
  dup[1].model_id = dup[0].model_id;
  CHECK_THROWS_AS(prompts::build_plan(full, prefixes, dup, 1), PreconditionError);
}

TEST_CASE("plan serialization round-trips") {
  TempDir tmp;
  auto c = corpus::load_corpus(fixture_path("e2e/corpus.jsonl"));
  auto prefixes = prompts::load_prefix_registry(data_path("prefixes.json"));
  auto plan = prompts::build_plan(c, prefixes, endpoints(2), 1);
  io::write_atomic(tmp / "plan.jsonl", prompts::serialize_plan(plan));
  auto back = prompts::load_plan(tmp / "plan.jsonl");
  CHECK(back.items == plan.items);
}

TEST_CASE("plan keys serialize to JSON and back") {
  prompts::PlanKey k{"pct-001", "likert", "m", 2};
  CHECK(prompts::key_from_json(prompts::key_to_json(k)) == k);
  CHECK(k.to_string() == "pct-001|likert|m|2");
  CHECK_THROWS_AS(prompts::key_from_json(nlohmann::json{{"proposition_id", "x"}}), ParseError);
}

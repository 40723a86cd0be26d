#pragma once

#include "polaudit/corpus.hpp"
#include "polaudit/endpoint.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <span>
#include <string>
#include <tuple>
#include <vector>

namespace polaudit::prompts {

enum class AnswerMode { open, constrained_likert };

inline constexpr std::string_view kModelNamePlaceholder = "{model_name}";
inline constexpr std::string_view kBaselineKey = "baseline";
inline constexpr std::string_view kLikertKey = "likert";

struct PrefixSpec {
  std::string key;
  std::string template_text;
  AnswerMode answer_mode = AnswerMode::open;
};

// Loads the prefix registry and checks the ten-prefix invariants: exactly ten
// unique keys, an empty baseline, likert as the only constrained prefix and
// "name" as the only one carrying {model_name}. Throws ValidationError.
std::vector<PrefixSpec> load_prefix_registry(const std::filesystem::path& path);
std::vector<PrefixSpec> prefixes_from_json(const nlohmann::json& j);
void check_prefix_registry(std::span<const PrefixSpec> prefixes);

const PrefixSpec* find_prefix(std::span<const PrefixSpec> prefixes, std::string_view key);

/// Prefix text (with the model name substituted), a single newline, then the
/// statement. The baseline yields the statement alone.
std::string render_prompt(const PrefixSpec& prefix, const corpus::Proposition& prop,
                          std::string_view model_display_name);

struct PlanKey {
  std::string proposition_id;
  std::string prefix_key;
  std::string model_id;
  int run_index = 0;

  auto operator<=>(const PlanKey&) const = default;
  bool operator==(const PlanKey&) const = default;
  std::string to_string() const;
};

nlohmann::json key_to_json(const PlanKey& k);
PlanKey key_from_json(const nlohmann::json& j);  // throws ParseError

struct PlanItem {
  PlanKey key;
  std::string rendered_prompt;

  bool operator==(const PlanItem&) const = default;
};

struct RunPlan {
  std::vector<PlanItem> items;

  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }
};

// Items ordered by (proposition_id, prefix_key, model_id, run_index).
// Throws PreconditionError when runs < 1, the corpus is not variant-complete,
// or model ids repeat.
RunPlan build_plan(const corpus::Corpus& corpus, std::span<const PrefixSpec> prefixes,
                   std::span<const ModelEndpoint> models, int runs);

std::string serialize_plan(const RunPlan& plan);
RunPlan load_plan(const std::filesystem::path& path);

/// Statement text is always the final line of a rendered prompt.
std::string statement_of(std::string_view rendered_prompt);
std::string prefix_of(std::string_view rendered_prompt);

}  // namespace polaudit::prompts

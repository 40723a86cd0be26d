#include "polaudit/prompts.hpp"

#include "polaudit/io.hpp"

#include <algorithm>
#include <set>

namespace polaudit::prompts {

namespace {

constexpr std::size_t kExpectedPrefixCount = 10;

}  // namespace

std::vector<PrefixSpec> prefixes_from_json(const nlohmann::json& j) {
  const nlohmann::json* arr = &j;
  if (j.is_object()) {
    auto it = j.find("prefixes");
    if (it == j.end()) throw ParseError("prefix registry: missing 'prefixes' array");
    arr = &*it;
  }
  if (!arr->is_array()) throw ParseError("prefix registry: 'prefixes' must be an array");
  std::vector<PrefixSpec> out;
  for (std::size_t i = 0; i < arr->size(); ++i) {
    const auto& e = (*arr)[i];
    const std::string where = "prefixes[" + std::to_string(i) + "]";
    if (!e.is_object() || !e.contains("key") || !e["key"].is_string() || !e.contains("template") ||
        !e["template"].is_string())
      throw ParseError(where + ": needs string fields 'key' and 'template'");
    PrefixSpec p;
    p.key = e["key"].get<std::string>();
    p.template_text = e["template"].get<std::string>();
    std::string mode = e.value("answer_mode", "open");
    if (mode == "open") {
      p.answer_mode = AnswerMode::open;
    } else if (mode == "constrained_likert") {
      p.answer_mode = AnswerMode::constrained_likert;
    } else {
      throw ParseError(where + ".answer_mode: unknown mode '" + mode + "'");
    }
    out.push_back(std::move(p));
  }
  return out;
}

void check_prefix_registry(std::span<const PrefixSpec> prefixes) {
  if (prefixes.size() != kExpectedPrefixCount)
    throw ValidationError("prefix registry: expected " + std::to_string(kExpectedPrefixCount) + " prefixes, got " +
                          std::to_string(prefixes.size()));
  std::set<std::string> keys;
  for (const auto& p : prefixes) {
    if (!keys.insert(p.key).second) throw ValidationError("prefix registry: duplicate key '" + p.key + "'");
    const bool is_baseline = p.key == kBaselineKey;
    const bool is_likert = p.key == kLikertKey;
    const bool has_name = p.template_text.find(kModelNamePlaceholder) != std::string::npos;
    if (is_baseline != p.template_text.empty())
      throw ValidationError("prefix registry: '" + p.key + "': only the baseline template is empty");
    if (is_likert != (p.answer_mode == AnswerMode::constrained_likert))
      throw ValidationError("prefix registry: '" + p.key + "': only likert is constrained_likert");
    if (has_name != (p.key == "name"))
      throw ValidationError("prefix registry: '" + p.key + "': only the name prefix contains {model_name}");
    if (p.template_text.find('\n') != std::string::npos)
      throw ValidationError("prefix registry: '" + p.key + "': template must be a single line");
  }
  if (!keys.count(std::string(kBaselineKey))) throw ValidationError("prefix registry: missing baseline prefix");
}

std::vector<PrefixSpec> load_prefix_registry(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  auto prefixes = prefixes_from_json(j);
  check_prefix_registry(prefixes);
  return prefixes;
}

const PrefixSpec* find_prefix(std::span<const PrefixSpec> prefixes, std::string_view key) {
  for (const auto& p : prefixes)
    if (p.key == key) return &p;
  return nullptr;
}

std::string render_prompt(const PrefixSpec& prefix, const corpus::Proposition& prop,
                          std::string_view model_display_name) {
  if (prefix.template_text.empty()) return prop.text;
  std::string head = prefix.template_text;
  for (auto pos = head.find(kModelNamePlaceholder); pos != std::string::npos;
       pos = head.find(kModelNamePlaceholder, pos + model_display_name.size()))
    head.replace(pos, kModelNamePlaceholder.size(), model_display_name);
  return head + "\n" + prop.text;
}

std::string PlanKey::to_string() const {
  return proposition_id + "|" + prefix_key + "|" + model_id + "|" + std::to_string(run_index);
}

nlohmann::json key_to_json(const PlanKey& k) {
  return {{"proposition_id", k.proposition_id},
          {"prefix_key", k.prefix_key},
          {"model_id", k.model_id},
          {"run_index", k.run_index}};
}

PlanKey key_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("record is not an object");
  for (const char* f : {"proposition_id", "prefix_key", "model_id"})
    if (!j.contains(f) || !j[f].is_string()) throw ParseError(std::string("missing or non-string key field '") + f + "'");
  if (!j.contains("run_index") || !j["run_index"].is_number_integer())
    throw ParseError("missing or non-integer key field 'run_index'");
  return {j["proposition_id"].get<std::string>(), j["prefix_key"].get<std::string>(),
          j["model_id"].get<std::string>(), j["run_index"].get<int>()};
}

RunPlan build_plan(const corpus::Corpus& corpus, std::span<const PrefixSpec> prefixes,
                   std::span<const ModelEndpoint> models, int runs) {
  if (runs < 1) throw PreconditionError("build_plan: runs must be >= 1, got " + std::to_string(runs));
  if (!corpus.variant_complete()) throw PreconditionError("build_plan: corpus is not variant-complete");
  std::set<std::string> ids;
  for (const auto& m : models)
    if (!ids.insert(m.model_id).second) throw PreconditionError("build_plan: duplicate model id '" + m.model_id + "'");

  RunPlan plan;
  plan.items.reserve(corpus.size() * prefixes.size() * models.size() * static_cast<std::size_t>(runs));
  for (const auto& prop : corpus.propositions())
    for (const auto& prefix : prefixes)
      for (const auto& model : models) {
        std::string prompt = render_prompt(prefix, prop, model.name_for_prompt());
        for (int r = 0; r < runs; ++r) plan.items.push_back({{prop.id, prefix.key, model.model_id, r}, prompt});
      }
  std::sort(plan.items.begin(), plan.items.end(),
            [](const PlanItem& a, const PlanItem& b) { return a.key < b.key; });
  return plan;
}

std::string serialize_plan(const RunPlan& plan) {
  std::string out;
  out.reserve(plan.items.size() * 256);
  for (const auto& item : plan.items) {
    nlohmann::json j = key_to_json(item.key);
    j["rendered_prompt"] = item.rendered_prompt;
    out += j.dump();
    out += '\n';
  }
  return out;
}

RunPlan load_plan(const std::filesystem::path& path) {
  RunPlan plan;
  for (const auto& line : io::read_jsonl(path)) {
    try {
      PlanItem item{key_from_json(line.value), {}};
      if (!line.value.contains("rendered_prompt") || !line.value["rendered_prompt"].is_string())
        throw ParseError("missing 'rendered_prompt'");
      item.rendered_prompt = line.value["rendered_prompt"].get<std::string>();
      plan.items.push_back(std::move(item));
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ": line " + std::to_string(line.line_number) + ": " + e.what());
    }
  }
  return plan;
}

std::string statement_of(std::string_view rendered_prompt) {
  auto pos = rendered_prompt.rfind('\n');
  return std::string(pos == std::string_view::npos ? rendered_prompt : rendered_prompt.substr(pos + 1));
}

std::string prefix_of(std::string_view rendered_prompt) {
  auto pos = rendered_prompt.rfind('\n');
  return pos == std::string_view::npos ? std::string() : std::string(rendered_prompt.substr(0, pos));
}

}  // namespace polaudit::prompts

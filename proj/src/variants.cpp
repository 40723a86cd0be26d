#include "polaudit/variants.hpp"

#include "polaudit/io.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace polaudit::variants {

std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::label_issue: return "label_issue";
    case TaskKind::label_leaning: return "label_leaning";
    case TaskKind::reword: return "reword";
    case TaskKind::opposite: return "opposite";
  }
  return "?";
}

std::optional<TaskKind> parse_task_kind(std::string_view s) {
  for (auto k : {TaskKind::label_issue, TaskKind::label_leaning, TaskKind::reword, TaskKind::opposite})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

std::string_view to_string(ReviewStatus s) {
  switch (s) {
    case ReviewStatus::pending: return "pending";
    case ReviewStatus::approved: return "approved";
    case ReviewStatus::rejected: return "rejected";
    case ReviewStatus::regenerated: return "regenerated";
  }
  return "?";
}

namespace {

std::optional<ReviewStatus> parse_review_status(std::string_view s) {
  for (auto v : {ReviewStatus::pending, ReviewStatus::approved, ReviewStatus::rejected, ReviewStatus::regenerated})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

std::string string_field(const nlohmann::json& j, const char* name, const std::string& where) {
  if (!j.contains(name) || !j[name].is_string()) throw ParseError(where + ": field '" + name + "' must be a string");
  return j[name].get<std::string>();
}

}  // namespace

const std::string& TemplateSet::text_for(TaskKind k) const {
  auto it = texts.find(k);
  if (it == texts.end()) throw ConfigError("templates: no template for " + std::string(to_string(k)));
  return it->second;
}

TemplateSet templates_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("templates: expected an object");
  TemplateSet set;
  set.version = j.value("version", "");
  if (!j.contains("templates") || !j["templates"].is_array()) throw ConfigError("templates.templates: expected an array");
  for (std::size_t i = 0; i < j["templates"].size(); ++i) {
    const auto& t = j["templates"][i];
    const std::string path = "templates.templates[" + std::to_string(i) + "]";
    if (!t.is_object() || !t.contains("id") || !t.contains("kind") || !t.contains("text") || !t["id"].is_string() ||
        !t["kind"].is_string() || !t["text"].is_string())
      throw ConfigError(path + ": id, kind and text must be strings");
    auto kind = parse_task_kind(t["kind"].get<std::string>());
    if (!kind) throw ConfigError(path + ".kind: unknown task kind '" + t["kind"].get<std::string>() + "'");
    if (set.texts.count(*kind)) throw ConfigError(path + ".kind: duplicate template for '" + std::string(to_string(*kind)) + "'");
    if (t["text"].get<std::string>().empty()) throw ConfigError(path + ".text: empty template");
    set.ids[*kind] = t["id"].get<std::string>();
    set.texts[*kind] = t["text"].get<std::string>();
  }
  if (set.texts.size() != 4) throw ConfigError("templates.templates: expected one template for each of the four task kinds");
  set.regeneration_notice = j.value("regeneration_notice", "");
  if (set.regeneration_notice.empty()) throw ConfigError("templates.regeneration_notice: must be a non-empty string");
  return set;
}

TemplateSet load_templates(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingArtifactError("templates file not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return templates_from_json(j);
}

std::string render_task(const TemplateSet& templates, const GenerationTask& task, bool regeneration) {
  std::string prompt = templates.text_for(task.kind) + "\n" + task.input_text;
  if (regeneration) prompt += "\n\n" + templates.regeneration_notice;
  return prompt;
}

std::string Generator::complete(const std::string& prompt) const {
  if (!transport) throw PreconditionError("generator has no transport");
  auto result = gateway::complete_with_retries(*transport, endpoint, gateway::messages_for(endpoint, prompt), retry, sleep);
  if (!result.ok)
    throw TransportError("generation via '" + endpoint.model_id + "' failed after " + std::to_string(result.attempts) +
                         " attempts: " + result.last_error);
  return result.text;
}

std::optional<std::string> parse_choice(std::string_view reply, std::string_view first, std::string_view second) {
  const std::string text = io::to_lower(io::trim(reply));
  bool has_first = false, has_second = false;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && !std::isalpha(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && std::isalpha(static_cast<unsigned char>(text[j]))) ++j;
    std::string_view token(text.data() + i, j - i);
    if (token == first) has_first = true;
    if (token == second) has_second = true;
    i = j;
  }
  if (has_first == has_second) return std::nullopt;
  return std::string(has_first ? first : second);
}

LabelResult generate_labels(const std::string& statement_text, const Generator& gen, const TemplateSet& templates) {
  LabelResult out;
  out.raw_issue = gen.complete(render_task(templates, {TaskKind::label_issue, statement_text, templates.ids.at(TaskKind::label_issue)}));
  auto issue = parse_choice(out.raw_issue, "economic", "cultural");
  if (!issue) throw GenerationError("issue label reply names neither or both of economic/cultural", out.raw_issue);
  out.issue = *parse_issue(*issue);

  out.raw_leaning =
      gen.complete(render_task(templates, {TaskKind::label_leaning, statement_text, templates.ids.at(TaskKind::label_leaning)}));
  auto leaning = parse_choice(out.raw_leaning, "right", "left");
  if (!leaning) throw GenerationError("leaning label reply names neither or both of right/left", out.raw_leaning);
  out.leaning = *parse_direction(*leaning);
  return out;
}

nlohmann::json to_json(const ReviewItem& item) {
  return {{"id", item.id},
          {"parent_id", item.parent_id},
          {"kind", to_string(item.task.kind)},
          {"template_id", item.task.template_id},
          {"input_text", item.task.input_text},
          {"raw_output", item.raw_output},
          {"parsed_value", item.parsed_value},
          {"status", to_string(item.status)},
          {"attempt", item.attempt},
          {"reviewer", item.reviewer},
          {"note", item.note}};
}

ReviewItem review_item_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("review item: expected an object");
  ReviewItem item;
  item.id = string_field(j, "id", "review item");
  const std::string where = "review item " + item.id;
  item.parent_id = string_field(j, "parent_id", where);
  auto kind = parse_task_kind(string_field(j, "kind", where));
  if (!kind) throw ParseError(where + ": unknown kind");
  item.task.kind = *kind;
  item.task.template_id = string_field(j, "template_id", where);
  item.task.input_text = string_field(j, "input_text", where);
  item.raw_output = string_field(j, "raw_output", where);
  item.parsed_value = string_field(j, "parsed_value", where);
  auto status = parse_review_status(string_field(j, "status", where));
  if (!status) throw ParseError(where + ": unknown status");
  item.status = *status;
  if (!j.contains("attempt") || !j["attempt"].is_number_integer()) throw ParseError(where + ": attempt must be an integer");
  item.attempt = j["attempt"].get<int>();
  item.reviewer = j.value("reviewer", "");
  item.note = j.value("note", "");
  return item;
}

std::vector<ReviewItem> load_review_items(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingArtifactError("review items not found: " + path.string());
  std::vector<ReviewItem> out;
  for (const auto& line : io::read_jsonl(path)) {
    try {
      out.push_back(review_item_from_json(line.value));
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ":" + std::to_string(line.line_number) + ": " + e.what());
    }
  }
  return out;
}

std::string serialize_review_items(const std::vector<ReviewItem>& items) {
  std::vector<nlohmann::json> rows;
  rows.reserve(items.size());
  for (const auto& i : items) rows.push_back(to_json(i));
  return io::to_jsonl(rows);
}

std::string clean_generation(std::string_view reply) {
  std::string s = io::trim(reply);
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\'')))
    s = io::trim(std::string_view(s).substr(1, s.size() - 2));
  return s;
}

namespace {

std::string item_id(const std::string& parent, TaskKind kind, int attempt) {
  return parent + "/" + std::string(to_string(kind)) + "/" + std::to_string(attempt);
}

ReviewItem generate_item(const std::string& parent_id, TaskKind kind, const std::string& input, int attempt,
                         bool regeneration, const Generator& gen, const TemplateSet& templates) {
  ReviewItem item;
  item.id = item_id(parent_id, kind, attempt);
  item.parent_id = parent_id;
  item.attempt = attempt;
  item.task = {kind, input, templates.ids.at(kind)};
  item.raw_output = gen.complete(render_task(templates, item.task, regeneration));
  item.parsed_value = clean_generation(item.raw_output);
  if (item.parsed_value.empty()) throw GenerationError("empty generation for " + item.id, item.raw_output);
  if (io::to_lower(item.parsed_value) == io::to_lower(io::trim(input))) {
    item.status = ReviewStatus::rejected;
    item.note = "identical to input";
  }
  return item;
}

VariantKind variant_of(TaskKind k) {
  if (k == TaskKind::reword) return VariantKind::reworded;
  if (k == TaskKind::opposite) return VariantKind::opposite;
  throw PreconditionError("task kind " + std::string(to_string(k)) + " does not produce a variant");
}

}  // namespace

std::vector<ReviewItem> generate_variants(const corpus::Proposition& original, const Generator& gen,
                                          const TemplateSet& templates) {
  if (original.variant != VariantKind::original)
    throw PreconditionError("generate_variants: " + original.id + " is not an original statement");
  return {generate_item(original.id, TaskKind::reword, original.text, 1, false, gen, templates),
          generate_item(original.id, TaskKind::opposite, original.text, 1, false, gen, templates)};
}

ReviewItem regenerate(std::vector<ReviewItem>& items, const std::string& id, const Generator& gen,
                      const TemplateSet& templates) {
  auto it = std::find_if(items.begin(), items.end(), [&](const ReviewItem& i) { return i.id == id; });
  if (it == items.end()) throw PreconditionError("regenerate: unknown item '" + id + "'");
  if (it->status != ReviewStatus::rejected)
    throw PreconditionError("regenerate: item '" + id + "' is " + std::string(to_string(it->status)) + ", not rejected");
  int next_attempt = 1;
  for (const auto& i : items)
    if (i.parent_id == it->parent_id && i.task.kind == it->task.kind) next_attempt = std::max(next_attempt, i.attempt + 1);
  ReviewItem fresh =
      generate_item(it->parent_id, it->task.kind, it->task.input_text, next_attempt, true, gen, templates);
  it->status = ReviewStatus::regenerated;
  items.push_back(fresh);
  return fresh;
}

ReviewDecision decision_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("decision: expected an object");
  ReviewDecision d;
  d.item_id = string_field(j, "id", "decision");
  const std::string action = string_field(j, "decision", "decision " + d.item_id);
  if (action == "approve") {
    d.approve = true;
  } else if (action != "reject") {
    throw ParseError("decision " + d.item_id + ": expected 'approve' or 'reject', got '" + action + "'");
  }
  d.reviewer = j.value("reviewer", "");
  d.note = j.value("note", "");
  return d;
}

std::vector<corpus::Proposition> approved_propositions(std::span<const ReviewItem> items,
                                                       const corpus::Corpus& originals) {
  std::vector<corpus::Proposition> out;
  for (const auto& item : items) {
    if (item.status != ReviewStatus::approved) continue;
    const auto* parent = originals.find(item.parent_id);
    if (!parent) throw IntegrityError("approved item " + item.id + " has no original '" + item.parent_id + "'");
    corpus::Proposition p;
    p.variant = variant_of(item.task.kind);
    p.id = parent->id + "-" + std::string(polaudit::to_string(p.variant));
    p.text = item.parsed_value;
    p.source = parent->source;
    p.issue = parent->issue;
    p.leaning = parent->leaning;  // the original's label; opposites flip only when scored
    p.parent_id = parent->id;
    out.push_back(std::move(p));
  }
  return out;
}

ReviewOutcome review_queue(std::vector<ReviewItem> items, std::span<const ReviewDecision> decisions,
                           const corpus::Corpus& originals) {
  for (const auto& d : decisions) {
    auto it = std::find_if(items.begin(), items.end(), [&](const ReviewItem& i) { return i.id == d.item_id; });
    if (it == items.end()) throw PreconditionError("review: unknown item '" + d.item_id + "'");
    if (it->status != ReviewStatus::pending)
      throw PreconditionError("review: item '" + d.item_id + "' is " + std::string(to_string(it->status)) +
                              ", not pending");
    if (d.approve) {
      auto same_slot = std::find_if(items.begin(), items.end(), [&](const ReviewItem& i) {
        return i.status == ReviewStatus::approved && i.parent_id == it->parent_id && i.task.kind == it->task.kind;
      });
      if (same_slot != items.end())
        throw PreconditionError("review: " + it->parent_id + " already has an approved " +
                                std::string(to_string(it->task.kind)) + " (" + same_slot->id + ")");
    }
    it->status = d.approve ? ReviewStatus::approved : ReviewStatus::rejected;
    it->reviewer = d.reviewer;
    it->note = d.note;
  }
  ReviewOutcome out;
  out.approved = approved_propositions(items, originals);
  out.items = std::move(items);
  return out;
}

corpus::Corpus attach_variants(const corpus::Corpus& originals, std::span<const corpus::Proposition> variants,
                               corpus::CorpusMeta meta) {
  std::vector<corpus::Proposition> all;
  for (const auto& p : originals.propositions()) {
    if (p.variant != VariantKind::original) continue;
    all.push_back(p);
    for (auto kind : {VariantKind::reworded, VariantKind::opposite})
      for (const auto& v : variants)
        if (v.parent_id == p.id && v.variant == kind) all.push_back(v);
  }
  std::set<std::string> placed;
  for (const auto& p : all) placed.insert(p.id);
  for (const auto& v : variants)
    if (!placed.count(v.id)) throw IntegrityError("variant " + v.id + " has no original in the corpus");
  return corpus::Corpus(std::move(all), std::move(meta));
}

void record_label_agreement(corpus::CorpusMeta& meta, double issue_kappa, double leaning_kappa,
                            std::size_t sample_size) {
  meta.extra["label_agreement"] = {
      {"issue_kappa", issue_kappa}, {"leaning_kappa", leaning_kappa}, {"sample_size", sample_size}};
}

}  // namespace polaudit::variants

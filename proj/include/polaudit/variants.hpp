#pragma once

#include "polaudit/common.hpp"
#include "polaudit/corpus.hpp"
#include "polaudit/endpoint.hpp"
#include "polaudit/gateway.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace polaudit::variants {

enum class TaskKind { label_issue, label_leaning, reword, opposite };

std::string_view to_string(TaskKind k);
std::optional<TaskKind> parse_task_kind(std::string_view s);

struct TemplateSet {
  std::string version;
  std::map<TaskKind, std::string> ids;
  std::map<TaskKind, std::string> texts;
  std::string regeneration_notice;

  const std::string& text_for(TaskKind k) const;
};

// Requires exactly one template per task kind and a non-empty regeneration
// notice. Throws ConfigError.
TemplateSet templates_from_json(const nlohmann::json& j);
TemplateSet load_templates(const std::filesystem::path& path);

struct GenerationTask {
  TaskKind kind = TaskKind::reword;
  std::string input_text;
  std::string template_id;
};

/// Template, newline, statement. A regeneration appends the error notice on a
/// separate paragraph.
std::string render_task(const TemplateSet& templates, const GenerationTask& task, bool regeneration = false);

/// Reply that could not be parsed into the requested value.
class GenerationError : public Error {
 public:
  GenerationError(const std::string& what, std::string raw_output)
      : Error(what), raw_output_(std::move(raw_output)) {}
  const std::string& raw_output() const { return raw_output_; }

 private:
  std::string raw_output_;
};

/// The chat endpoint driving generation, usually at temperature 0.
struct Generator {
  ModelEndpoint endpoint;
  std::shared_ptr<gateway::ChatTransport> transport;
  gateway::RetryPolicy retry;
  gateway::SleepFn sleep;

  // Throws TransportError once the retries are exhausted.
  std::string complete(const std::string& prompt) const;
};

// Case-insensitive token match on the trimmed reply: exactly one of the two
// candidates must occur. Returns nullopt otherwise.
std::optional<std::string> parse_choice(std::string_view reply, std::string_view first, std::string_view second);

struct LabelResult {
  Issue issue = Issue::cultural;
  Direction leaning = Direction::left;
  std::string raw_issue;
  std::string raw_leaning;
};

// Throws GenerationError carrying the raw reply when it names neither or both
// options, TransportError when the endpoint fails.
LabelResult generate_labels(const std::string& statement_text, const Generator& gen, const TemplateSet& templates);

enum class ReviewStatus { pending, approved, rejected, regenerated };

std::string_view to_string(ReviewStatus s);

struct ReviewItem {
  std::string id;  // "<parent id>/<kind>/<attempt>"
  std::string parent_id;
  GenerationTask task;
  std::string raw_output;
  std::string parsed_value;
  ReviewStatus status = ReviewStatus::pending;
  int attempt = 1;
  std::string reviewer;
  std::string note;
};

nlohmann::json to_json(const ReviewItem& item);
ReviewItem review_item_from_json(const nlohmann::json& j);  // throws ParseError

// Snapshot of the whole queue, one item per line.
std::vector<ReviewItem> load_review_items(const std::filesystem::path& path);
std::string serialize_review_items(const std::vector<ReviewItem>& items);

/// Reply with whitespace and one pair of surrounding quotes removed.
std::string clean_generation(std::string_view reply);

// One pending item per variant kind (reword, opposite). A reply identical to
// the input is rejected automatically. Throws GenerationError on an empty
// reply, PreconditionError when `original` is itself a variant.
std::vector<ReviewItem> generate_variants(const corpus::Proposition& original, const Generator& gen,
                                          const TemplateSet& templates);

// Poses the task of a rejected item again with the error notice appended and
// returns the new pending item; the old one is marked regenerated. Throws
// PreconditionError unless the item exists and is rejected.
ReviewItem regenerate(std::vector<ReviewItem>& items, const std::string& item_id, const Generator& gen,
                      const TemplateSet& templates);

struct ReviewDecision {
  std::string item_id;
  bool approve = false;
  std::string reviewer;
  std::string note;
};

ReviewDecision decision_from_json(const nlohmann::json& j);  // throws ParseError

/// Approved variant propositions built from `items`, with lineage taken from
/// the originals. Throws IntegrityError on a missing parent.
std::vector<corpus::Proposition> approved_propositions(std::span<const ReviewItem> items,
                                                       const corpus::Corpus& originals);

struct ReviewOutcome {
  std::vector<ReviewItem> items;
  std::vector<corpus::Proposition> approved;  // every approved item so far
};

// Applies the decisions in order. Throws PreconditionError when a decision
// targets an unknown or non-pending item.
ReviewOutcome review_queue(std::vector<ReviewItem> items, std::span<const ReviewDecision> decisions,
                           const corpus::Corpus& originals);

// Originals plus approved variants. Throws IntegrityError if the result breaks
// a corpus invariant.
corpus::Corpus attach_variants(const corpus::Corpus& originals, std::span<const corpus::Proposition> variants,
                               corpus::CorpusMeta meta);

// Stores label agreement (Cohen's kappa) for issue and leaning against a human
// labelled sample in meta.extra["label_agreement"].
void record_label_agreement(corpus::CorpusMeta& meta, double issue_kappa, double leaning_kappa,
                            std::size_t sample_size);

}  // namespace polaudit::variants

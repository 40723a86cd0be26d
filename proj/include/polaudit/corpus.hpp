#pragma once

#include "polaudit/common.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace polaudit::corpus {

/// One political statement instance. `leaning` always holds the label of the
/// ORIGINAL statement; the opposite-variant flip is derived, never stored.
struct Proposition {
  std::string id;
  std::string text;
  Source source = Source::WVS;
  Issue issue = Issue::cultural;
  Direction leaning = Direction::left;
  VariantKind variant = VariantKind::original;
  std::optional<std::string> parent_id;

  bool operator==(const Proposition&) const = default;
};

/// The direction that agreeing with `prop` supports.
Direction effective_direction(const Proposition& prop);

struct CorpusMeta {
  std::string version;
  std::string provenance;
  nlohmann::json extra = nlohmann::json::object();  // e.g. label-agreement kappas
};

/// Immutable after construction; shared read-only across threads.
class Corpus {
 public:
  Corpus() = default;
  // Throws IntegrityError on duplicate ids, dangling parent ids, duplicate
  // (parent_id, variant) pairs, empty text or lineage mismatches.
  Corpus(std::vector<Proposition> propositions, CorpusMeta meta);

  const std::vector<Proposition>& propositions() const { return props_; }
  const CorpusMeta& meta() const { return meta_; }
  const Proposition* find(const std::string& id) const;
  const Proposition& at(const std::string& id) const;  // throws std::out_of_range

  std::vector<const Proposition*> originals() const;
  std::size_t size() const { return props_.size(); }

  // Every original has both a reworded and an opposite variant attached.
  bool variant_complete() const;

 private:
  std::vector<Proposition> props_;
  CorpusMeta meta_;
  std::unordered_map<std::string, std::size_t> index_;
};

nlohmann::json to_json(const Proposition& p);
// Throws ParseError naming the field when the record is malformed.
Proposition proposition_from_json(const nlohmann::json& j);

struct RawCorpus {
  CorpusMeta meta;
  std::vector<Proposition> props;
};

// Parses the file without enforcing corpus integrity, so that a validator can
// report every violation. Throws ParseError on malformed records.
RawCorpus read_corpus_records(const std::filesystem::path& path);

Corpus load_corpus(const std::filesystem::path& path);
std::string serialize_corpus(const Corpus& corpus);

struct CellCount {
  Source source;
  Issue issue;
  Direction leaning;
  std::size_t count = 0;
};

struct ValidationReport {
  std::vector<CellCount> counts;  // over originals, every source x issue x leaning cell
  std::size_t originals = 0;
  std::size_t variants = 0;
  std::size_t total = 0;
  std::size_t variant_complete_originals = 0;
  std::vector<std::string> violations;
  std::vector<std::string> warnings;

  std::size_t count(Source s, Issue i, Direction d) const;
  bool ok() const { return violations.empty(); }
  nlohmann::json to_json() const;
};

/// Reports rather than throws. Accepts propositions that may violate the
/// Corpus invariants so that the report can list every problem.
ValidationReport validate_propositions(const std::vector<Proposition>& props);
ValidationReport validate_corpus(const Corpus& corpus);

}  // namespace polaudit::corpus

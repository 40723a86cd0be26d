#include "polaudit/corpus.hpp"

#include "polaudit/io.hpp"

#include <set>
#include <sstream>

namespace polaudit::corpus {

Direction effective_direction(const Proposition& prop) {
  return prop.variant == VariantKind::opposite ? flip(prop.leaning) : prop.leaning;
}

namespace {

std::string describe(const Proposition& p) { return "proposition '" + p.id + "'"; }

// Collects every invariant violation; `stop_at_first` is used by the Corpus
// constructor, which only needs to know whether the set is valid.
std::vector<std::string> find_violations(const std::vector<Proposition>& props, bool stop_at_first) {
  std::vector<std::string> out;
  auto report = [&](std::string msg) {
    out.push_back(std::move(msg));
    return stop_at_first;
  };

  std::unordered_map<std::string, const Proposition*> by_id;
  for (const auto& p : props) {
    if (p.id.empty() && report("proposition with empty id (text: '" + p.text + "')")) return out;
    if (!by_id.emplace(p.id, &p).second && report("duplicate id '" + p.id + "'")) return out;
  }

  std::set<std::pair<std::string, VariantKind>> lineage;
  for (const auto& p : props) {
    if (io::trim(p.text).empty() && report(describe(p) + ": empty text")) return out;
    if (p.variant == VariantKind::original) {
      if (p.parent_id && report(describe(p) + ": original must not carry parent_id")) return out;
      continue;
    }
    if (!p.parent_id) {
      if (report(describe(p) + ": " + std::string(to_string(p.variant)) + " variant without parent_id"))
        return out;
      continue;
    }
    auto it = by_id.find(*p.parent_id);
    if (it == by_id.end()) {
      if (report(describe(p) + ": dangling parent_id '" + *p.parent_id + "'")) return out;
      continue;
    }
    const Proposition& parent = *it->second;
    if (parent.variant != VariantKind::original &&
        report(describe(p) + ": parent '" + parent.id + "' is not an original"))
      return out;
    if (!lineage.emplace(*p.parent_id, p.variant).second &&
        report(describe(p) + ": duplicate " + std::string(to_string(p.variant)) + " variant for parent '" +
               *p.parent_id + "'"))
      return out;
    if ((p.issue != parent.issue || p.leaning != parent.leaning || p.source != parent.source) &&
        report(describe(p) + ": source/issue/leaning differ from parent '" + parent.id + "'"))
      return out;
  }
  return out;
}

}  // namespace

Corpus::Corpus(std::vector<Proposition> propositions, CorpusMeta meta)
    : props_(std::move(propositions)), meta_(std::move(meta)) {
  auto violations = find_violations(props_, true);
  if (!violations.empty()) throw IntegrityError(violations.front());
  for (std::size_t i = 0; i < props_.size(); ++i) index_.emplace(props_[i].id, i);
}

const Proposition* Corpus::find(const std::string& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &props_[it->second];
}

const Proposition& Corpus::at(const std::string& id) const {
  const Proposition* p = find(id);
  if (!p) throw std::out_of_range("unknown proposition id '" + id + "'");
  return *p;
}

std::vector<const Proposition*> Corpus::originals() const {
  std::vector<const Proposition*> out;
  for (const auto& p : props_)
    if (p.variant == VariantKind::original) out.push_back(&p);
  return out;
}

bool Corpus::variant_complete() const {
  auto report = validate_corpus(*this);
  return report.originals > 0 && report.variant_complete_originals == report.originals;
}

nlohmann::json to_json(const Proposition& p) {
  nlohmann::json j = {{"id", p.id},
                      {"text", p.text},
                      {"source", to_string(p.source)},
                      {"issue", to_string(p.issue)},
                      {"leaning", to_string(p.leaning)},
                      {"variant", to_string(p.variant)}};
  if (p.parent_id) j["parent_id"] = *p.parent_id;
  return j;
}

namespace {

std::string string_field(const nlohmann::json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) throw ParseError(where + ": missing or non-string field '" + key + "'");
  return it->get<std::string>();
}

template <typename T, typename F>
T enum_field(const nlohmann::json& j, const char* key, const std::string& where, F parse) {
  std::string raw = string_field(j, key, where);
  auto v = parse(raw);
  if (!v) throw ParseError(where + ": invalid value '" + raw + "' for field '" + key + "'");
  return *v;
}

}  // namespace

Proposition proposition_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("proposition record is not an object");
  std::string where = "record";
  if (auto it = j.find("id"); it != j.end() && it->is_string()) where = "record '" + it->get<std::string>() + "'";
  Proposition p;
  p.id = string_field(j, "id", where);
  p.text = string_field(j, "text", where);
  p.source = enum_field<Source>(j, "source", where, parse_source);
  p.issue = enum_field<Issue>(j, "issue", where, parse_issue);
  p.leaning = enum_field<Direction>(j, "leaning", where, parse_direction);
  p.variant = enum_field<VariantKind>(j, "variant", where, parse_variant);
  if (auto it = j.find("parent_id"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw ParseError(where + ": non-string field 'parent_id'");
    p.parent_id = it->get<std::string>();
  }
  return p;
}

RawCorpus read_corpus_records(const std::filesystem::path& path) {
  auto lines = io::read_jsonl(path);
  if (lines.empty()) throw ParseError(path.string() + ": empty corpus file");
  RawCorpus raw;
  const auto& head = lines.front().value;
  if (!head.is_object() || head.value("kind", "") != "corpus-meta")
    throw ParseError(path.string() + ": line " + std::to_string(lines.front().line_number) +
                     ": expected leading {\"kind\":\"corpus-meta\"} header");
  raw.meta.version = head.value("version", "");
  raw.meta.provenance = head.value("provenance", "");
  for (auto it = head.begin(); it != head.end(); ++it)
    if (it.key() != "kind" && it.key() != "version" && it.key() != "provenance") raw.meta.extra[it.key()] = it.value();

  for (std::size_t i = 1; i < lines.size(); ++i) {
    try {
      raw.props.push_back(proposition_from_json(lines[i].value));
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ": line " + std::to_string(lines[i].line_number) + ": " + e.what());
    }
  }
  return raw;
}

Corpus load_corpus(const std::filesystem::path& path) {
  auto raw = read_corpus_records(path);
  try {
    return Corpus(std::move(raw.props), std::move(raw.meta));
  } catch (const IntegrityError& e) {
    throw IntegrityError(path.string() + ": " + e.what());
  }
}

std::string serialize_corpus(const Corpus& corpus) {
  nlohmann::json head = {{"kind", "corpus-meta"},
                         {"version", corpus.meta().version},
                         {"provenance", corpus.meta().provenance}};
  for (auto it = corpus.meta().extra.begin(); it != corpus.meta().extra.end(); ++it) head[it.key()] = it.value();
  std::vector<nlohmann::json> rows{head};
  for (const auto& p : corpus.propositions()) rows.push_back(to_json(p));
  return io::to_jsonl(rows);
}

std::size_t ValidationReport::count(Source s, Issue i, Direction d) const {
  for (const auto& c : counts)
    if (c.source == s && c.issue == i && c.leaning == d) return c.count;
  return 0;
}

nlohmann::json ValidationReport::to_json() const {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : counts)
    cells.push_back({{"source", to_string(c.source)},
                     {"issue", to_string(c.issue)},
                     {"leaning", to_string(c.leaning)},
                     {"count", c.count}});
  return {{"counts", cells},
          {"originals", originals},
          {"variants", variants},
          {"total", total},
          {"variant_complete_originals", variant_complete_originals},
          {"violations", violations},
          {"warnings", warnings}};
}

ValidationReport validate_propositions(const std::vector<Proposition>& props) {
  ValidationReport r;
  r.violations = find_violations(props, false);
  r.total = props.size();
  for (Source s : {Source::PCT, Source::WVS})
    for (Issue i : {Issue::cultural, Issue::economic})
      for (Direction d : {Direction::left, Direction::right}) r.counts.push_back({s, i, d, 0});

  std::map<std::string, std::set<VariantKind>> attached;
  for (const auto& p : props) {
    if (p.variant != VariantKind::original) {
      ++r.variants;
      if (p.parent_id) attached[*p.parent_id].insert(p.variant);
      continue;
    }
    ++r.originals;
    for (auto& c : r.counts)
      if (c.source == p.source && c.issue == p.issue && c.leaning == p.leaning) ++c.count;
  }
  for (const auto& p : props) {
    if (p.variant != VariantKind::original) continue;
    const auto& kinds = attached[p.id];
    if (kinds.count(VariantKind::reworded) && kinds.count(VariantKind::opposite)) {
      ++r.variant_complete_originals;
    } else {
      std::ostringstream msg;
      msg << "original '" << p.id << "' has " << kinds.size() << " of 2 expected attached variants (missing";
      if (!kinds.count(VariantKind::reworded)) msg << " reworded";
      if (!kinds.count(VariantKind::opposite)) msg << " opposite";
      msg << ")";
      r.warnings.push_back(msg.str());
    }
  }
  return r;
}

ValidationReport validate_corpus(const Corpus& corpus) { return validate_propositions(corpus.propositions()); }

}  // namespace polaudit::corpus

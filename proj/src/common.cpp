#include "polaudit/common.hpp"

namespace polaudit {

std::string_view to_string(Source v) { return v == Source::PCT ? "PCT" : "WVS"; }

std::string_view to_string(Issue v) { return v == Issue::cultural ? "cultural" : "economic"; }

std::string_view to_string(Direction v) { return v == Direction::left ? "left" : "right"; }

std::string_view to_string(VariantKind v) {
  switch (v) {
    case VariantKind::original: return "original";
    case VariantKind::reworded: return "reworded";
    case VariantKind::opposite: return "opposite";
  }
  return "original";
}

std::string_view to_string(StanceLabel v) {
  switch (v) {
    case StanceLabel::agree: return "agree";
    case StanceLabel::disagree: return "disagree";
    case StanceLabel::neutral: return "neutral";
    case StanceLabel::unrelated: return "unrelated";
  }
  return "unrelated";
}

std::optional<Source> parse_source(std::string_view s) {
  if (s == "PCT") return Source::PCT;
  if (s == "WVS") return Source::WVS;
  return std::nullopt;
}

std::optional<Issue> parse_issue(std::string_view s) {
  if (s == "cultural") return Issue::cultural;
  if (s == "economic") return Issue::economic;
  return std::nullopt;
}

std::optional<Direction> parse_direction(std::string_view s) {
  if (s == "left") return Direction::left;
  if (s == "right") return Direction::right;
  return std::nullopt;
}

std::optional<VariantKind> parse_variant(std::string_view s) {
  if (s == "original") return VariantKind::original;
  if (s == "reworded") return VariantKind::reworded;
  if (s == "opposite") return VariantKind::opposite;
  return std::nullopt;
}

std::optional<StanceLabel> parse_stance_label(std::string_view s) {
  for (auto l : kAllStanceLabels)
    if (to_string(l) == s) return l;
  return std::nullopt;
}

}  // namespace polaudit

#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace polaudit {

enum class Source { PCT, WVS };
enum class Issue { cultural, economic };
enum class Direction { left, right };
enum class VariantKind { original, reworded, opposite };
enum class StanceLabel { agree, disagree, neutral, unrelated };

inline constexpr StanceLabel kAllStanceLabels[] = {
    StanceLabel::agree, StanceLabel::disagree, StanceLabel::neutral, StanceLabel::unrelated};

std::string_view to_string(Source v);
std::string_view to_string(Issue v);
std::string_view to_string(Direction v);
std::string_view to_string(VariantKind v);
std::string_view to_string(StanceLabel v);

// Parsers return nullopt on unknown text; callers decide how to report it.
std::optional<Source> parse_source(std::string_view s);
std::optional<Issue> parse_issue(std::string_view s);
std::optional<Direction> parse_direction(std::string_view s);
std::optional<VariantKind> parse_variant(std::string_view s);
std::optional<StanceLabel> parse_stance_label(std::string_view s);

constexpr Direction flip(Direction d) {
  return d == Direction::left ? Direction::right : Direction::left;
}

// Error taxonomy. The CLI maps ValidationError subclasses to exit code 1 and
// everything else to 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IntegrityError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class PreconditionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class TransportError : public Error {
 public:
  using Error::Error;
};

}  // namespace polaudit

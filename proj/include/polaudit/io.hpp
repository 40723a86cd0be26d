#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace polaudit::io {

namespace fs = std::filesystem;

/// One parsed JSON Lines record together with where it started in the file.
struct JsonLine {
  nlohmann::json value;
  std::size_t line_number = 0;  // 1-based
  std::uint64_t byte_offset = 0;
};

// Throws ParseError naming the line and byte offset of the first malformed
// record. Blank lines are skipped.
std::vector<JsonLine> read_jsonl(const fs::path& path);

// Reads a whole file into memory; throws IoError if it cannot be opened.
std::string read_file(const fs::path& path);

// Writes `content` to a sibling temp file and renames it over `path`, so
// readers never observe a partial artifact.
void write_atomic(const fs::path& path, std::string_view content);

std::string to_jsonl(const std::vector<nlohmann::json>& rows);

/// Shortest round-trip decimal representation; used for CSV so that CSV and
/// JSON artifacts carry identical values.
std::string format_double(double v);
std::string format_optional(const std::optional<double>& v);
std::string csv_escape(std::string_view field);

nlohmann::json optional_to_json(const std::optional<double>& v);

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);

}  // namespace polaudit::io

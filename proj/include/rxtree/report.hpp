#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rxtree {

using CsvRow = std::vector<std::string>;

// RFC 4180 style: quoted fields may contain commas, quotes ("") and newlines.
// A trailing newline does not produce an empty final row.
std::vector<CsvRow> parse_csv(std::string_view text);
std::string csv_escape(std::string_view field);

class CsvWriter {
 public:
  explicit CsvWriter(CsvRow header);
  void add(CsvRow row);
  std::string str() const;

 private:
  std::vector<CsvRow> rows_;
};

// Fixed-width text table with a header rule, used for the human-readable
// report layouts. Numeric-looking cells are right-aligned.
class TextTable {
 public:
  explicit TextTable(CsvRow header);
  void add(CsvRow row);
  // Inserts a horizontal rule before the next added row.
  void rule();
  std::string str() const;

 private:
  std::vector<CsvRow> rows_;
  std::vector<std::size_t> rules_;
};

// printf("%.*f") without locale surprises.
std::string fixed(double value, int precision);
// Percent with `precision` decimals, or "NA" when the optional is empty.
std::string percent_or_na(const std::optional<double>& fraction, int precision);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace rxtree

#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace streamfed {

/// Shortest round-trip-safe text for a double: 17 significant digits.
std::string format_double(double v);

/// A parsed CSV file: header plus rows of raw cells.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;  // throws if absent
  double number(std::size_t row, const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace streamfed

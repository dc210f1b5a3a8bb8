#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace csa {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Json = nlohmann::ordered_json;

/// Bumped whenever any emitted JSON layout changes.
inline constexpr int kSchemaVersion = 1;

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column position by name, or -1.
  int column(const std::string& name) const;
};

/// Comma-delimited, header row required, double-quoted fields allowed.
/// Row indices in error messages are 1-based data rows.
CsvTable read_csv(const std::filesystem::path& path);

/// Writes via a temporary file in the same directory followed by rename.
void write_file_atomic(const std::filesystem::path& path,
                       const std::string& contents);

Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& j);

/// Shortest round-trip decimal for a double ("%.17g" fallback).
std::string format_double(double v);

}  // namespace csa

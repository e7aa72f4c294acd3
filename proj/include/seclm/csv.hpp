#pragma once

// Minimal CSV writing/reading with a fixed numeric format so repeated runs
// produce byte-identical files.

#include <filesystem>
#include <string>
#include <vector>

namespace seclm::csv {

/// Shortest round-trip decimal form of `v` ("nan" / "inf" spelled out).
std::string format(double v);

class Writer {
 public:
  explicit Writer(std::vector<std::string> header) : header_(std::move(header)) {}

  Writer& row(std::vector<std::string> cells);
  const std::vector<std::string>& header() const { return header_; }
  std::size_t size() const { return rows_.size(); }
  std::string str() const;
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name; throws Error(Data) when missing.
  std::size_t column(const std::string& name) const;
};

Table read(const std::filesystem::path& path);

}  // namespace seclm::csv

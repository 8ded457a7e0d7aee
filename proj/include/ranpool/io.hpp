#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ranpool::io {

std::string read_file(const std::filesystem::path& path);

/// Write via a sibling temp file and rename, so readers never see a partial file.
void write_atomic(const std::filesystem::path& path, std::string_view contents);

/// 16-hex-digit FNV-1a digest.
std::string hash_hex(std::string_view bytes);

/// Round-trip-exact decimal formatting of a double.
std::string fmt(double v);

/// Minimal CSV builder; fields are written verbatim.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header);
  CsvWriter& row(const std::vector<std::string>& fields);
  const std::string& str() const { return buffer_; }
  std::size_t rows() const { return rows_; }

 private:
  std::size_t columns_;
  std::size_t rows_ = 0;
  std::string buffer_;
};

/// Rows of a simple comma-separated file with a header line.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const;
};

CsvTable parse_csv(const std::string& text);

}  // namespace ranpool::io

#pragma once

// Locale-free CSV emission. Reals are rendered with up to 17 significant
// digits via std::to_chars, which round-trips every double exactly and never
// consults the global locale, so output bytes are stable across machines.

#include "regime_coupler/common.hpp"

#include <charconv>
#include <cstdint>
#include <fstream>
#include <string>
#include <system_error>
#include <vector>

namespace rcoup {

inline std::string csv_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  if (res.ec != std::errc{}) throw NumericError("csv: failed to render a real value");
  return std::string(buf, res.ptr);
}

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header) : out_(path) {
    if (!out_) throw ConfigError("csv: cannot open '" + path + "' for writing");
    n_cols_ = header.size();
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (i) out_ << ',';
      out_ << header[i];
    }
    out_ << '\n';
  }

  // Cells were already rendered by the caller (csv_real for reals, plain
  // text for labels). Column counts are enforced so a schema drift cannot
  // silently produce a ragged file.
  void row(const std::vector<std::string>& cells) {
    if (cells.size() != n_cols_)
      throw ConfigError("csv: row has " + std::to_string(cells.size()) + " cells, header has " +
                        std::to_string(n_cols_));
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

  void close() {
    out_.close();
    if (!out_) throw ConfigError("csv: write failed on close");
  }

 private:
  std::ofstream out_;
  std::size_t n_cols_ = 0;
};

}  // namespace rcoup

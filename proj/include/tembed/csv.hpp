#pragma once

#include <charconv>
#include <cstdint>
#include <string>
#include <vector>

namespace tembed {

// Shortest round-trip decimal form (std::to_chars): lossless to re-parse
// and byte-stable across runs, which the determinism contract needs.
inline std::string num_str(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline std::string num_str(long v) { return std::to_string(v); }
inline std::string num_str(int v) { return std::to_string(v); }
inline std::string num_str(std::uint64_t v) { return std::to_string(v); }

// Minimal CSV assembly; cells are trusted not to contain commas/newlines.
class Csv {
 public:
  explicit Csv(const std::vector<std::string>& header) { row(header); }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i > 0) text_ += ',';
      text_ += cells[i];
    }
    text_ += '\n';
  }

  const std::string& text() const { return text_; }

 private:
  std::string text_;
};

}  // namespace tembed

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace gar {

// Shortest decimal text that reads back to the same double.
std::string format_double(double v);
double parse_double(std::string_view text);
std::int64_t parse_int(std::string_view text);
std::uint64_t parse_uint(std::string_view text);

std::vector<std::string_view> split_ws(std::string_view line);
std::vector<std::string> split(std::string_view text, char sep);
std::string_view trim(std::string_view s);

// Writes to "<path>.tmp" and renames over path once the content is complete.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

// Reads a text source line by line and raises ParseError tagged with
// "<source>:<line>" on malformed content.
class LineReader {
 public:
  LineReader(std::string text, std::string source);

  bool at_end() const { return pos_ >= text_.size(); }
  // Next line, or ParseError on end of input.
  std::string_view next(std::string_view what);
  std::vector<std::string_view> next_fields(std::string_view what);
  // Expects "<key> <value...>" and returns the value fields.
  std::vector<std::string_view> expect(std::string_view key, std::size_t values);
  std::size_t line() const { return line_; }
  [[noreturn]] void fail(const std::string& message) const;

  double to_double(std::string_view text) const;
  std::int64_t to_int(std::string_view text) const;
  std::uint64_t to_uint(std::string_view text) const;

 private:
  std::string text_;
  std::string source_;
  std::size_t pos_ = 0;
  std::size_t line_ = 0;
};

}  // namespace gar

#include "gar/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "gar/error.hpp"

namespace gar {

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw Error("format_double failed");
  return std::string(buf, end);
}

double parse_double(std::string_view text) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw ParseError("not a number: '" + std::string(text) + "'");
  }
  return v;
}

std::int64_t parse_int(std::string_view text) {
  std::int64_t v = 0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw ParseError("not an integer: '" + std::string(text) + "'");
  }
  return v;
}

std::uint64_t parse_uint(std::string_view text) {
  std::uint64_t v = 0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw ParseError("not a non-negative integer: '" + std::string(text) + "'");
  }
  return v;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    out.emplace_back(trim(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

LineReader::LineReader(std::string text, std::string source) : text_(std::move(text)), source_(std::move(source)) {}

std::string_view LineReader::next(std::string_view what) {
  if (at_end()) fail("unexpected end of input, expected " + std::string(what));
  const auto nl = text_.find('\n', pos_);
  const auto end = nl == std::string::npos ? text_.size() : nl;
  std::string_view line(text_.data() + pos_, end - pos_);
  pos_ = nl == std::string::npos ? text_.size() : nl + 1;
  ++line_;
  return line;
}

std::vector<std::string_view> LineReader::next_fields(std::string_view what) { return split_ws(next(what)); }

std::vector<std::string_view> LineReader::expect(std::string_view key, std::size_t values) {
  auto fields = next_fields(key);
  if (fields.empty() || fields[0] != key) fail("expected '" + std::string(key) + "'");
  if (fields.size() != values + 1) {
    fail("'" + std::string(key) + "' expects " + std::to_string(values) + " value(s), got " +
         std::to_string(fields.size() - 1));
  }
  fields.erase(fields.begin());
  return fields;
}

void LineReader::fail(const std::string& message) const {
  throw ParseError(source_ + ":" + std::to_string(line_) + ": " + message);
}

double LineReader::to_double(std::string_view text) const {
  try {
    return parse_double(text);
  } catch (const ParseError& e) {
    fail(e.what());
  }
}

std::int64_t LineReader::to_int(std::string_view text) const {
  try {
    return parse_int(text);
  } catch (const ParseError& e) {
    fail(e.what());
  }
}

std::uint64_t LineReader::to_uint(std::string_view text) const {
  try {
    return parse_uint(text);
  } catch (const ParseError& e) {
    fail(e.what());
  }
}

}  // namespace gar

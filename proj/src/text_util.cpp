#include "facecorpus/text_util.hpp"

#include <algorithm>
#include <cctype>

namespace facecorpus {

namespace {

bool is_word_byte(unsigned char c) {
  return std::isalnum(c) != 0 || c == '_';
}

}  // namespace

std::string to_lower_ascii(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) {
    return static_cast<char>(std::tolower(c));
  });
  return out;
}

std::string trim_ascii(std::string_view text) {
  auto is_space = [](unsigned char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  std::size_t begin = 0;
  std::size_t end = text.size();
  while (begin < end && is_space(static_cast<unsigned char>(text[begin]))) ++begin;
  while (end > begin && is_space(static_cast<unsigned char>(text[end - 1]))) --end;
  return std::string(text.substr(begin, end - begin));
}

bool contains_ci(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return true;
  const std::string h = to_lower_ascii(haystack);
  const std::string n = to_lower_ascii(needle);
  return h.find(n) != std::string::npos;
}

bool contains_word_ci(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return false;
  const std::string h = to_lower_ascii(haystack);
  const std::string n = to_lower_ascii(needle);
  std::size_t pos = h.find(n);
  while (pos != std::string::npos) {
    const bool left_ok =
        pos == 0 || !is_word_byte(static_cast<unsigned char>(h[pos - 1]));
    const std::size_t after = pos + n.size();
    const bool right_ok =
        after >= h.size() || !is_word_byte(static_cast<unsigned char>(h[after]));
    if (left_ok && right_ok) return true;
    pos = h.find(n, pos + 1);
  }
  return false;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> cells;
  std::string current;
  bool in_quotes = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          current.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        current.push_back(c);
      }
    } else if (c == '"' && current.empty()) {
      in_quotes = true;
    } else if (c == ',') {
      cells.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  cells.push_back(std::move(current));
  return cells;
}

}  // namespace facecorpus

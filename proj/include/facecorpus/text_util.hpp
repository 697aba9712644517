#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace facecorpus {

// ASCII-only case folding; labels and refusal phrases never contain
// non-ASCII letters.
std::string to_lower_ascii(std::string_view text);

// Strips spaces, tabs and carriage returns from both ends.
std::string trim_ascii(std::string_view text);

bool contains_ci(std::string_view haystack, std::string_view needle);

// Case-insensitive substring match with word boundaries on both sides.
// Word characters are [A-Za-z0-9_]; every other byte (including UTF-8
// punctuation such as the en dash) counts as a boundary.
bool contains_word_ci(std::string_view haystack, std::string_view needle);

std::vector<std::string> split_csv_line(std::string_view line);

}  // namespace facecorpus

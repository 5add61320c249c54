#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace ods::text {

std::string trim(std::string_view s);
std::string trim_right(std::string_view s);
std::string to_lower(std::string_view s);
std::string to_upper(std::string_view s);
bool iequals(std::string_view a, std::string_view b);
bool starts_with_icase(std::string_view s, std::string_view prefix);

/// Case-insensitive find (ASCII folding only).
std::size_t ifind(std::string_view haystack, std::string_view needle, std::size_t from = 0);

/// Collapse every run of ASCII whitespace to one space and trim the ends.
std::string collapse_whitespace(std::string_view s);

std::vector<std::string> split_lines(std::string_view s);

/// Byte offsets of every UTF-8 code point start, plus a final entry == s.size().
/// Continuation bytes never start a code point; malformed lead bytes count as
/// one code point each.
std::vector<std::size_t> utf8_boundaries(std::string_view s);

/// Largest prefix of `s` that is at most `max_bytes` long and does not split a
/// UTF-8 sequence.
std::string_view utf8_truncate(std::string_view s, std::size_t max_bytes);

/// Answer normalizer shared by the exact-match grader and self-consistency
/// clustering: lowercase, punctuation removed, whitespace collapsed, leading
/// articles ("a", "an", "the") dropped.
std::string normalize_answer(std::string_view s);

/// Lowercase alphanumeric word tokens.
std::vector<std::string> word_tokens(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace ods::text

#pragma once

// Title tokenisation shared by vocabulary building, feature extraction and
// the enrichment length limit: lowercase, split on Unicode whitespace, strip
// leading/trailing punctuation, drop tokens that become empty.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace nrec {

namespace detail {

// Decodes one UTF-8 code point starting at `pos`; invalid bytes decode as
// themselves with length 1.
inline char32_t decode_utf8(std::string_view s, std::size_t pos, std::size_t& len) {
  const auto b0 = static_cast<unsigned char>(s[pos]);
  auto cont = [&](std::size_t k) {
    return pos + k < s.size() && (static_cast<unsigned char>(s[pos + k]) & 0xC0) == 0x80;
  };
  auto byte = [&](std::size_t k) { return static_cast<char32_t>(static_cast<unsigned char>(s[pos + k]) & 0x3F); };
  if (b0 < 0x80) {
    len = 1;
    return b0;
  }
  if ((b0 & 0xE0) == 0xC0 && cont(1)) {
    len = 2;
    return (static_cast<char32_t>(b0 & 0x1F) << 6) | byte(1);
  }
  if ((b0 & 0xF0) == 0xE0 && cont(1) && cont(2)) {
    len = 3;
    return (static_cast<char32_t>(b0 & 0x0F) << 12) | (byte(1) << 6) | byte(2);
  }
  if ((b0 & 0xF8) == 0xF0 && cont(1) && cont(2) && cont(3)) {
    len = 4;
    return (static_cast<char32_t>(b0 & 0x07) << 18) | (byte(1) << 12) | (byte(2) << 6) | byte(3);
  }
  len = 1;
  return b0;
}

inline bool is_unicode_space(char32_t c) {
  return (c >= 0x09 && c <= 0x0D) || c == 0x20 || c == 0x85 || c == 0xA0 || c == 0x1680 ||
         (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F || c == 0x205F || c == 0x3000;
}

inline bool is_punctuation(char32_t c) {
  if (c < 0x80) {
    return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) || (c >= 0x7B && c <= 0x7E);
  }
  // Latin-1 punctuation, General Punctuation block, CJK symbols.
  return c == 0xA1 || c == 0xA7 || c == 0xAB || c == 0xB6 || c == 0xB7 || c == 0xBB || c == 0xBF ||
         (c >= 0x2010 && c <= 0x2027) || (c >= 0x2030 && c <= 0x205E) || (c >= 0x3001 && c <= 0x3003) ||
         (c >= 0x3008 && c <= 0x3011);
}

struct CodePoint {
  char32_t value;
  std::size_t offset;
  std::size_t length;
};

inline std::vector<CodePoint> code_points(std::string_view s) {
  std::vector<CodePoint> out;
  for (std::size_t i = 0; i < s.size();) {
    std::size_t len = 1;
    const char32_t c = decode_utf8(s, i, len);
    out.push_back({c, i, len});
    i += len;
  }
  return out;
}

}  // namespace detail

// Whitespace-delimited pieces with original casing and punctuation.
inline std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> pieces;
  std::string current;
  for (const auto& cp : detail::code_points(text)) {
    if (detail::is_unicode_space(cp.value)) {
      if (!current.empty()) pieces.push_back(std::move(current));
      current.clear();
    } else {
      current.append(text.substr(cp.offset, cp.length));
    }
  }
  if (!current.empty()) pieces.push_back(std::move(current));
  return pieces;
}

inline std::string strip_punctuation(std::string_view piece) {
  const auto cps = detail::code_points(piece);
  std::size_t first = 0, last = cps.size();
  while (first < last && detail::is_punctuation(cps[first].value)) ++first;
  while (last > first && detail::is_punctuation(cps[last - 1].value)) --last;
  if (first == last) return {};
  const std::size_t begin = cps[first].offset;
  const std::size_t end = cps[last - 1].offset + cps[last - 1].length;
  return std::string(piece.substr(begin, end - begin));
}

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  for (const auto& piece : split_whitespace(text)) {
    std::string t = strip_punctuation(ascii_lower(piece));
    if (!t.empty()) tokens.push_back(std::move(t));
  }
  return tokens;
}

// Keeps the first `max_pieces` whitespace-delimited pieces, joined by single
// spaces. The result never tokenizes to more than `max_pieces` tokens.
inline std::string truncate_words(std::string_view text, std::size_t max_pieces) {
  const auto pieces = split_whitespace(text);
  std::string out;
  for (std::size_t i = 0; i < pieces.size() && i < max_pieces; ++i) {
    if (i) out += ' ';
    out += pieces[i];
  }
  return out;
}

inline std::string trim(std::string_view s) {
  const auto pieces = detail::code_points(s);
  std::size_t first = 0, last = pieces.size();
  while (first < last && detail::is_unicode_space(pieces[first].value)) ++first;
  while (last > first && detail::is_unicode_space(pieces[last - 1].value)) --last;
  if (first == last) return {};
  return std::string(s.substr(pieces[first].offset, pieces[last - 1].offset + pieces[last - 1].length - pieces[first].offset));
}

// Lowercase, drop all ASCII punctuation, collapse whitespace. Used to compare
// entity surface names against Wikidata labels and aliases.
inline std::string normalize_name(std::string_view s) {
  std::string out;
  for (const auto& piece : split_whitespace(s)) {
    std::string cleaned;
    for (const auto& cp : detail::code_points(piece)) {
      if (!detail::is_punctuation(cp.value)) cleaned.append(piece.substr(cp.offset, cp.length));
    }
    cleaned = ascii_lower(cleaned);
    if (cleaned.empty()) continue;
    if (!out.empty()) out += ' ';
    out += cleaned;
  }
  return out;
}

}  // namespace nrec

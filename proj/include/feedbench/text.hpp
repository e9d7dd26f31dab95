#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "feedbench/errors.hpp"
#include "json.hpp"

namespace feedbench::text {

// ---------------------------------------------------------------------------
// UTF-8

/// Decodes UTF-8; invalid bytes map to U+FFFD so tokenization stays total.
inline std::u32string decode_utf8(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    int len = 0;
    char32_t cp = 0;
    if (b0 < 0x80) {
      cp = b0;
      len = 1;
    } else if ((b0 >> 5) == 0x6) {
      cp = b0 & 0x1F;
      len = 2;
    } else if ((b0 >> 4) == 0xE) {
      cp = b0 & 0x0F;
      len = 3;
    } else if ((b0 >> 3) == 0x1E) {
      cp = b0 & 0x07;
      len = 4;
    } else {
      out.push_back(0xFFFD);
      ++i;
      continue;
    }
    if (i + len > s.size()) {
      out.push_back(0xFFFD);
      break;
    }
    bool ok = true;
    for (int k = 1; k < len; ++k) {
      const auto b = static_cast<unsigned char>(s[i + k]);
      if ((b >> 6) != 0x2) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (b & 0x3F);
    }
    if (!ok) {
      out.push_back(0xFFFD);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

inline void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

inline std::size_t codepoint_count(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0) != 0x80) ++n;
  }
  return n;
}

/// Han ideographs, kana and hangul syllables: scripts written without spaces.
inline bool is_cjk(char32_t cp) {
  return (cp >= 0x4E00 && cp <= 0x9FFF) || (cp >= 0x3400 && cp <= 0x4DBF) ||
         (cp >= 0xF900 && cp <= 0xFAFF) || (cp >= 0x20000 && cp <= 0x2FFFF) ||
         (cp >= 0x3040 && cp <= 0x30FF) || (cp >= 0xAC00 && cp <= 0xD7AF);
}

inline bool is_separator(char32_t cp) {
  if (cp < 0x80) return !std::isalnum(static_cast<int>(cp));
  return (cp >= 0x2000 && cp <= 0x206F) ||  // general punctuation, spaces
         (cp >= 0x3000 && cp <= 0x303F) ||  // CJK symbols and punctuation
         (cp >= 0xFF00 && cp <= 0xFF0F) || (cp >= 0xFF1A && cp <= 0xFF20) ||
         (cp >= 0xFF3B && cp <= 0xFF40) || (cp >= 0xFF5B && cp <= 0xFF65) ||
         cp == 0x00A0 || cp == 0xFFFD || (cp >= 0x00A1 && cp <= 0x00BF);
}

namespace detail {

enum class CjkMode { characters, bigrams };

inline std::vector<std::string> tokenize(std::string_view s, CjkMode mode) {
  std::vector<std::string> tokens;
  std::string word;
  std::u32string cjk_run;

  auto flush_word = [&] {
    if (!word.empty()) tokens.push_back(std::move(word));
    word.clear();
  };
  auto flush_cjk = [&] {
    if (cjk_run.empty()) return;
    if (mode == CjkMode::characters || cjk_run.size() == 1) {
      for (char32_t cp : cjk_run) {
        std::string t;
        append_utf8(t, cp);
        tokens.push_back(std::move(t));
      }
    } else {
      for (std::size_t i = 0; i + 1 < cjk_run.size(); ++i) {
        std::string t;
        append_utf8(t, cjk_run[i]);
        append_utf8(t, cjk_run[i + 1]);
        tokens.push_back(std::move(t));
      }
    }
    cjk_run.clear();
  };

  for (char32_t cp : decode_utf8(s)) {
    if (is_cjk(cp)) {
      flush_word();
      cjk_run.push_back(cp);
    } else if (is_separator(cp)) {
      flush_word();
      flush_cjk();
    } else {
      flush_cjk();
      if (cp < 0x80) {
        word.push_back(static_cast<char>(std::tolower(static_cast<int>(cp))));
      } else {
        append_utf8(word, cp);
      }
    }
  }
  flush_word();
  flush_cjk();
  return tokens;
}

}  // namespace detail

/// Lowercased, punctuation-stripped word tokens; CJK text yields one token per
/// character. Used by every text metric.
inline std::vector<std::string> tokenize(std::string_view s) {
  return detail::tokenize(s, detail::CjkMode::characters);
}

/// Same as tokenize() but CJK runs become overlapping character bigrams.
/// Used by the lexical retrieval index.
inline std::vector<std::string> index_terms(std::string_view s) {
  return detail::tokenize(s, detail::CjkMode::bigrams);
}

inline std::string normalize_answer(std::string_view s) {
  std::string out;
  for (const auto& t : tokenize(s)) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Strings

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

inline std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  if (from.empty()) return s;
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

/// Replaces each `{name}` placeholder for the given slots. Braces that do not
/// name a supplied slot are left alone (templates embed literal JSON).
inline std::string fill_slots(std::string_view tmpl, const std::map<std::string, std::string>& slots) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        const auto it = slots.find(std::string(tmpl.substr(i + 1, close - i - 1)));
        if (it != slots.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tmpl[i]);
    ++i;
  }
  return out;
}

/// Slot names (`{name}` with identifier characters) that appear in a template.
inline std::vector<std::string> slot_names(std::string_view tmpl) {
  std::vector<std::string> names;
  std::size_t i = 0;
  while ((i = tmpl.find('{', i)) != std::string_view::npos) {
    const auto close = tmpl.find('}', i + 1);
    if (close == std::string_view::npos) break;
    const auto name = tmpl.substr(i + 1, close - i - 1);
    const bool ident = !name.empty() && std::all_of(name.begin(), name.end(), [](char c) {
      return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
    });
    if (ident && std::find(names.begin(), names.end(), name) == names.end()) {
      names.emplace_back(name);
    }
    i = close + 1;
  }
  return names;
}

/// Display name used in language instructions ("en" -> "English").
inline std::string language_name(std::string_view tag) {
  static const std::map<std::string, std::string, std::less<>> names = {
      {"en", "English"}, {"zh", "Chinese"}, {"ja", "Japanese"}, {"ko", "Korean"},
      {"fr", "French"},  {"de", "German"},  {"es", "Spanish"},
  };
  const auto it = names.find(tag);
  return it == names.end() ? std::string(tag) : it->second;
}

// ---------------------------------------------------------------------------
// JSON extraction

/// First balanced `{...}` span in `s` that parses as a JSON object. Leading
/// prose, code fences and trailing chatter are ignored.
inline std::optional<nlohmann::json> extract_json_object(std::string_view s) {
  std::size_t start = 0;
  while ((start = s.find('{', start)) != std::string_view::npos) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    std::size_t end = std::string_view::npos;
    for (std::size_t i = start; i < s.size(); ++i) {
      const char c = s[i];
      if (in_string) {
        if (escaped) {
          escaped = false;
        } else if (c == '\\') {
          escaped = true;
        } else if (c == '"') {
          in_string = false;
        }
        continue;
      }
      if (c == '"') {
        in_string = true;
      } else if (c == '{') {
        ++depth;
      } else if (c == '}') {
        if (--depth == 0) {
          end = i;
          break;
        }
      }
    }
    if (end == std::string_view::npos) return std::nullopt;
    auto parsed = nlohmann::json::parse(s.substr(start, end - start + 1), nullptr, false);
    if (!parsed.is_discarded() && parsed.is_object()) return parsed;
    ++start;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Hashing

inline std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    fail(ErrorCode::invalid_argument, "sha256 digest failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

}  // namespace feedbench::text

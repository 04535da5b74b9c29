// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "selfcheck/domain.hpp"
#include "selfcheck/errors.hpp"
#include "selfcheck/text.hpp"

namespace selfcheck {

/// One sentence of a caption: trimmed, non-empty, terminator stripped.
struct Sentence {
  std::string text;
  std::size_t index = 0;

  friend bool operator==(const Sentence&, const Sentence&) = default;
};

/// Splits on '.', '!' and '?'. Empty fragments are dropped; indices are
/// assigned in order of appearance.
inline std::vector<Sentence> segment_sentences(std::string_view caption) {
  std::vector<Sentence> out;
  std::size_t start = 0;
  auto flush = [&](std::size_t end) {
    const std::string_view piece = text::trim(caption.substr(start, end - start));
    if (!piece.empty()) out.push_back(Sentence{std::string(piece), out.size()});
  };
  for (std::size_t i = 0; i < caption.size(); ++i) {
    const char c = caption[i];
    if (c == '.' || c == '!' || c == '?') {
      flush(i);
      start = i + 1;
    }
  }
  flush(caption.size());
  return out;
}

/// Inverse-ish of segment_sentences: "a. b." style rendering.
inline std::string join_sentences(const std::vector<Sentence>& sentences) {
  std::string out;
  for (const auto& s : sentences) {
    if (!out.empty()) out += ' ';
    out += s.text;
    out += '.';
  }
  return out;
}

/// Lowercase surface term (one or more words) to agent class. Lookups for
/// unknown terms yield no class.
class SynonymTable {
 public:
  SynonymTable() = default;

  void add(std::string_view term, AgentClass cls) {
    const std::string key = normalize_key(term);
    if (key.empty()) return;
    entries_[key] = cls;
    max_words_ = std::max(max_words_, word_count(key));
  }

  void remove(std::string_view term) { entries_.erase(normalize_key(term)); }

  std::optional<AgentClass> find_exact(std::string_view term) const {
    auto it = entries_.find(std::string(term));
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t max_words() const { return max_words_; }
  const std::map<std::string, AgentClass>& entries() const { return entries_; }

  /// `term=class` per line; blank lines and `#` comments ignored.
  static SynonymTable parse(std::string_view content, std::string_view origin = "<memory>") {
    SynonymTable table;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= content.size()) {
      const std::size_t nl = content.find('\n', pos);
      const std::size_t end = nl == std::string_view::npos ? content.size() : nl;
      std::string_view line = content.substr(pos, end - pos);
      ++line_no;
      pos = end + 1;
      if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = text::trim(line);
      if (line.empty()) {
        if (nl == std::string_view::npos) break;
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) {
        throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) +
                          ": expected term=class");
      }
      const auto term = text::trim(line.substr(0, eq));
      const auto cls_name = text::to_lower(text::trim(line.substr(eq + 1)));
      const auto cls = parse_agent_class(cls_name);
      if (!cls || term.empty()) {
        throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) +
                          ": unknown agent class '" + cls_name + "'");
      }
      table.add(term, *cls);
      if (nl == std::string_view::npos) break;
    }
    return table;
  }

  static SynonymTable load(const std::string& path) { return parse(text::read_file(path), path); }

 private:
  static std::string normalize_key(std::string_view term) {
    std::string out;
    bool pending_space = false;
    for (char c : text::to_lower(text::trim(term))) {
      if (text::is_space(c)) {
        pending_space = true;
        continue;
      }
      if (pending_space && !out.empty()) out += ' ';
      pending_space = false;
      out += c;
    }
    return out;
  }
  static std::size_t word_count(std::string_view s) {
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), ' ')) + 1;
  }

  std::map<std::string, AgentClass> entries_;
  std::size_t max_words_ = 1;
};

inline constexpr std::string_view kDefaultSynonyms = R"(# Surface terms accepted as traffic agents.
car=vehicle
cars=vehicle
truck=vehicle
trucks=vehicle
bus=vehicle
buses=vehicle
van=vehicle
vans=vehicle
vehicle=vehicle
vehicles=vehicle
automobile=vehicle
automobiles=vehicle

person=pedestrian
people=pedestrian
pedestrian=pedestrian
pedestrians=pedestrian
man=pedestrian
woman=pedestrian
men=pedestrian
women=pedestrian

cyclist=cyclist
cyclists=cyclist
bicyclist=cyclist
bicyclists=cyclist
bike rider=cyclist
bike riders=cyclist
person on a bicycle=cyclist
people on bicycles=cyclist

# Bare vehicle words for bicycles; drop with SynonymOptions::bare_bicycle_is_cyclist = false.
bicycle=cyclist
bicycles=cyclist
bike=cyclist
bikes=cyclist
)";

struct SynonymOptions {
  bool bare_bicycle_is_cyclist = true;
};

inline SynonymTable default_synonym_table(SynonymOptions options = {}) {
  SynonymTable table = SynonymTable::parse(kDefaultSynonyms, "<builtin>");
  if (!options.bare_bicycle_is_cyclist) {
    for (const char* t : {"bicycle", "bicycles", "bike", "bikes"}) table.remove(t);
  }
  return table;
}

/// Case-insensitive lookup that also tries singular forms of the last word
/// ("-s", "-es", "-ies").
inline std::optional<AgentClass> canonicalize_term(std::string_view term, const SynonymTable& table) {
  std::string key;
  bool pending_space = false;
  for (char c : text::to_lower(text::trim(term))) {
    if (text::is_space(c)) {
      pending_space = true;
      continue;
    }
    if (pending_space && !key.empty()) key += ' ';
    pending_space = false;
    key += c;
  }
  if (key.empty()) return std::nullopt;
  if (auto hit = table.find_exact(key)) return hit;
  if (key.ends_with("ies") && key.size() > 3) {
    if (auto hit = table.find_exact(key.substr(0, key.size() - 3) + "y")) return hit;
  }
  if (key.ends_with('s') && key.size() > 1) {
    if (auto hit = table.find_exact(key.substr(0, key.size() - 1))) return hit;
  }
  if (key.ends_with("es") && key.size() > 2) {
    if (auto hit = table.find_exact(key.substr(0, key.size() - 2))) return hit;
  }
  return std::nullopt;
}

enum class ExtractionMode { first_noun, all_mentions };

inline std::string_view to_string(ExtractionMode m) {
  return m == ExtractionMode::first_noun ? "first_noun" : "all_mentions";
}

inline std::optional<ExtractionMode> parse_extraction_mode(std::string_view s) {
  if (s == "first_noun") return ExtractionMode::first_noun;
  if (s == "all_mentions") return ExtractionMode::all_mentions;
  return std::nullopt;
}

struct ExtractionOptions {
  ExtractionMode mode = ExtractionMode::all_mentions;
  /// Drop mentions inside a noun block introduced by "no" or "not any".
  bool negation_filter = false;
};

namespace detail {

inline std::vector<std::string> tokenize_words(std::string_view s) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : s) {
    const auto uc = static_cast<unsigned char>(c);
    if (std::isalnum(uc) || c == '\'' || c == '-') {
      cur += static_cast<char>(std::tolower(uc));
    } else {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
      if (c == ',' || c == ';' || c == ':') words.emplace_back(",");
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

inline bool is_filler(std::string_view w) {
  static const std::set<std::string, std::less<>> kFiller = {
      "there", "here",  "is",     "are",   "was",     "were",     "a",       "an",
      "the",   "some",  "several", "many", "few",     "multiple", "various", "also",
      "only",  "no",    "not",    "any",   "it",      "its",      "this",    "these",
      "one",   "two",   "three",  "four",  "five",    "six",      "seven",   "eight",
      "nine",  "ten",   "more",   "other", "numerous"};
  if (kFiller.contains(w)) return true;
  return !w.empty() && std::all_of(w.begin(), w.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

/// Words that end a noun block.
inline bool is_separator(std::string_view w) {
  static const std::set<std::string, std::less<>> kSep = {
      ",",    "and",    "or",    "but",  "with",  "on",     "in",    "at",  "near",
      "next", "behind", "beside", "along", "of",  "that",   "which", "who", "while",
      "as",   "to",     "from",  "by",   "under", "across", "around"};
  return kSep.contains(w);
}

struct Mention {
  std::size_t begin = 0;
  std::size_t end = 0;
  AgentClass cls = AgentClass::vehicle;
  bool negated = false;
};

inline std::vector<Mention> find_mentions(const std::vector<std::string>& words,
                                          const SynonymTable& table) {
  std::vector<Mention> mentions;
  bool negated = false;
  std::size_t i = 0;
  while (i < words.size()) {
    const std::string& w = words[i];
    if (w == "no" || (w == "not" && i + 1 < words.size() && words[i + 1] == "any")) {
      negated = true;
    } else if (is_separator(w)) {
      negated = false;
    }
    std::size_t matched = 0;
    std::optional<AgentClass> cls;
    const std::size_t max_len = std::min(table.max_words(), words.size() - i);
    for (std::size_t len = max_len; len >= 1; --len) {
      std::string phrase = words[i];
      for (std::size_t k = 1; k < len; ++k) phrase += ' ' + words[i + k];
      if (auto hit = canonicalize_term(phrase, table)) {
        cls = hit;
        matched = len;
        break;
      }
    }
    if (cls) {
      mentions.push_back(Mention{i, i + matched, *cls, negated});
      i += matched;
    } else {
      ++i;
    }
  }
  return mentions;
}

}  // namespace detail

/// Agent classes mentioned in one sentence. In first_noun mode only the
/// first noun block counts; if that block names no agent the set is empty.
inline AgentSet extract_sentence_agents(const Sentence& s, const SynonymTable& table,
                                        ExtractionOptions options = {}) {
  const auto words = detail::tokenize_words(s.text);
  const auto mentions = detail::find_mentions(words, table);
  AgentSet out;
  if (options.mode == ExtractionMode::all_mentions) {
    for (const auto& m : mentions) {
      if (options.negation_filter && m.negated) continue;
      out.insert(m.cls);
    }
    return out;
  }
  std::size_t block_begin = 0;
  while (block_begin < words.size() &&
         (detail::is_filler(words[block_begin]) || detail::is_separator(words[block_begin]))) {
    ++block_begin;
  }
  if (block_begin == words.size()) return out;
  std::size_t block_end = block_begin;
  while (block_end < words.size() && !detail::is_separator(words[block_end])) ++block_end;
  for (const auto& m : mentions) {
    if (m.begin >= block_begin && m.begin < block_end) {
      if (!(options.negation_filter && m.negated)) out.insert(m.cls);
      break;
    }
  }
  return out;
}

inline AgentSet caption_agents(const std::vector<Sentence>& sentences, const SynonymTable& table,
                               ExtractionOptions options = {}) {
  AgentSet out;
  for (const auto& s : sentences) out |= extract_sentence_agents(s, table, options);
  return out;
}

}  // namespace selfcheck

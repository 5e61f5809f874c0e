#pragma once

// Tokenization, vocabulary and keyword extraction.
//
// The tokenizer is deliberately simple: lowercase, split on anything that is
// not a letter or digit. Vocabularies are built from a corpus with the five
// special tokens pinned to fixed ids.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "i3/errors.hpp"

namespace i3 {

namespace tok {
constexpr int kPad = 0;
constexpr int kUnk = 1;
constexpr int kCls = 2;
constexpr int kSep = 3;
constexpr int kMask = 4;
constexpr int kNumSpecial = 5;
}  // namespace tok

// A word plus whether a phrase boundary (punctuation) preceded it; keyword
// extraction needs the boundaries, the tokenizer proper ignores them.
struct RawToken {
  std::string word;
  bool boundary_before = false;
};

inline std::vector<RawToken> split_raw(const std::string& text) {
  std::vector<RawToken> out;
  std::string cur;
  bool pending = false;  // punctuation seen since the last word
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back({cur, pending});
      cur.clear();
      pending = false;
    }
  };
  for (unsigned char ch : text) {
    if (std::isalnum(ch)) {
      cur += static_cast<char>(std::tolower(ch));
    } else if (std::isspace(ch)) {
      flush();
    } else {
      flush();
      pending = true;
    }
  }
  flush();
  return out;
}

// Lowercased, punctuation-split words.
inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  for (auto& t : split_raw(text)) out.push_back(t.word);
  return out;
}

class Vocabulary {
 public:
  Vocabulary() {
    for (const char* s : {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"}) add_token(s);
  }

  // Most frequent corpus words, capped; ties broken by token text so the
  // result does not depend on hash ordering.
  static Vocabulary build(const std::vector<std::string>& texts, std::size_t cap = 30000) {
    std::unordered_map<std::string, std::uint64_t> freq;
    for (const auto& t : texts)
      for (auto& w : split_words(t)) ++freq[w];
    std::vector<std::pair<std::string, std::uint64_t>> items(freq.begin(), freq.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    Vocabulary v;
    for (const auto& [w, f] : items) {
      if (v.size() >= cap) break;
      v.add_token(w);
    }
    return v;
  }

  int add_token(const std::string& t) {
    auto it = ids_.find(t);
    if (it != ids_.end()) return it->second;
    int id = static_cast<int>(tokens_.size());
    tokens_.push_back(t);
    ids_[t] = id;
    return id;
  }

  int id_of(const std::string& t) const {
    auto it = ids_.find(t);
    return it == ids_.end() ? tok::kUnk : it->second;
  }

  const std::string& token_of(int id) const {
    if (id < 0 || id >= static_cast<int>(tokens_.size())) throw DataError("vocabulary: id out of range");
    return tokens_[static_cast<std::size_t>(id)];
  }

  bool contains(const std::string& t) const { return ids_.count(t) != 0; }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

// [CLS] + word ids + [SEP], truncated to max_len with [SEP] kept last.
// With pad_to_max the sequence is right-padded with [PAD].
inline std::vector<int> tokenize(const std::string& text, int max_len, const Vocabulary& vocab,
                                 bool pad_to_max = false) {
  if (max_len < 2) throw ConfigError("tokenize: max_len must be at least 2");
  std::vector<int> ids;
  ids.push_back(tok::kCls);
  for (auto& w : split_words(text)) {
    if (static_cast<int>(ids.size()) >= max_len - 1) break;
    ids.push_back(vocab.id_of(w));
  }
  ids.push_back(tok::kSep);
  if (pad_to_max)
    while (static_cast<int>(ids.size()) < max_len) ids.push_back(tok::kPad);
  return ids;
}

// True for real tokens, false for [PAD].
inline std::vector<std::uint8_t> attention_mask(const std::vector<int>& ids) {
  std::vector<std::uint8_t> m(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) m[i] = ids[i] != tok::kPad;
  return m;
}

// Word ids without the structural specials; reconstruction targets.
// Unknown words stay as [UNK], they still occupy a position.
inline std::vector<int> content_ids(const std::vector<int>& ids) {
  std::vector<int> out;
  for (int id : ids)
    if (id >= tok::kNumSpecial || id == tok::kUnk) out.push_back(id);
  return out;
}

inline const std::set<std::string>& stopwords() {
  static const std::set<std::string> words = {
      "a", "about", "above", "after", "again", "against", "all", "am", "an", "and",
      "any", "are", "as", "at", "be", "because", "been", "before", "being", "below",
      "between", "both", "but", "by", "can", "cannot", "could", "did", "do", "does",
      "doing", "down", "during", "each", "few", "for", "from", "further", "had",
      "has", "have", "having", "he", "her", "here", "hers", "herself", "him",
      "himself", "his", "how", "i", "if", "in", "into", "is", "it", "its", "itself",
      "just", "me", "more", "most", "my", "myself", "no", "nor", "not", "now", "of",
      "off", "on", "once", "only", "or", "other", "our", "ours", "ourselves", "out",
      "over", "own", "same", "she", "should", "so", "some", "such", "than", "that",
      "the", "their", "theirs", "them", "themselves", "then", "there", "these",
      "they", "this", "those", "through", "to", "too", "under", "until", "up",
      "very", "was", "we", "were", "what", "when", "where", "which", "while", "who",
      "whom", "why", "will", "with", "would", "you", "your", "yours", "yourself",
      "yourselves"};
  return words;
}

inline bool is_stopword(const std::string& w) { return stopwords().count(w) != 0; }

// Candidate phrases: maximal runs of non-stopwords between stopwords and
// punctuation boundaries.
inline std::vector<std::vector<std::string>> keyword_phrases(const std::string& text) {
  std::vector<std::vector<std::string>> phrases;
  std::vector<std::string> cur;
  for (const auto& t : split_raw(text)) {
    bool stop = is_stopword(t.word);
    if ((t.boundary_before || stop) && !cur.empty()) {
      phrases.push_back(cur);
      cur.clear();
    }
    if (!stop) cur.push_back(t.word);
  }
  if (!cur.empty()) phrases.push_back(cur);
  return phrases;
}

// Degree/frequency keyword scores: deg(w) counts, for every phrase occurrence
// of w, the length of that phrase; score(w) = deg(w) / freq(w).
inline std::map<std::string, double> keyword_scores(const std::string& text) {
  std::map<std::string, double> deg;
  std::map<std::string, double> freq;
  for (const auto& phrase : keyword_phrases(text)) {
    for (const auto& w : phrase) {
      deg[w] += static_cast<double>(phrase.size());
      freq[w] += 1.0;
    }
  }
  std::map<std::string, double> score;
  for (const auto& [w, d] : deg) score[w] = d / freq[w];
  return score;
}

// Top keywords by score, first-seen order breaking ties. Empty when the text
// has no content words.
inline std::vector<std::string> extract_keywords(const std::string& text, std::size_t max_terms) {
  auto scores = keyword_scores(text);
  std::vector<std::string> order;
  std::unordered_set<std::string> seen;
  for (const auto& phrase : keyword_phrases(text))
    for (const auto& w : phrase)
      if (seen.insert(w).second) order.push_back(w);
  std::stable_sort(order.begin(), order.end(), [&](const std::string& a, const std::string& b) {
    return scores[a] > scores[b];
  });
  if (order.size() > max_terms) order.resize(max_terms);
  return order;
}

}  // namespace i3

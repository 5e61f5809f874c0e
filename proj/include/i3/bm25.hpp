#pragma once

// Okapi BM25 over a tokenized corpus. idf uses the +1-inside-log variant so
// scores stay non-negative.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "i3/errors.hpp"
#include "i3/text.hpp"

namespace i3 {

using PassageId = std::uint64_t;
using QueryId = std::uint64_t;

struct Bm25Params {
  double k1 = 0.9;
  double b = 0.4;

  void validate() const {
    if (k1 < 0.0) throw ConfigError("bm25: k1 must be >= 0");
    if (b < 0.0 || b > 1.0) throw ConfigError("bm25: b must be in [0,1]");
  }
};

// Document frequencies, per-passage term frequencies and lengths.
class CorpusStats {
 public:
  static CorpusStats build(const std::map<PassageId, std::string>& passages) {
    CorpusStats s;
    double total_len = 0.0;
    for (const auto& [pid, text] : passages) {
      auto words = split_words(text);
      auto& tf = s.tf_[pid];
      for (const auto& w : words) ++tf[w];
      for (const auto& [w, n] : tf) ++s.df_[w];
      s.len_[pid] = static_cast<int>(words.size());
      total_len += static_cast<double>(words.size());
    }
    s.count_ = passages.size();
    s.avg_len_ = s.count_ ? total_len / static_cast<double>(s.count_) : 0.0;
    return s;
  }

  std::size_t passage_count() const { return count_; }
  double avg_length() const { return avg_len_; }

  int doc_freq(const std::string& term) const {
    auto it = df_.find(term);
    return it == df_.end() ? 0 : it->second;
  }

  int term_freq(PassageId pid, const std::string& term) const {
    auto it = tf_.find(pid);
    if (it == tf_.end()) throw DataError("bm25: unknown passage id " + std::to_string(pid));
    auto jt = it->second.find(term);
    return jt == it->second.end() ? 0 : jt->second;
  }

  int length(PassageId pid) const {
    auto it = len_.find(pid);
    if (it == len_.end()) throw DataError("bm25: unknown passage id " + std::to_string(pid));
    return it->second;
  }

  bool has(PassageId pid) const { return len_.count(pid) != 0; }

  double idf(const std::string& term) const {
    double g = static_cast<double>(count_);
    double df = static_cast<double>(doc_freq(term));
    return std::log((g - df + 0.5) / (df + 0.5) + 1.0);
  }

  // Passage ids in ascending order.
  std::vector<PassageId> ids() const {
    std::vector<PassageId> out;
    out.reserve(len_.size());
    for (const auto& [pid, n] : len_) out.push_back(pid);
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  std::unordered_map<std::string, int> df_;
  std::unordered_map<PassageId, std::unordered_map<std::string, int>> tf_;
  std::unordered_map<PassageId, int> len_;
  std::size_t count_ = 0;
  double avg_len_ = 0.0;
};

inline double bm25_score(const Bm25Params& params, const CorpusStats& stats,
                         const std::vector<std::string>& query_terms, PassageId pid) {
  double norm_len = stats.avg_length() > 0.0
                        ? static_cast<double>(stats.length(pid)) / stats.avg_length()
                        : 0.0;
  double score = 0.0;
  for (const auto& term : query_terms) {
    double tf = static_cast<double>(stats.term_freq(pid, term));
    if (tf == 0.0) continue;
    double denom = tf + params.k1 * (1.0 - params.b + params.b * norm_len);
    score += stats.idf(term) * tf * (params.k1 + 1.0) / denom;
  }
  return score;
}

// All passages ranked by (score desc, pid asc).
inline std::vector<std::pair<PassageId, double>> bm25_rank(const Bm25Params& params,
                                                           const CorpusStats& stats,
                                                           const std::vector<std::string>& query_terms) {
  if (stats.passage_count() == 0) throw DataError("bm25: empty corpus");
  std::vector<std::pair<PassageId, double>> ranked;
  ranked.reserve(stats.passage_count());
  for (PassageId pid : stats.ids()) ranked.emplace_back(pid, bm25_score(params, stats, query_terms, pid));
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return ranked;
}

}  // namespace i3

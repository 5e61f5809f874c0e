#pragma once

// Corpus/query/qrels ingestion (TSV), TREC run files, the Set-0/Set-1
// analysis split, and a topic-model synthetic dataset generator for
// desk-scale experiments.

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "i3/errors.hpp"
#include "i3/io.hpp"
#include "i3/rng.hpp"
#include "i3/text.hpp"

namespace i3 {

using PassageId = std::uint64_t;
using QueryId = std::uint64_t;

struct Corpus {
  std::map<PassageId, std::string> passages;
  std::size_t size() const { return passages.size(); }
  const std::string& text(PassageId pid) const {
    auto it = passages.find(pid);
    if (it == passages.end()) throw DataError("corpus: unknown passage id " + std::to_string(pid));
    return it->second;
  }
};

using QueryMap = std::map<QueryId, std::string>;

struct QrelEntry {
  QueryId qid;
  PassageId pid;
  int grade;
};

struct Qrels {
  std::vector<QrelEntry> entries;
  std::map<QueryId, std::vector<std::pair<PassageId, int>>> by_query;

  void add(QueryId qid, PassageId pid, int grade) {
    entries.push_back({qid, pid, grade});
    by_query[qid].emplace_back(pid, grade);
  }

  // Passages with grade >= 1 for the query.
  std::set<PassageId> relevant(QueryId qid) const {
    std::set<PassageId> out;
    auto it = by_query.find(qid);
    if (it == by_query.end()) return out;
    for (const auto& [pid, grade] : it->second)
      if (grade >= 1) out.insert(pid);
    return out;
  }
};

namespace detail {

inline std::vector<std::string> split_tsv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == '\t') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

inline std::uint64_t parse_id(const std::string& s, const std::string& what, std::size_t line_no) {
  if (s.empty()) throw DataError(what + ": empty id on line " + std::to_string(line_no));
  std::uint64_t v = 0;
  for (char c : s) {
    if (c < '0' || c > '9')
      throw DataError(what + ": non-numeric id '" + s + "' on line " + std::to_string(line_no));
    v = v * 10 + static_cast<std::uint64_t>(c - '0');
  }
  return v;
}

template <class Fn>
void for_each_line(const std::string& path, Fn&& fn) {
  std::string text = read_file_text(path);
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    fn(line, line_no);
  }
}

}  // namespace detail

// `pid \t text`
inline Corpus load_corpus(const std::string& path) {
  Corpus c;
  detail::for_each_line(path, [&](const std::string& line, std::size_t n) {
    auto f = detail::split_tsv_line(line);
    if (f.size() != 2)
      throw DataError("corpus: expected 2 tab-separated fields on line " + std::to_string(n));
    PassageId pid = detail::parse_id(f[0], "corpus", n);
    if (!c.passages.emplace(pid, f[1]).second)
      throw DataError("corpus: duplicate passage id " + f[0] + " on line " + std::to_string(n));
  });
  return c;
}

// `qid \t text`
inline QueryMap load_queries(const std::string& path) {
  QueryMap q;
  detail::for_each_line(path, [&](const std::string& line, std::size_t n) {
    auto f = detail::split_tsv_line(line);
    if (f.size() != 2)
      throw DataError("queries: expected 2 tab-separated fields on line " + std::to_string(n));
    QueryId qid = detail::parse_id(f[0], "queries", n);
    if (!q.emplace(qid, f[1]).second)
      throw DataError("queries: duplicate query id " + f[0] + " on line " + std::to_string(n));
  });
  return q;
}

// `qid \t 0 \t pid \t grade`
inline Qrels load_qrels(const std::string& path) {
  Qrels q;
  std::set<std::pair<QueryId, PassageId>> seen;
  detail::for_each_line(path, [&](const std::string& line, std::size_t n) {
    auto f = detail::split_tsv_line(line);
    if (f.size() != 4)
      throw DataError("qrels: expected 4 tab-separated fields on line " + std::to_string(n));
    QueryId qid = detail::parse_id(f[0], "qrels", n);
    PassageId pid = detail::parse_id(f[2], "qrels", n);
    int grade;
    try {
      grade = std::stoi(f[3]);
    } catch (...) {
      throw DataError("qrels: bad grade '" + f[3] + "' on line " + std::to_string(n));
    }
    if (grade < 0) throw DataError("qrels: negative grade on line " + std::to_string(n));
    if (!seen.emplace(qid, pid).second)
      throw DataError("qrels: duplicate judgment on line " + std::to_string(n));
    q.add(qid, pid, grade);
  });
  return q;
}

inline void save_corpus(const Corpus& c, const std::string& path) {
  std::string out;
  for (const auto& [pid, text] : c.passages) out += std::to_string(pid) + "\t" + text + "\n";
  write_file_text(path, out);
}

inline void save_queries(const QueryMap& q, const std::string& path) {
  std::string out;
  for (const auto& [qid, text] : q) out += std::to_string(qid) + "\t" + text + "\n";
  write_file_text(path, out);
}

inline void save_qrels(const Qrels& q, const std::string& path) {
  std::string out;
  for (const auto& e : q.entries)
    out += std::to_string(e.qid) + "\t0\t" + std::to_string(e.pid) + "\t" + std::to_string(e.grade) + "\n";
  write_file_text(path, out);
}

// Ranked results per query. Stored rank order is the vector order.
struct RunEntry {
  PassageId pid;
  double score;
};
using Run = std::map<QueryId, std::vector<RunEntry>>;

// TREC format: `qid Q0 pid rank score tag`, rank starting at 1.
inline void save_run(const Run& run, const std::string& path, const std::string& tag = "i3") {
  std::string out;
  char buf[64];
  for (const auto& [qid, entries] : run) {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.6f", entries[i].score);
      out += std::to_string(qid) + " Q0 " + std::to_string(entries[i].pid) + " " +
             std::to_string(i + 1) + " " + buf + " " + tag + "\n";
    }
  }
  write_file_text(path, out);
}

inline Run load_run(const std::string& path) {
  std::map<QueryId, std::vector<std::pair<long, RunEntry>>> staging;
  detail::for_each_line(path, [&](const std::string& line, std::size_t n) {
    std::istringstream is(line);
    std::string qid_s, q0, pid_s, rank_s, score_s, tag;
    if (!(is >> qid_s >> q0 >> pid_s >> rank_s >> score_s >> tag))
      throw DataError("run: malformed line " + std::to_string(n));
    QueryId qid = detail::parse_id(qid_s, "run", n);
    PassageId pid = detail::parse_id(pid_s, "run", n);
    long rank;
    double score;
    try {
      rank = std::stol(rank_s);
      score = std::stod(score_s);
    } catch (...) {
      throw DataError("run: bad rank/score on line " + std::to_string(n));
    }
    staging[qid].push_back({rank, {pid, score}});
  });
  Run run;
  for (auto& [qid, rows] : staging) {
    std::sort(rows.begin(), rows.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& [rank, entry] : rows) run[qid].push_back(entry);
  }
  return run;
}

// ---------------------------------------------------------------------------
// Set-0 / Set-1 analysis split

struct SetSplit {
  std::vector<QueryId> set0;  // all relevant passages unseen in training
  std::vector<QueryId> set1;  // all relevant passages seen in training
  std::vector<QueryId> excluded_mixed;
  std::vector<QueryId> excluded_no_relevant;
};

// A passage is Type 1 when it has at least one relevant query in the
// training qrels. Eval queries whose relevant passages are all Type 1 go to
// Set 1, all Type 0 to Set 0; mixed queries are excluded and reported.
inline SetSplit split_set0_set1(const Qrels& train_qrels, const Qrels& eval_qrels) {
  std::unordered_set<PassageId> type1;
  for (const auto& e : train_qrels.entries)
    if (e.grade >= 1) type1.insert(e.pid);
  SetSplit out;
  for (const auto& [qid, rows] : eval_qrels.by_query) {
    std::size_t n_rel = 0, n_type1 = 0;
    for (const auto& [pid, grade] : rows) {
      if (grade < 1) continue;
      ++n_rel;
      if (type1.count(pid)) ++n_type1;
    }
    if (n_rel == 0)
      out.excluded_no_relevant.push_back(qid);
    else if (n_type1 == 0)
      out.set0.push_back(qid);
    else if (n_type1 == n_rel)
      out.set1.push_back(qid);
    else
      out.excluded_mixed.push_back(qid);
  }
  return out;
}

// ---------------------------------------------------------------------------
// synthetic dataset generator

struct GenConfig {
  std::uint64_t seed = 42;
  int n_topics = 8;
  int passages_per_topic = 8;
  int train_queries_per_topic = 4;
  int eval_queries_per_topic = 0;
  int vocab_size = 400;  // distinct words; half topical, half background
  int passage_min_len = 12;
  int passage_max_len = 24;

  void validate() const {
    if (n_topics < 1 || passages_per_topic < 1 || vocab_size < 1)
      throw ConfigError("gen: counts must be >= 1");
    if (train_queries_per_topic < 0 || eval_queries_per_topic < 0)
      throw ConfigError("gen: negative query count");
    if (train_queries_per_topic + eval_queries_per_topic < 1)
      throw ConfigError("gen: need at least one query per topic");
    if (passage_min_len < 3 || passage_max_len < passage_min_len)
      throw ConfigError("gen: bad passage length range");
  }
};

struct SynthData {
  Corpus corpus;
  QueryMap queries;  // all queries
  Qrels qrels;       // all judgments
  std::vector<QueryId> train_qids;
  std::vector<QueryId> eval_qids;

  QueryMap train_queries() const { return subset(train_qids); }
  QueryMap eval_queries() const { return subset(eval_qids); }
  Qrels train_qrels() const { return subset_qrels(train_qids); }
  Qrels eval_qrels() const { return subset_qrels(eval_qids); }

 private:
  QueryMap subset(const std::vector<QueryId>& qids) const {
    QueryMap out;
    for (QueryId q : qids) out[q] = queries.at(q);
    return out;
  }
  Qrels subset_qrels(const std::vector<QueryId>& qids) const {
    std::set<QueryId> keep(qids.begin(), qids.end());
    Qrels out;
    for (const auto& e : qrels.entries)
      if (keep.count(e.qid)) out.add(e.qid, e.pid, e.grade);
    return out;
  }
};

// Topic-model corpus: each topic owns a disjoint slice of the first half of
// the vocabulary, the second half is shared background. Passages mix topic
// and background words; queries sample topic words from their generating
// passage. Same-topic passages are relevant (grade 1), the generating
// passage gets grade 2.
inline SynthData gen_synthetic(const GenConfig& cfg) {
  cfg.validate();
  int words_per_topic = (cfg.vocab_size / 2) / cfg.n_topics;
  if (words_per_topic < 4)
    throw ConfigError("gen: vocabulary too small for topic separation (need >= 4 words per topic)");
  int background_base = cfg.n_topics * words_per_topic;
  int background_count = cfg.vocab_size - background_base;

  auto word = [&](int idx) {
    std::string s = std::to_string(idx);
    while (s.size() < 4) s = "0" + s;
    return "w" + s;
  };

  Rng rng(cfg.seed);
  SynthData out;

  // Passages, topic-blocked pids starting at 1.
  std::vector<int> topic_of_pid(static_cast<std::size_t>(cfg.n_topics * cfg.passages_per_topic) + 1, -1);
  for (int t = 0; t < cfg.n_topics; ++t) {
    for (int i = 0; i < cfg.passages_per_topic; ++i) {
      PassageId pid = static_cast<PassageId>(t * cfg.passages_per_topic + i + 1);
      int len = cfg.passage_min_len +
                static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.passage_max_len - cfg.passage_min_len + 1)));
      std::string text;
      for (int w = 0; w < len; ++w) {
        int idx;
        if (rng.uniform() < 0.7 || background_count == 0)
          idx = t * words_per_topic + static_cast<int>(rng.below(static_cast<std::uint64_t>(words_per_topic)));
        else
          idx = background_base + static_cast<int>(rng.below(static_cast<std::uint64_t>(background_count)));
        if (!text.empty()) text += " ";
        text += word(idx);
      }
      out.corpus.passages[pid] = text;
      topic_of_pid[pid] = t;
    }
  }

  // Queries: topic words that actually occur in the generating passage,
  // sometimes plus one of its background words. The background word gives
  // lexical retrieval informative cross-topic matches instead of all-zero
  // ties; topic words still dominate relevance.
  QueryId next_qid = 1;
  int total_queries_per_topic = cfg.train_queries_per_topic + cfg.eval_queries_per_topic;
  for (int t = 0; t < cfg.n_topics; ++t) {
    for (int j = 0; j < total_queries_per_topic; ++j) {
      PassageId gen_pid = static_cast<PassageId>(t * cfg.passages_per_topic + (j % cfg.passages_per_topic) + 1);
      std::vector<std::string> topic_words, bg_words;
      {
        std::set<std::string> seen;
        for (const auto& w : split_words(out.corpus.passages[gen_pid])) {
          if (!seen.insert(w).second) continue;
          int idx = std::stoi(w.substr(1));
          if (idx < background_base && idx / words_per_topic == t)
            topic_words.push_back(w);
          else if (idx >= background_base)
            bg_words.push_back(w);
        }
      }
      if (topic_words.empty()) topic_words.push_back(word(t * words_per_topic));
      int q_len = 2 + static_cast<int>(rng.below(3));
      rng.shuffle(topic_words.begin(), topic_words.end());
      if (static_cast<int>(topic_words.size()) > q_len) topic_words.resize(static_cast<std::size_t>(q_len));
      if (!bg_words.empty() && rng.uniform() < 0.5)
        topic_words.push_back(bg_words[rng.below(bg_words.size())]);
      std::string text;
      for (const auto& w : topic_words) {
        if (!text.empty()) text += " ";
        text += w;
      }
      QueryId qid = next_qid++;
      out.queries[qid] = text;
      for (int i = 0; i < cfg.passages_per_topic; ++i) {
        PassageId pid = static_cast<PassageId>(t * cfg.passages_per_topic + i + 1);
        out.qrels.add(qid, pid, pid == gen_pid ? 2 : 1);
      }
      if (j < cfg.train_queries_per_topic)
        out.train_qids.push_back(qid);
      else
        out.eval_qids.push_back(qid);
    }
  }
  return out;
}

}  // namespace i3

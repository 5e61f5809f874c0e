#pragma once

// Rank-based effectiveness metrics over TREC-style runs: MRR@k, Recall@k,
// NDCG@k. Means accumulate in double regardless of where scores came from.

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "i3/data.hpp"

namespace i3 {

struct MetricResult {
  double value = 0.0;
  std::size_t n_queries = 0;  // queries contributing to the mean
  std::size_t n_warned = 0;   // queries flagged (missing qrels / no relevant)
};

// Mean over run queries of 1/rank of the first relevant result in the top
// k, else 0. Queries absent from the qrels contribute 0 with a warning.
inline MetricResult mrr_at_k(const Run& run, const Qrels& qrels, int k, bool quiet = false) {
  if (k < 1) throw ConfigError("mrr: k must be >= 1");
  MetricResult res;
  double sum = 0.0;
  for (const auto& [qid, entries] : run) {
    if (!qrels.by_query.count(qid)) {
      ++res.n_warned;
      if (!quiet) std::cerr << "[metrics] warning: query " << qid << " missing from qrels, counted as 0\n";
    }
    std::set<PassageId> rel = qrels.relevant(qid);
    double rr = 0.0;
    for (std::size_t i = 0; i < entries.size() && i < static_cast<std::size_t>(k); ++i) {
      if (rel.count(entries[i].pid)) {
        rr = 1.0 / static_cast<double>(i + 1);
        break;
      }
    }
    sum += rr;
    ++res.n_queries;
  }
  res.value = res.n_queries ? sum / static_cast<double>(res.n_queries) : 0.0;
  return res;
}

// Mean over queries of |relevant in top k| / |relevant|. Queries with no
// relevant passages are skipped with a warning.
inline MetricResult recall_at_k(const Run& run, const Qrels& qrels, int k, bool quiet = false) {
  if (k < 1) throw ConfigError("recall: k must be >= 1");
  MetricResult res;
  double sum = 0.0;
  for (const auto& [qid, entries] : run) {
    std::set<PassageId> rel = qrels.relevant(qid);
    if (rel.empty()) {
      ++res.n_warned;
      if (!quiet) std::cerr << "[metrics] warning: query " << qid << " has no relevant passages, skipped\n";
      continue;
    }
    std::size_t hit = 0;
    for (std::size_t i = 0; i < entries.size() && i < static_cast<std::size_t>(k); ++i)
      if (rel.count(entries[i].pid)) ++hit;
    sum += static_cast<double>(hit) / static_cast<double>(rel.size());
    ++res.n_queries;
  }
  res.value = res.n_queries ? sum / static_cast<double>(res.n_queries) : 0.0;
  return res;
}

// DCG with 2^grade - 1 gains and log2(rank + 1) discounts, normalized by
// the ideal ordering of that query's own grades. All-zero-grade queries are
// skipped with a warning.
inline MetricResult ndcg_at_k(const Run& run, const Qrels& qrels, int k, bool quiet = false) {
  if (k < 1) throw ConfigError("ndcg: k must be >= 1");
  MetricResult res;
  double sum = 0.0;
  for (const auto& [qid, entries] : run) {
    std::map<PassageId, int> grade;
    auto it = qrels.by_query.find(qid);
    if (it != qrels.by_query.end())
      for (const auto& [pid, g] : it->second) grade[pid] = g;
    std::vector<int> grades;
    for (const auto& [pid, g] : grade) grades.push_back(g);
    std::sort(grades.begin(), grades.end(), std::greater<int>());
    if (grades.empty() || grades[0] == 0) {
      ++res.n_warned;
      if (!quiet) std::cerr << "[metrics] warning: query " << qid << " has no graded relevance, skipped\n";
      continue;
    }
    double dcg = 0.0;
    for (std::size_t i = 0; i < entries.size() && i < static_cast<std::size_t>(k); ++i) {
      auto gt = grade.find(entries[i].pid);
      int g = gt == grade.end() ? 0 : gt->second;
      dcg += (std::pow(2.0, g) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
    }
    double idcg = 0.0;
    for (std::size_t i = 0; i < grades.size() && i < static_cast<std::size_t>(k); ++i)
      idcg += (std::pow(2.0, grades[i]) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
    sum += dcg / idcg;
    ++res.n_queries;
  }
  res.value = res.n_queries ? sum / static_cast<double>(res.n_queries) : 0.0;
  return res;
}

struct MetricRow {
  std::string metric;
  int k;
  double value;
  std::size_t n_queries;
};

// `metric,k,value,n_queries` CSV.
inline std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::string out = "metric,k,value,n_queries\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.6f", r.value);
    out += r.metric + "," + std::to_string(r.k) + "," + buf + "," + std::to_string(r.n_queries) + "\n";
  }
  return out;
}

}  // namespace i3

#pragma once

// Two-stage fine-tuning: hard-negative mining (BM25, then model-mined),
// keyword warm-up for the reconstructor, and the SGD/Adam training loop
// over the combined contrastive + reconstruction loss.

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "i3/bm25.hpp"
#include "i3/data.hpp"
#include "i3/index.hpp"
#include "i3/losses.hpp"
#include "i3/model.hpp"

namespace i3 {

struct TrainingExample {
  QueryId qid;
  PassageId positive;
  std::vector<PassageId> negatives;  // deduplicated, never contains the positive
};

struct TrainConfig {
  double lr = 0.05;
  int batch_size = 8;
  int neg_ratio = 7;  // negatives used per positive each step
  int epochs = 1;
  double lambda0 = 1.0;
  long lambda_horizon = 0;  // steps; 0 means decay across the whole run
  std::uint64_t seed = 42;
  int stage = 1;
  bool adam = false;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    if (lr <= 0.0) throw ConfigError("train: lr must be positive");
    if (batch_size < 1 || neg_ratio < 1) throw ConfigError("train: batch_size and neg_ratio must be >= 1");
    if (epochs < 0) throw ConfigError("train: negative epoch count");
    if (lambda0 < 0.0 || lambda0 > 1.0) throw ConfigError("train: lambda0 must be in [0,1]");
    if (stage != 1 && stage != 2) throw ConfigError("train: stage must be 1 or 2");
  }
};

// ---------------------------------------------------------------------------
// examples file: `qid \t pos_pid \t neg_pid_1,neg_pid_2,...`

inline std::vector<TrainingExample> load_examples(const std::string& path) {
  std::vector<TrainingExample> out;
  detail::for_each_line(path, [&](const std::string& line, std::size_t n) {
    auto f = detail::split_tsv_line(line);
    if (f.size() != 3)
      throw DataError("examples: expected 3 tab-separated fields on line " + std::to_string(n));
    TrainingExample ex;
    ex.qid = detail::parse_id(f[0], "examples", n);
    ex.positive = detail::parse_id(f[1], "examples", n);
    std::set<PassageId> seen;
    std::string cur;
    auto flush = [&] {
      if (cur.empty()) return;
      PassageId pid = detail::parse_id(cur, "examples", n);
      if (pid == ex.positive)
        throw DataError("examples: positive listed as negative on line " + std::to_string(n));
      if (!seen.insert(pid).second)
        throw DataError("examples: duplicate negative on line " + std::to_string(n));
      ex.negatives.push_back(pid);
      cur.clear();
    };
    for (char c : f[2]) {
      if (c == ',')
        flush();
      else
        cur += c;
    }
    flush();
    out.push_back(std::move(ex));
  });
  return out;
}

inline void save_examples(const std::vector<TrainingExample>& examples, const std::string& path) {
  std::string out;
  for (const auto& ex : examples) {
    out += std::to_string(ex.qid) + "\t" + std::to_string(ex.positive) + "\t";
    for (std::size_t i = 0; i < ex.negatives.size(); ++i) {
      if (i) out += ",";
      out += std::to_string(ex.negatives[i]);
    }
    out += "\n";
  }
  write_file_text(path, out);
}

// ---------------------------------------------------------------------------
// hard-negative mining

// Top-k BM25 passages with all positives removed before truncation; ties by
// ascending passage id.
inline std::vector<PassageId> mine_bm25_negatives(const Bm25Params& params, const CorpusStats& stats,
                                                  const std::vector<std::string>& query_terms,
                                                  const std::set<PassageId>& positives, int k) {
  if (k < 1) throw ConfigError("mine: k must be >= 1");
  auto ranked = bm25_rank(params, stats, query_terms);
  std::vector<PassageId> out;
  for (const auto& [pid, score] : ranked) {
    if (positives.count(pid)) continue;
    out.push_back(pid);
    if (static_cast<int>(out.size()) == k) break;
  }
  return out;
}

// Top-k MIPS results minus positives, from a built index.
inline std::vector<PassageId> mine_model_negatives(const PassageIndex& index, const Tensor& query_vec,
                                                   const std::set<PassageId>& positives, int k) {
  if (k < 0) throw ConfigError("mine: negative k");
  if (k == 0) return {};
  int fetch = k + static_cast<int>(positives.size());
  auto hits = search_topk(index, query_vec, std::min<int>(fetch, static_cast<int>(index.count())));
  std::vector<PassageId> out;
  for (const auto& h : hits) {
    if (positives.count(h.pid)) continue;
    out.push_back(h.pid);
    if (static_cast<int>(out.size()) == k) break;
  }
  return out;
}

// The training positive for a query: its highest-grade relevant passage,
// lowest id on ties.
inline PassageId pick_positive(const Qrels& qrels, QueryId qid) {
  auto it = qrels.by_query.find(qid);
  if (it == qrels.by_query.end()) throw DataError("examples: query has no judgments");
  PassageId best = 0;
  int best_grade = 0;
  for (const auto& [pid, grade] : it->second) {
    if (grade > best_grade || (grade == best_grade && grade >= 1 && pid < best)) {
      best = pid;
      best_grade = grade;
    }
  }
  if (best_grade < 1) throw DataError("examples: query has no relevant passage");
  return best;
}

// One example per judged query: positive from the qrels, negatives from
// BM25 over the corpus.
inline std::vector<TrainingExample> mine_examples_bm25(const QueryMap& queries, const Qrels& qrels,
                                                       const Bm25Params& bm25, const CorpusStats& stats,
                                                       int k) {
  std::vector<TrainingExample> out;
  for (const auto& [qid, text] : queries) {
    if (!qrels.by_query.count(qid)) continue;
    std::set<PassageId> positives = qrels.relevant(qid);
    if (positives.empty()) continue;
    TrainingExample ex;
    ex.qid = qid;
    ex.positive = pick_positive(qrels, qid);
    ex.negatives = mine_bm25_negatives(bm25, stats, split_words(text), positives, k);
    if (!ex.negatives.empty()) out.push_back(std::move(ex));
  }
  return out;
}

// Stage-2 pool: model-mined negatives appended to the existing (BM25)
// negatives, so the new pool is a superset of the old one.
inline std::vector<TrainingExample> augment_examples_model(const std::vector<TrainingExample>& examples,
                                                           const ModelParams& params,
                                                           const PassageIndex& index,
                                                           const QueryMap& queries, const Qrels& qrels,
                                                           int k) {
  std::vector<TrainingExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    TrainingExample merged = ex;
    auto qit = queries.find(ex.qid);
    if (qit == queries.end()) throw DataError("mine: query " + std::to_string(ex.qid) + " not found");
    std::vector<int> q_ids = tokenize(qit->second, params.config.max_q_len, params.vocab);
    Tensor qv = encode_query(params, q_ids);
    std::set<PassageId> positives = qrels.relevant(ex.qid);
    positives.insert(ex.positive);
    std::set<PassageId> have(ex.negatives.begin(), ex.negatives.end());
    for (PassageId pid : mine_model_negatives(index, qv, positives, k))
      if (have.insert(pid).second) merged.negatives.push_back(pid);
    out.push_back(std::move(merged));
  }
  return out;
}

// ---------------------------------------------------------------------------
// optimizers

class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, std::size_t n_params)
      : cfg_(cfg), m_(n_params), v_(n_params) {}

  void step(std::vector<NamedParam<float>>& params, Tape& tape) {
    ++t_;
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i].tensor;
      int node = tape.node_of(p);
      bool has = node >= 0 && tape.has_grad(node);
      if (!cfg_.adam) {
        if (!has) continue;
        const auto& g = tape.grad_buffer(node);
        float lr = static_cast<float>(cfg_.lr);
        for (std::size_t j = 0; j < p.size(); ++j) (*p.data)[j] -= lr * g[j];
      } else {
        auto& m = m_[i];
        auto& v = v_[i];
        if (m.empty()) {
          m.assign(p.size(), 0.0);
          v.assign(p.size(), 0.0);
        }
        double b1 = cfg_.adam_beta1, b2 = cfg_.adam_beta2;
        double bc1 = 1.0 - std::pow(b1, t_);
        double bc2 = 1.0 - std::pow(b2, t_);
        const std::vector<float>* g = has ? &tape.grad_buffer(node) : nullptr;
        for (std::size_t j = 0; j < p.size(); ++j) {
          double gj = g ? static_cast<double>((*g)[j]) : 0.0;
          m[j] = b1 * m[j] + (1.0 - b1) * gj;
          v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
          double update = cfg_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.adam_eps);
          (*p.data)[j] -= static_cast<float>(update);
        }
      }
    }
  }

 private:
  TrainConfig cfg_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// reconstructor warm-up

// Trains only the pseudo seed, the cross-attention layers and the decode
// head on keyword reconstruction; everything else stays frozen by simply
// not being watched on the tape. Passages without keywords are skipped.
inline std::vector<double> warmup_reconstructor(ModelParams& params, const Corpus& corpus, long steps,
                                                double lr) {
  if (steps < 0) throw ConfigError("warmup: negative step count");
  struct Target {
    PassageId pid;
    std::vector<int> word_ids;
  };
  std::vector<Target> targets;
  for (const auto& [pid, text] : corpus.passages) {
    auto words = extract_keywords(text, static_cast<std::size_t>(params.config.pseudo_len));
    if (words.empty()) continue;
    std::vector<int> ids;
    for (const auto& w : words) ids.push_back(params.vocab.id_of(w));
    targets.push_back({pid, std::move(ids)});
  }
  if (targets.empty() && steps > 0) throw DataError("warmup: no passage yields keywords");

  TrainConfig opt_cfg;
  opt_cfg.lr = lr;
  auto watched = params.reconstructor_params();
  Optimizer opt(opt_cfg, watched.size());

  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(steps));
  std::unordered_map<PassageId, std::vector<int>> token_cache;
  for (long step = 0; step < steps; ++step) {
    const Target& t = targets[static_cast<std::size_t>(step) % targets.size()];
    auto it = token_cache.find(t.pid);
    if (it == token_cache.end())
      it = token_cache.emplace(t.pid, tokenize(corpus.text(t.pid), params.config.max_p_len, params.vocab)).first;

    Tape tape;
    Tape::Scope scope(tape);
    for (auto& np : watched) tape.watch(*np.tensor);
    PassageEncodingT<float> enc = encode_passage_tokens(params, it->second);
    Tensor pseudo = reconstruct_pseudo_query(params, enc.vecs, enc.mask);
    Tensor loss = reconstruction_loss(params, pseudo, t.word_ids);
    tape.backward(loss);
    opt.step(watched, tape);
    losses.push_back(static_cast<double>(loss.value()));
  }
  return losses;
}

// ---------------------------------------------------------------------------
// training loop

struct LossLogRow {
  long step;
  int epoch;
  double l_c;
  double l_r;
  double lambda;
  double total;
};

inline std::string loss_log_csv(const std::vector<LossLogRow>& rows) {
  std::string out = "step,epoch,L_c,L_r,lambda,L\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%ld,%d,%.6f,%.6f,%.6f,%.6f\n", r.step, r.epoch, r.l_c, r.l_r,
                  r.lambda, r.total);
    out += buf;
  }
  return out;
}

// One stage of fine-tuning. Deterministic for a fixed seed: example order,
// negative subsampling and parameter updates all flow from `cfg.seed`.
// Scores come from the full pipeline, so with zero reconstructor and
// interactor layers this trains a plain dual-encoder.
inline std::vector<LossLogRow> train_stage(ModelParams& params,
                                           const std::vector<TrainingExample>& examples,
                                           const Corpus& corpus, const QueryMap& queries,
                                           const TrainConfig& cfg) {
  cfg.validate();
  if (examples.empty()) throw DataError("train: no examples");
  for (const auto& ex : examples)
    if (ex.negatives.empty()) throw DataError("train: example without negatives");

  std::unordered_map<PassageId, std::vector<int>> p_tokens;
  std::unordered_map<QueryId, std::vector<int>> q_tokens;
  for (const auto& ex : examples) {
    auto qit = queries.find(ex.qid);
    if (qit == queries.end()) throw DataError("train: query " + std::to_string(ex.qid) + " not found");
    if (!q_tokens.count(ex.qid))
      q_tokens[ex.qid] = tokenize(qit->second, params.config.max_q_len, params.vocab);
    if (!p_tokens.count(ex.positive))
      p_tokens[ex.positive] = tokenize(corpus.text(ex.positive), params.config.max_p_len, params.vocab);
    for (PassageId pid : ex.negatives)
      if (!p_tokens.count(pid))
        p_tokens[pid] = tokenize(corpus.text(pid), params.config.max_p_len, params.vocab);
  }

  long steps_per_epoch = (static_cast<long>(examples.size()) + cfg.batch_size - 1) / cfg.batch_size;
  long horizon = cfg.lambda_horizon > 0 ? cfg.lambda_horizon
                                        : std::max<long>(1, steps_per_epoch * cfg.epochs);

  auto watched = params.named_params();
  Optimizer opt(cfg, watched.size());
  Rng rng(cfg.seed);
  Rng drop_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  DropoutCtx drop{params.config.dropout, &drop_rng};
  const DropoutCtx* drop_ptr = params.config.dropout > 0.0 ? &drop : nullptr;

  std::vector<LossLogRow> log;
  long global_step = 0;
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    for (std::size_t batch_start = 0; batch_start < order.size();
         batch_start += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t batch_end =
          std::min(order.size(), batch_start + static_cast<std::size_t>(cfg.batch_size));
      double lambda = lambda_at(global_step, cfg.lambda0, horizon);

      Tape tape;
      Tape::Scope scope(tape);
      for (auto& np : watched) tape.watch(*np.tensor);

      std::vector<Tensor> contrastive_terms;
      std::vector<Tensor> recon_terms;
      for (std::size_t bi = batch_start; bi < batch_end; ++bi) {
        const TrainingExample& ex = examples[order[bi]];
        const std::vector<int>& q_ids = q_tokens[ex.qid];

        // negative subset for this step
        std::vector<PassageId> negs = ex.negatives;
        if (static_cast<int>(negs.size()) > cfg.neg_ratio) {
          rng.shuffle(negs.begin(), negs.end());
          negs.resize(static_cast<std::size_t>(cfg.neg_ratio));
        }

        Tensor qv = encode_query(params, q_ids, drop_ptr);
        PassageEncodingT<float> pos_enc = encode_passage_tokens(params, p_tokens[ex.positive], drop_ptr);
        Tensor pos_pseudo = reconstruct_pseudo_query(params, pos_enc.vecs, pos_enc.mask);
        Tensor pos_pooled = interact(params, pos_pseudo, pos_enc.vecs, pos_enc.mask, drop_ptr).pooled;
        Tensor pos_score = dot(qv, pos_pooled);

        std::vector<Tensor> neg_scores;
        neg_scores.reserve(negs.size());
        for (PassageId pid : negs)
          neg_scores.push_back(dot(qv, query_aware_passage_vec(params, p_tokens[pid], drop_ptr)));
        contrastive_terms.push_back(contrastive_loss(pos_score, neg_scores));

        if (lambda > 0.0) {
          std::vector<int> words = content_ids(q_ids);
          if (!words.empty())
            recon_terms.push_back(reconstruction_loss(params, pos_pseudo, words));
        }
      }

      Tensor l_c = mean_all(stack_scalars(contrastive_terms));
      Tensor total = l_c;
      double l_r_value = 0.0;
      if (!recon_terms.empty()) {
        Tensor l_r = mean_all(stack_scalars(recon_terms));
        l_r_value = static_cast<double>(l_r.value());
        total = combined_loss(l_c, l_r, static_cast<float>(lambda));
      }
      if (!std::isfinite(static_cast<double>(total.value())))
        throw NumericError("train: loss is not finite at step " + std::to_string(global_step));

      tape.backward(total);
      opt.step(watched, tape);
      log.push_back({global_step, epoch, static_cast<double>(l_c.value()), l_r_value, lambda,
                     static_cast<double>(total.value())});
      ++global_step;
    }
  }
  return log;
}

}  // namespace i3

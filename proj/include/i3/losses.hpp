#pragma once

// Training losses: contrastive over (positive, hard negatives), the
// position-aligned pseudo-query reconstruction loss, their weighted
// combination, and the linear lambda decay.

#include <algorithm>
#include <vector>

#include "i3/model.hpp"
#include "i3/tensor.hpp"

namespace i3 {

// -log( exp(s+) / (exp(s+) + sum exp(s-)) ), max-subtracted.
template <class S>
TensorT<S> contrastive_loss(const TensorT<S>& pos_score, const std::vector<TensorT<S>>& neg_scores) {
  if (neg_scores.empty()) throw DataError("contrastive_loss: need at least one negative");
  std::vector<TensorT<S>> all;
  all.reserve(neg_scores.size() + 1);
  all.push_back(pos_score);
  for (const auto& s : neg_scores) all.push_back(s);
  return nll_first(stack_scalars(all));
}

// Cross-entropy between pseudo row i and query word i under the decode
// head. Query words beyond the pseudo length are dropped; pseudo rows
// beyond the query contribute nothing; mean over the rows that remain.
template <class S>
TensorT<S> reconstruction_loss(const ModelParamsT<S>& params, const TensorT<S>& pseudo,
                               const std::vector<int>& query_word_ids) {
  if (query_word_ids.empty()) throw DataError("reconstruction_loss: empty query");
  int m = std::min<int>(static_cast<int>(query_word_ids.size()), pseudo.rows());
  std::vector<int> targets(query_word_ids.begin(), query_word_ids.begin() + m);
  TensorT<S> rows = slice_rows(pseudo, 0, m);
  TensorT<S> logits = add_rowwise(matmul(rows, params.decode_w), params.decode_b);
  return cross_entropy(logits, targets);
}

template <class S>
TensorT<S> combined_loss(const TensorT<S>& contrastive, const TensorT<S>& reconstruction, S lambda) {
  return add(contrastive, scale(reconstruction, lambda));
}

// Per-step linear decay from lambda0 to 0 over `horizon` steps.
inline double lambda_at(long step, double lambda0, long horizon) {
  if (step < 0) throw ConfigError("lambda_at: negative step");
  if (horizon <= 0) throw ConfigError("lambda_at: horizon must be positive");
  if (step >= horizon) return 0.0;
  return lambda0 * (1.0 - static_cast<double>(step) / static_cast<double>(horizon));
}

}  // namespace i3

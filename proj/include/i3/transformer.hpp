#pragma once

// Transformer encoder building blocks: embeddings, scaled dot-product
// attention, multi-head self-attention and post-norm encoder layers.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "i3/tensor.hpp"

namespace i3 {

// Optional training-time context threaded through forward passes.
struct DropoutCtx {
  double rate = 0.0;
  Rng* rng = nullptr;
  bool enabled() const { return rate > 0.0 && rng != nullptr; }
};

template <class S>
struct EncoderLayerT {
  std::vector<TensorT<S>> wq, wk, wv;  // per head, d_model x d_head
  TensorT<S> wo;                       // d_model x d_model
  TensorT<S> ff_w1, ff_b1, ff_w2, ff_b2;
  TensorT<S> ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;

  static EncoderLayerT init(int d_model, int heads, Rng& rng, double std_dev = 0.02) {
    if (heads <= 0 || d_model % heads != 0)
      throw ConfigError("encoder layer: heads must divide d_model");
    int d_head = d_model / heads;
    int d_ff = 4 * d_model;
    EncoderLayerT l;
    for (int h = 0; h < heads; ++h) {
      l.wq.push_back(TensorT<S>::randn({d_model, d_head}, rng, std_dev));
      l.wk.push_back(TensorT<S>::randn({d_model, d_head}, rng, std_dev));
      l.wv.push_back(TensorT<S>::randn({d_model, d_head}, rng, std_dev));
    }
    l.wo = TensorT<S>::randn({d_model, d_model}, rng, std_dev);
    l.ff_w1 = TensorT<S>::randn({d_model, d_ff}, rng, std_dev);
    l.ff_b1 = TensorT<S>::zeros({d_ff});
    l.ff_w2 = TensorT<S>::randn({d_ff, d_model}, rng, std_dev);
    l.ff_b2 = TensorT<S>::zeros({d_model});
    l.ln1_gamma = TensorT<S>::full({d_model}, S(1));
    l.ln1_beta = TensorT<S>::zeros({d_model});
    l.ln2_gamma = TensorT<S>::full({d_model}, S(1));
    l.ln2_beta = TensorT<S>::zeros({d_model});
    return l;
  }
};

// key_mask broadcast to one row per query.
inline std::vector<std::uint8_t> broadcast_key_mask(const std::vector<std::uint8_t>& key_mask,
                                                    int q_rows) {
  if (key_mask.empty()) return {};
  std::vector<std::uint8_t> m(static_cast<std::size_t>(q_rows) * key_mask.size());
  for (int i = 0; i < q_rows; ++i)
    std::copy(key_mask.begin(), key_mask.end(), m.begin() + static_cast<std::size_t>(i) * key_mask.size());
  return m;
}

// softmax(q k^T * scale, masked keys) v
template <class S>
TensorT<S> attention(const TensorT<S>& queries, const TensorT<S>& keys, const TensorT<S>& values,
                     const std::vector<std::uint8_t>& key_mask, S scale) {
  if (keys.rows() != values.rows()) throw ShapeError("attention: key/value row mismatch");
  if (!key_mask.empty() && static_cast<int>(key_mask.size()) != keys.rows())
    throw ShapeError("attention: key mask size mismatch");
  TensorT<S> scores = i3::scale(matmul_nt(queries, keys), scale);
  TensorT<S> attn = softmax_rows(scores, broadcast_key_mask(key_mask, queries.rows()));
  return matmul(attn, values);
}

// Default scale 1/sqrt(d) with d the query width.
template <class S>
TensorT<S> attention(const TensorT<S>& queries, const TensorT<S>& keys, const TensorT<S>& values,
                     const std::vector<std::uint8_t>& key_mask = {}) {
  return attention(queries, keys, values, key_mask,
                   static_cast<S>(1.0 / std::sqrt(static_cast<double>(queries.cols()))));
}

template <class S>
TensorT<S> multi_head_self_attention(const EncoderLayerT<S>& layer, const TensorT<S>& x,
                                     const std::vector<std::uint8_t>& mask) {
  int heads = static_cast<int>(layer.wq.size());
  int d_head = layer.wq[0].cols();
  S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(d_head)));
  std::vector<TensorT<S>> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    TensorT<S> q = matmul(x, layer.wq[static_cast<std::size_t>(h)]);
    TensorT<S> k = matmul(x, layer.wk[static_cast<std::size_t>(h)]);
    TensorT<S> v = matmul(x, layer.wv[static_cast<std::size_t>(h)]);
    outs.push_back(attention(q, k, v, mask, scale));
  }
  return matmul(concat_cols(outs), layer.wo);
}

template <class S>
TensorT<S> encoder_layer_forward(const EncoderLayerT<S>& layer, const TensorT<S>& x,
                                 const std::vector<std::uint8_t>& mask,
                                 const DropoutCtx* drop = nullptr) {
  TensorT<S> a = multi_head_self_attention(layer, x, mask);
  if (drop && drop->enabled()) a = dropout(a, drop->rate, *drop->rng);
  TensorT<S> x1 = layer_norm(add(x, a), layer.ln1_gamma, layer.ln1_beta);
  TensorT<S> f = add_rowwise(matmul(gelu(add_rowwise(matmul(x1, layer.ff_w1), layer.ff_b1)),
                                    layer.ff_w2),
                             layer.ff_b2);
  if (drop && drop->enabled()) f = dropout(f, drop->rate, *drop->rng);
  return layer_norm(add(x1, f), layer.ln2_gamma, layer.ln2_beta);
}

// Post-norm encoder stack over already-embedded token vectors. Returns all
// token vectors, not pooled. An empty stack is the identity.
template <class S>
TensorT<S> encoder_forward(const std::vector<EncoderLayerT<S>>& layers, const TensorT<S>& embedded,
                           const std::vector<std::uint8_t>& mask, const DropoutCtx* drop = nullptr) {
  if (!mask.empty() && static_cast<int>(mask.size()) != embedded.rows())
    throw ShapeError("encoder_forward: mask length mismatch");
  TensorT<S> x = embedded;
  for (const auto& layer : layers) x = encoder_layer_forward(layer, x, mask, drop);
  return x;
}

// Token embedding rows plus learned absolute position embeddings.
template <class S>
TensorT<S> embed_sequence(const TensorT<S>& tok_emb, const TensorT<S>& pos_emb,
                          const std::vector<int>& ids) {
  if (ids.empty()) throw DataError("embed_sequence: empty sequence");
  if (static_cast<int>(ids.size()) > pos_emb.rows())
    throw DataError("embed_sequence: length exceeds position embedding table");
  TensorT<S> tokens = gather_rows(tok_emb, ids);
  TensorT<S> pos = slice_rows(pos_emb, 0, static_cast<int>(ids.size()));
  return add(tokens, pos);
}

}  // namespace i3

#pragma once

// The retriever model: query/passage encoders, pseudo-query reconstructor,
// query-passage interactor, final scoring, and baseline scorers (dual,
// cross, token-level maxsim) plus pseudo-query term decoding.

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "i3/tensor.hpp"
#include "i3/text.hpp"
#include "i3/transformer.hpp"

namespace i3 {

struct I3Config {
  int d_model = 32;
  int heads = 4;
  int layers_q = 2;
  int layers_p = 2;
  int layers_recon = 1;
  int layers_inter = 1;
  int pseudo_len = 32;  // rows of the trainable pseudo-query seed
  int max_q_len = 32;
  int max_p_len = 128;
  int vocab_size = 0;  // filled in when the vocabulary is known
  double dropout = 0.0;
  // Reconstructor layers are pure cross-attention when strict; by default
  // each layer adds a residual connection and layer norm.
  bool recon_strict = false;

  int pos_rows() const { return max_q_len + max_p_len; }

  void validate() const {
    if (d_model <= 0 || heads <= 0 || d_model % heads != 0)
      throw ConfigError("config: heads must divide d_model");
    if (layers_q < 0 || layers_p < 0 || layers_recon < 0 || layers_inter < 0)
      throw ConfigError("config: negative layer count");
    if (pseudo_len <= 0) throw ConfigError("config: pseudo_len must be positive");
    if (max_q_len < 2 || max_p_len < 2) throw ConfigError("config: max lengths must be >= 2");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("config: dropout must be in [0,1)");
  }
};

template <class S>
struct ReconLayerT {
  TensorT<S> wq, wk, wv;  // d_model x d_model, single-head
  TensorT<S> ln_gamma, ln_beta;

  static ReconLayerT init(int d_model, Rng& rng, double std_dev = 0.02) {
    ReconLayerT l;
    l.wq = TensorT<S>::randn({d_model, d_model}, rng, std_dev);
    l.wk = TensorT<S>::randn({d_model, d_model}, rng, std_dev);
    l.wv = TensorT<S>::randn({d_model, d_model}, rng, std_dev);
    l.ln_gamma = TensorT<S>::full({d_model}, S(1));
    l.ln_beta = TensorT<S>::zeros({d_model});
    return l;
  }
};

template <class S>
struct NamedParam {
  std::string name;
  TensorT<S>* tensor;
};

template <class S>
struct ModelParamsT {
  I3Config config;
  Vocabulary vocab;

  TensorT<S> tok_emb;  // |V| x d_model
  TensorT<S> pos_emb;  // pos_rows x d_model
  std::vector<EncoderLayerT<S>> query_layers;
  std::vector<EncoderLayerT<S>> passage_layers;
  std::vector<ReconLayerT<S>> recon_layers;
  std::vector<EncoderLayerT<S>> inter_layers;
  TensorT<S> pseudo_seed;  // pseudo_len x d_model, shared across all passages
  TensorT<S> decode_w;     // d_model x |V|
  TensorT<S> decode_b;     // |V|
  TensorT<S> fc_w;         // d_model, cross-encoder head
  TensorT<S> fc_b;         // 1

  static ModelParamsT init(I3Config cfg, Vocabulary vocab, std::uint64_t seed) {
    cfg.vocab_size = static_cast<int>(vocab.size());
    cfg.validate();
    Rng rng(seed);
    ModelParamsT p;
    p.config = cfg;
    p.vocab = std::move(vocab);
    p.tok_emb = TensorT<S>::randn({cfg.vocab_size, cfg.d_model}, rng, 0.02);
    p.pos_emb = TensorT<S>::randn({cfg.pos_rows(), cfg.d_model}, rng, 0.02);
    for (int i = 0; i < cfg.layers_q; ++i)
      p.query_layers.push_back(EncoderLayerT<S>::init(cfg.d_model, cfg.heads, rng));
    for (int i = 0; i < cfg.layers_p; ++i)
      p.passage_layers.push_back(EncoderLayerT<S>::init(cfg.d_model, cfg.heads, rng));
    for (int i = 0; i < cfg.layers_recon; ++i)
      p.recon_layers.push_back(ReconLayerT<S>::init(cfg.d_model, rng));
    for (int i = 0; i < cfg.layers_inter; ++i)
      p.inter_layers.push_back(EncoderLayerT<S>::init(cfg.d_model, cfg.heads, rng));
    p.pseudo_seed = TensorT<S>::randn({cfg.pseudo_len, cfg.d_model}, rng, 0.02);
    p.decode_w = TensorT<S>::randn({cfg.d_model, cfg.vocab_size}, rng, 0.02);
    p.decode_b = TensorT<S>::zeros({cfg.vocab_size});
    p.fc_w = TensorT<S>::randn({cfg.d_model}, rng, 0.02);
    p.fc_b = TensorT<S>::zeros({1});
    return p;
  }

  // Stable name -> tensor enumeration; checkpoint layout, optimizer state
  // and gradient checks all iterate this order.
  std::vector<NamedParam<S>> named_params() {
    std::vector<NamedParam<S>> out;
    out.push_back({"tok_emb", &tok_emb});
    out.push_back({"pos_emb", &pos_emb});
    auto add_encoder = [&out](const std::string& prefix, std::vector<EncoderLayerT<S>>& layers) {
      for (std::size_t i = 0; i < layers.size(); ++i) {
        auto& l = layers[i];
        std::string base = prefix + "." + std::to_string(i) + ".";
        for (std::size_t h = 0; h < l.wq.size(); ++h) {
          std::string hs = std::to_string(h);
          out.push_back({base + "wq." + hs, &l.wq[h]});
          out.push_back({base + "wk." + hs, &l.wk[h]});
          out.push_back({base + "wv." + hs, &l.wv[h]});
        }
        out.push_back({base + "wo", &l.wo});
        out.push_back({base + "ff_w1", &l.ff_w1});
        out.push_back({base + "ff_b1", &l.ff_b1});
        out.push_back({base + "ff_w2", &l.ff_w2});
        out.push_back({base + "ff_b2", &l.ff_b2});
        out.push_back({base + "ln1_gamma", &l.ln1_gamma});
        out.push_back({base + "ln1_beta", &l.ln1_beta});
        out.push_back({base + "ln2_gamma", &l.ln2_gamma});
        out.push_back({base + "ln2_beta", &l.ln2_beta});
      }
    };
    add_encoder("q_enc", query_layers);
    add_encoder("p_enc", passage_layers);
    for (std::size_t i = 0; i < recon_layers.size(); ++i) {
      auto& l = recon_layers[i];
      std::string base = "recon." + std::to_string(i) + ".";
      out.push_back({base + "wq", &l.wq});
      out.push_back({base + "wk", &l.wk});
      out.push_back({base + "wv", &l.wv});
      out.push_back({base + "ln_gamma", &l.ln_gamma});
      out.push_back({base + "ln_beta", &l.ln_beta});
    }
    add_encoder("inter", inter_layers);
    out.push_back({"pseudo_seed", &pseudo_seed});
    out.push_back({"decode_w", &decode_w});
    out.push_back({"decode_b", &decode_b});
    out.push_back({"fc_w", &fc_w});
    out.push_back({"fc_b", &fc_b});
    return out;
  }

  // Parameters updated by the reconstructor warm-up: pseudo seed, the
  // cross-attention layers and the decode head. The backbone stays frozen.
  std::vector<NamedParam<S>> reconstructor_params() {
    std::vector<NamedParam<S>> out;
    out.push_back({"pseudo_seed", &pseudo_seed});
    for (std::size_t i = 0; i < recon_layers.size(); ++i) {
      auto& l = recon_layers[i];
      std::string base = "recon." + std::to_string(i) + ".";
      out.push_back({base + "wq", &l.wq});
      out.push_back({base + "wk", &l.wk});
      out.push_back({base + "wv", &l.wv});
      out.push_back({base + "ln_gamma", &l.ln_gamma});
      out.push_back({base + "ln_beta", &l.ln_beta});
    }
    out.push_back({"decode_w", &decode_w});
    out.push_back({"decode_b", &decode_b});
    return out;
  }
};

using ModelParams = ModelParamsT<float>;

template <class S>
struct PassageEncodingT {
  TensorT<S> vecs;                 // |p| x d_model token vectors
  std::vector<std::uint8_t> mask;  // real vs [PAD]
};

namespace detail {
inline void require_cls_first(const std::vector<int>& ids, const char* what) {
  if (ids.empty()) throw DataError(std::string(what) + ": empty sequence");
  if (ids[0] != tok::kCls) throw DataError(std::string(what) + ": sequence must start with [CLS]");
}
}  // namespace detail

// Query [CLS] vector from the query encoder.
template <class S>
TensorT<S> encode_query(const ModelParamsT<S>& params, const std::vector<int>& ids,
                        const DropoutCtx* drop = nullptr) {
  detail::require_cls_first(ids, "encode_query");
  TensorT<S> x = embed_sequence(params.tok_emb, params.pos_emb, ids);
  x = encoder_forward(params.query_layers, x, attention_mask(ids), drop);
  return take_row(x, 0);
}

// Full token-vector matrix from the passage encoder, with its mask.
template <class S>
PassageEncodingT<S> encode_passage_tokens(const ModelParamsT<S>& params, const std::vector<int>& ids,
                                          const DropoutCtx* drop = nullptr) {
  detail::require_cls_first(ids, "encode_passage_tokens");
  std::vector<std::uint8_t> mask = attention_mask(ids);
  TensorT<S> x = embed_sequence(params.tok_emb, params.pos_emb, ids);
  x = encoder_forward(params.passage_layers, x, mask, drop);
  return {x, mask};
}

// Pseudo-query vectors: the shared trainable seed refined by stacked
// cross-attention against the passage token vectors. Every row is produced
// in one pass; nothing here reads an actual query.
template <class S>
TensorT<S> reconstruct_pseudo_query(const ModelParamsT<S>& params, const TensorT<S>& passage_vecs,
                                    const std::vector<std::uint8_t>& mask) {
  S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(params.config.d_model)));
  TensorT<S> cur = params.pseudo_seed;
  for (const auto& layer : params.recon_layers) {
    TensorT<S> q = matmul(cur, layer.wq);
    TensorT<S> k = matmul(passage_vecs, layer.wk);
    TensorT<S> v = matmul(passage_vecs, layer.wv);
    TensorT<S> attn = attention(q, k, v, mask, scale);
    if (params.config.recon_strict)
      cur = attn;
    else
      cur = layer_norm(add(cur, attn), layer.ln_gamma, layer.ln_beta);
  }
  return cur;
}

template <class S>
struct InteractionT {
  TensorT<S> full;    // (pseudo_len + |p|) x d_model
  TensorT<S> pooled;  // query-aware passage vector, the passage [CLS] slot
};

// Encoder layers over [pseudo ; passage], masking only passage [PAD]
// positions. The pooled vector is the row where the passage [CLS] landed.
template <class S>
InteractionT<S> interact(const ModelParamsT<S>& params, const TensorT<S>& pseudo,
                         const TensorT<S>& passage_vecs, const std::vector<std::uint8_t>& mask,
                         const DropoutCtx* drop = nullptr) {
  int q_rows = pseudo.rows();
  std::vector<std::uint8_t> full_mask(static_cast<std::size_t>(q_rows), 1);
  if (mask.empty())
    full_mask.insert(full_mask.end(), static_cast<std::size_t>(passage_vecs.rows()), 1);
  else
    full_mask.insert(full_mask.end(), mask.begin(), mask.end());
  TensorT<S> x = concat_rows(pseudo, passage_vecs);
  x = encoder_forward(params.inter_layers, x, full_mask, drop);
  return {x, take_row(x, q_rows)};
}

// Raw dot product of the query vector and the cached query-aware passage
// vector; no normalization, no temperature.
template <class S>
TensorT<S> score_i3(const TensorT<S>& query_vec, const TensorT<S>& passage_pooled) {
  if (query_vec.size() != passage_pooled.size()) throw ShapeError("score_i3: dimension mismatch");
  return dot(query_vec, passage_pooled);
}

// Full passage-side pipeline; what the offline index caches per passage.
template <class S>
TensorT<S> query_aware_passage_vec(const ModelParamsT<S>& params, const std::vector<int>& p_ids,
                                   const DropoutCtx* drop = nullptr) {
  PassageEncodingT<S> enc = encode_passage_tokens(params, p_ids, drop);
  TensorT<S> pseudo = reconstruct_pseudo_query(params, enc.vecs, enc.mask);
  return interact(params, pseudo, enc.vecs, enc.mask, drop).pooled;
}

// Vanilla dual-encoder score: independent [CLS] vectors, dot product.
template <class S>
TensorT<S> score_dual(const ModelParamsT<S>& params, const std::vector<int>& q_ids,
                      const std::vector<int>& p_ids) {
  TensorT<S> qv = encode_query(params, q_ids);
  PassageEncodingT<S> enc = encode_passage_tokens(params, p_ids);
  return dot(qv, take_row(enc.vecs, 0));
}

// Cross-encoder baseline: one encoder pass over [CLS] q [SEP] p [SEP],
// FC head on the [CLS] vector. Reuses the passage encoder stack.
template <class S>
TensorT<S> score_cross(const ModelParamsT<S>& params, const std::vector<int>& q_ids,
                       const std::vector<int>& p_ids) {
  detail::require_cls_first(q_ids, "score_cross");
  detail::require_cls_first(p_ids, "score_cross");
  std::vector<int> ids = q_ids;
  ids.insert(ids.end(), p_ids.begin() + 1, p_ids.end());
  if (static_cast<int>(ids.size()) > params.config.pos_rows())
    throw DataError("score_cross: concatenated input exceeds maximum length");
  TensorT<S> x = embed_sequence(params.tok_emb, params.pos_emb, ids);
  x = encoder_forward(params.passage_layers, x, attention_mask(ids));
  TensorT<S> cls = take_row(x, 0);
  return add(dot(cls, params.fc_w), params.fc_b);
}

// Late-interaction baseline: sum over query tokens of the max dot product
// against passage tokens. [PAD] rows must already be excluded.
template <class S>
S score_colbert(const TensorT<S>& q_vecs, const TensorT<S>& p_vecs) {
  int qn = q_vecs.rows(), pn = p_vecs.rows(), d = q_vecs.cols();
  if (qn == 0 || pn == 0) throw DataError("score_colbert: empty token matrix");
  if (p_vecs.cols() != d) throw ShapeError("score_colbert: dimension mismatch");
  S total = S(0);
  for (int i = 0; i < qn; ++i) {
    const S* q = q_vecs.data->data() + static_cast<std::size_t>(i) * d;
    S best = S(0);
    for (int j = 0; j < pn; ++j) {
      const S* p = p_vecs.data->data() + static_cast<std::size_t>(j) * d;
      S s = S(0);
      for (int k = 0; k < d; ++k) s += q[k] * p[k];
      if (j == 0 || s > best) best = s;
    }
    total += best;
  }
  return total;
}

struct DecodedTerm {
  int id;
  int best_rank;  // 0 = argmax at some pseudo position
};

// Vocabulary ids ranked per pseudo position under the decode head, unioned
// across positions, deduplicated, ordered by best rank then id. Specials
// are excluded.
template <class S>
std::vector<DecodedTerm> decode_pseudo_query_terms(const ModelParamsT<S>& params,
                                                   const TensorT<S>& pseudo, int top_t) {
  if (top_t < 1) throw ConfigError("decode: top_t must be >= 1");
  int v = params.config.vocab_size;
  int d = params.config.d_model;
  if (pseudo.cols() != d) throw ShapeError("decode: pseudo width mismatch");
  std::vector<int> best_rank(static_cast<std::size_t>(v), -1);
  std::vector<S> logits(static_cast<std::size_t>(v));
  std::vector<int> order(static_cast<std::size_t>(v));
  for (int r = 0; r < pseudo.rows(); ++r) {
    const S* row = pseudo.data->data() + static_cast<std::size_t>(r) * d;
    for (int j = 0; j < v; ++j) {
      S s = (*params.decode_b.data)[static_cast<std::size_t>(j)];
      for (int k = 0; k < d; ++k)
        s += row[k] * (*params.decode_w.data)[static_cast<std::size_t>(k) * v + j];
      logits[static_cast<std::size_t>(j)] = s;
    }
    for (int j = 0; j < v; ++j) order[static_cast<std::size_t>(j)] = j;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      S la = logits[static_cast<std::size_t>(a)], lb = logits[static_cast<std::size_t>(b)];
      if (la != lb) return la > lb;
      return a < b;
    });
    int rank = 0;
    for (int id : order) {
      if (id < tok::kNumSpecial) continue;
      if (best_rank[static_cast<std::size_t>(id)] < 0 || rank < best_rank[static_cast<std::size_t>(id)])
        best_rank[static_cast<std::size_t>(id)] = rank;
      ++rank;
    }
  }
  std::vector<DecodedTerm> terms;
  for (int id = 0; id < v; ++id)
    if (best_rank[static_cast<std::size_t>(id)] >= 0)
      terms.push_back({id, best_rank[static_cast<std::size_t>(id)]});
  std::sort(terms.begin(), terms.end(), [](const DecodedTerm& a, const DecodedTerm& b) {
    if (a.best_rank != b.best_rank) return a.best_rank < b.best_rank;
    return a.id < b.id;
  });
  if (static_cast<int>(terms.size()) > top_t) terms.resize(static_cast<std::size_t>(top_t));
  return terms;
}

}  // namespace i3

#include <catch2/catch.hpp>

#include <cstdio>

#include "i3/checkpoint.hpp"
#include "i3/model.hpp"
#include "oracles.hpp"

using namespace i3;
using oracle::rand_tensor;

namespace {

Vocabulary test_vocab(int extra = 12) {
  Vocabulary v;
  for (int i = 0; i < extra; ++i) v.add_token("word" + std::to_string(i));
  return v;
}

I3Config tiny_config() {
  I3Config cfg;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.layers_q = 1;
  cfg.layers_p = 1;
  cfg.layers_recon = 1;
  cfg.layers_inter = 1;
  cfg.pseudo_len = 3;
  cfg.max_q_len = 8;
  cfg.max_p_len = 16;
  return cfg;
}

template <class S>
std::vector<int> q_ids(const ModelParamsT<S>& p, const std::string& text) {
  return tokenize(text, p.config.max_q_len, p.vocab);
}
template <class S>
std::vector<int> p_ids(const ModelParamsT<S>& p, const std::string& text) {
  return tokenize(text, p.config.max_p_len, p.vocab);
}

}  // namespace

TEST_CASE("encode_query is deterministic with the right shape") {
  auto params = ModelParams::init(tiny_config(), test_vocab(), 1);
  auto ids = q_ids(params, "word1 word2");
  auto a = encode_query(params, ids);
  auto b = encode_query(params, ids);
  REQUIRE(a.shape == std::vector<int>{8});
  for (std::size_t i = 0; i < a.size(); ++i) CHECK((*a.data)[i] == (*b.data)[i]);
  CHECK_THROWS_AS(encode_query(params, std::vector<int>{}), DataError);
  CHECK_THROWS_AS(encode_query(params, std::vector<int>{tok::kSep}), DataError);
}

TEST_CASE("encode_query matches the scalar reference encoder") {
  auto params = ModelParamsT<double>::init(tiny_config(), test_vocab(), 2);
  auto ids = q_ids(params, "word1 word2");
  auto got = encode_query(params, ids);

  auto embedded = embed_sequence(params.tok_emb, params.pos_emb, ids);
  oracle::Mat x(static_cast<std::size_t>(embedded.rows()),
                std::vector<double>(static_cast<std::size_t>(embedded.cols())));
  for (int i = 0; i < embedded.rows(); ++i)
    for (int j = 0; j < embedded.cols(); ++j)
      x[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = embedded.at(i, j);
  auto want = oracle::encoder_layer(params.query_layers[0], x,
                                    std::vector<bool>(ids.size(), true));
  for (int j = 0; j < 8; ++j) CHECK((*got.data)[static_cast<std::size_t>(j)] == Approx(want[0][static_cast<std::size_t>(j)]).margin(1e-5));
}

TEST_CASE("encode_passage_tokens keeps all rows and flags padding") {
  auto params = ModelParams::init(tiny_config(), test_vocab(), 3);
  auto ids = tokenize("word1 word2 word3", 10, params.vocab, true);
  auto enc = encode_passage_tokens(params, ids);
  CHECK(enc.vecs.rows() == static_cast<int>(ids.size()));
  CHECK(enc.vecs.cols() == 8);
  REQUIRE(enc.mask.size() == ids.size());
  CHECK(enc.mask[0] == 1);
  CHECK(enc.mask[5] == 0);  // pad region

  // matches the raw encoder composition bitwise
  auto embedded = embed_sequence(params.tok_emb, params.pos_emb, ids);
  auto want = encoder_forward(params.passage_layers, embedded, attention_mask(ids));
  for (std::size_t i = 0; i < want.size(); ++i) CHECK((*enc.vecs.data)[i] == (*want.data)[i]);
}

TEST_CASE("strict reconstructor with forced uniform attention averages passage rows") {
  auto cfg = tiny_config();
  cfg.recon_strict = true;
  auto params = ModelParamsT<double>::init(cfg, test_vocab(), 4);
  auto& layer = params.recon_layers[0];
  for (auto& v : *layer.wq.data) v = 0.0;
  for (auto& v : *layer.wk.data) v = 0.0;
  for (std::size_t i = 0; i < layer.wv.size(); ++i)
    (*layer.wv.data)[i] = (i % 9 == 0) ? 1.0 : 0.0;  // identity

  Rng rng(5);
  auto passage = rand_tensor<double>({4, 8}, rng);
  std::vector<std::uint8_t> mask{1, 1, 1, 0};
  auto pseudo = reconstruct_pseudo_query(params, passage, mask);
  REQUIRE(pseudo.shape == (std::vector<int>{3, 8}));
  for (int r = 0; r < 3; ++r)
    for (int j = 0; j < 8; ++j) {
      double mean = (passage.at(0, j) + passage.at(1, j) + passage.at(2, j)) / 3.0;
      CHECK(pseudo.at(r, j) == Approx(mean).margin(1e-12));
    }
}

TEST_CASE("reconstructor consumes the shared seed for every passage") {
  auto params = ModelParams::init(tiny_config(), test_vocab(), 6);
  auto seed_before = *params.pseudo_seed.data;
  auto enc_a = encode_passage_tokens(params, p_ids(params, "word1 word2"));
  auto enc_b = encode_passage_tokens(params, p_ids(params, "word7 word8 word9"));
  auto ka = reconstruct_pseudo_query(params, enc_a.vecs, enc_a.mask);
  auto kb = reconstruct_pseudo_query(params, enc_b.vecs, enc_b.mask);
  CHECK(*params.pseudo_seed.data == seed_before);
  bool differ = false;
  for (std::size_t i = 0; i < ka.size(); ++i)
    if ((*ka.data)[i] != (*kb.data)[i]) differ = true;
  CHECK(differ);
  CHECK_THROWS_AS(reconstruct_pseudo_query(params, enc_a.vecs,
                                           std::vector<std::uint8_t>(enc_a.mask.size(), 0)),
                  NumericError);
}

TEST_CASE("interact with zero layers returns the concatenation and passage [CLS]") {
  auto cfg = tiny_config();
  cfg.layers_inter = 0;
  auto params = ModelParams::init(cfg, test_vocab(), 7);
  auto enc = encode_passage_tokens(params, p_ids(params, "word1 word2 word3"));
  auto pseudo = reconstruct_pseudo_query(params, enc.vecs, enc.mask);
  auto inter = interact(params, pseudo, enc.vecs, enc.mask);
  REQUIRE(inter.full.rows() == pseudo.rows() + enc.vecs.rows());
  for (int r = 0; r < pseudo.rows(); ++r)
    for (int j = 0; j < 8; ++j) CHECK(inter.full.at(r, j) == pseudo.at(r, j));
  for (int j = 0; j < 8; ++j) CHECK(inter.pooled.at(0, j) == enc.vecs.at(0, j));
}

TEST_CASE("single interactor layer matches the scalar reference") {
  auto params = ModelParamsT<double>::init(tiny_config(), test_vocab(), 8);
  Rng rng(9);
  auto pseudo = rand_tensor<double>({3, 8}, rng);
  auto passage = rand_tensor<double>({4, 8}, rng);
  std::vector<std::uint8_t> mask{1, 1, 1, 0};
  auto inter = interact(params, pseudo, passage, mask);

  oracle::Mat x(7, std::vector<double>(8));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 8; ++j) x[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = pseudo.at(i, j);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 8; ++j) x[static_cast<std::size_t>(i) + 3][static_cast<std::size_t>(j)] = passage.at(i, j);
  auto want = oracle::encoder_layer(params.inter_layers[0], x,
                                    {true, true, true, true, true, true, false});
  for (int j = 0; j < 8; ++j) CHECK(inter.pooled.at(0, j) == Approx(want[3][static_cast<std::size_t>(j)]).margin(1e-5));
}

TEST_CASE("score_i3 is a raw dot product") {
  auto a = Tensor::from({2}, {1, 0});
  auto b = Tensor::from({2}, {0, 1});
  CHECK(score_i3(a, b).value() == 0.0f);
  auto unit = Tensor::from({2}, {1, 0});
  CHECK(score_i3(unit, unit).value() == 1.0f);
  CHECK(score_i3(Tensor::from({2}, {1, 2}), Tensor::from({2}, {3, 4})).value() == 11.0f);
  CHECK_THROWS_AS(score_i3(a, Tensor::from({3}, {1, 2, 3})), ShapeError);
}

TEST_CASE("score_dual equals score_i3 when interaction is bypassed") {
  auto cfg = tiny_config();
  cfg.layers_recon = 0;
  cfg.layers_inter = 0;
  auto params = ModelParams::init(cfg, test_vocab(), 10);
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::string q = "word" + std::to_string(rng.below(12));
    std::string p = "word" + std::to_string(rng.below(12)) + " word" + std::to_string(rng.below(12));
    auto qv = encode_query(params, q_ids(params, q));
    auto pooled = query_aware_passage_vec(params, p_ids(params, p));
    float via_i3 = score_i3(qv, pooled).value();
    float via_dual = score_dual(params, q_ids(params, q), p_ids(params, p)).value();
    CHECK(via_i3 == via_dual);  // bitwise
  }
}

TEST_CASE("score_dual is independent of other passages") {
  auto params = ModelParams::init(tiny_config(), test_vocab(), 12);
  auto q = q_ids(params, "word1");
  auto p = p_ids(params, "word2 word3");
  float alone = score_dual(params, q, p).value();
  score_dual(params, q, p_ids(params, "word4 word5 word6"));
  CHECK(score_dual(params, q, p).value() == alone);
}

TEST_CASE("score_cross collapses to the bias with a zero head") {
  auto params = ModelParams::init(tiny_config(), test_vocab(), 13);
  for (auto& v : *params.fc_w.data) v = 0.0f;
  (*params.fc_b.data)[0] = 0.625f;
  auto s = score_cross(params, q_ids(params, "word1"), p_ids(params, "word2"));
  CHECK(s.value() == 0.625f);
  auto again = score_cross(params, q_ids(params, "word1"), p_ids(params, "word2"));
  CHECK(again.value() == s.value());
}

TEST_CASE("score_cross matches the scalar reference on a tiny model") {
  auto cfg = tiny_config();
  auto params = ModelParamsT<double>::init(cfg, test_vocab(), 30);
  auto q = q_ids(params, "word1");
  auto p = p_ids(params, "word2 word3");
  double got = score_cross(params, q, p).value();

  std::vector<int> ids = q;
  ids.insert(ids.end(), p.begin() + 1, p.end());
  auto embedded = embed_sequence(params.tok_emb, params.pos_emb, ids);
  oracle::Mat x(ids.size(), std::vector<double>(8));
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (int j = 0; j < 8; ++j) x[i][static_cast<std::size_t>(j)] = embedded.at(static_cast<int>(i), j);
  auto enc = oracle::encoder_layer(params.passage_layers[0], x,
                                   std::vector<bool>(ids.size(), true));
  double want = (*params.fc_b.data)[0];
  for (int j = 0; j < 8; ++j) want += enc[0][static_cast<std::size_t>(j)] * (*params.fc_w.data)[static_cast<std::size_t>(j)];
  CHECK(got == Approx(want).margin(1e-5));
}

TEST_CASE("score_cross rejects overlength input") {
  auto cfg = tiny_config();
  cfg.max_q_len = 4;
  cfg.max_p_len = 4;
  auto params = ModelParams::init(cfg, test_vocab(), 14);
  std::vector<int> q{tok::kCls, 5, 6, tok::kSep};
  std::vector<int> p{tok::kCls, 7, 8, 9, 10, tok::kSep};  // 4 + 5 > 8
  CHECK_THROWS_AS(score_cross(params, q, p), DataError);
}

TEST_CASE("score_colbert examples") {
  auto q1 = Tensor::from({1, 2}, {1, 0});
  auto p1 = Tensor::from({2, 2}, {1, 0, 0, 1});
  CHECK(score_colbert(q1, p1) == 1.0f);

  auto q2 = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto p2 = Tensor::from({1, 2}, {2, 0});
  CHECK(score_colbert(q2, p2) == 2.0f);

  CHECK_THROWS_AS(score_colbert(Tensor::zeros({0, 2}), p2), DataError);
}

TEST_CASE("score_colbert matches the brute-force double loop on random instances") {
  Rng rng(15);
  for (int trial = 0; trial < 30; ++trial) {
    int qn = 1 + static_cast<int>(rng.below(8)), pn = 1 + static_cast<int>(rng.below(8));
    auto q = rand_tensor<double>({qn, 8}, rng);
    auto p = rand_tensor<double>({pn, 8}, rng);
    double want = 0;
    for (int i = 0; i < qn; ++i) {
      double best = -1e300;
      for (int j = 0; j < pn; ++j) {
        double s = 0;
        for (int c = 0; c < 8; ++c) s += q.at(i, c) * p.at(j, c);
        best = std::max(best, s);
      }
      want += best;
    }
    CHECK(score_colbert(q, p) == Approx(want).margin(1e-6));
  }
}

TEST_CASE("decode ranks a one-hot aligned term first") {
  auto cfg = tiny_config();
  auto params = ModelParams::init(cfg, test_vocab(), 16);
  int v = params.config.vocab_size;
  for (auto& x : *params.decode_w.data) x = 0.0f;
  for (auto& x : *params.decode_b.data) x = 0.0f;
  int term = 9;
  params.decode_w.at(2, term) = 5.0f;  // column spike picked up by e_2
  auto pseudo = Tensor::zeros({1, 8});
  pseudo.at(0, 2) = 1.0f;
  auto terms = decode_pseudo_query_terms(params, pseudo, 4);
  REQUIRE_FALSE(terms.empty());
  CHECK(terms[0].id == term);
  CHECK(terms[0].best_rank == 0);
  for (auto& t : terms) CHECK(t.id >= tok::kNumSpecial);
  CHECK(v == static_cast<int>(params.vocab.size()));
}

TEST_CASE("decode of zero pseudo vectors is bias-determined and deterministic") {
  auto params = ModelParams::init(tiny_config(), test_vocab(), 17);
  for (auto& x : *params.decode_w.data) x = 0.5f;  // rows identical, logits = bias + const
  Rng rng(18);
  for (auto& x : *params.decode_b.data) x = static_cast<float>(rng.uniform());
  auto pseudo = Tensor::zeros({3, 8});
  auto a = decode_pseudo_query_terms(params, pseudo, 5);
  auto b = decode_pseudo_query_terms(params, pseudo, 5);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].id == b[i].id);
  // best-bias non-special term ranks first
  int best = tok::kNumSpecial;
  for (int id = tok::kNumSpecial; id < params.config.vocab_size; ++id)
    if ((*params.decode_b.data)[static_cast<std::size_t>(id)] > (*params.decode_b.data)[static_cast<std::size_t>(best)]) best = id;
  CHECK(a[0].id == best);
}

TEST_CASE("passage vectors are query agnostic") {
  auto params = ModelParams::init(tiny_config(), test_vocab(), 19);
  auto pids = p_ids(params, "word3 word4 word5");
  auto pooled_a = query_aware_passage_vec(params, pids);
  // score against two different queries; recompute the passage vector after
  score_i3(encode_query(params, q_ids(params, "word1")), pooled_a);
  score_i3(encode_query(params, q_ids(params, "word9 word10")), pooled_a);
  auto pooled_b = query_aware_passage_vec(params, pids);
  for (std::size_t i = 0; i < pooled_a.size(); ++i)
    CHECK((*pooled_a.data)[i] == (*pooled_b.data)[i]);  // bitwise
}

TEST_CASE("on-the-fly and cached scoring agree bitwise") {
  auto params = ModelParams::init(tiny_config(), test_vocab(), 20);
  auto q = q_ids(params, "word1 word6");
  auto p = p_ids(params, "word2 word3 word4");
  auto qv = encode_query(params, q);

  auto enc = encode_passage_tokens(params, p);
  auto pseudo = reconstruct_pseudo_query(params, enc.vecs, enc.mask);
  float on_the_fly = score_i3(qv, interact(params, pseudo, enc.vecs, enc.mask).pooled).value();

  auto cached = query_aware_passage_vec(params, p);
  CHECK(score_i3(qv, cached).value() == on_the_fly);
}

TEST_CASE("checkpoint round-trips bitwise and reproduces scores") {
  auto params = ModelParams::init(tiny_config(), test_vocab(), 21);
  auto q = q_ids(params, "word1 word2");
  auto p = p_ids(params, "word3 word4");
  float before = score_i3(encode_query(params, q), query_aware_passage_vec(params, p)).value();

  std::string path = "ckpt_roundtrip.bin";
  save_checkpoint(params, path);
  auto loaded = load_checkpoint(path);

  auto named_a = params.named_params();
  auto named_b = loaded.named_params();
  REQUIRE(named_a.size() == named_b.size());
  for (std::size_t i = 0; i < named_a.size(); ++i) {
    CHECK(named_a[i].name == named_b[i].name);
    CHECK(*named_a[i].tensor->data == *named_b[i].tensor->data);
  }
  CHECK(loaded.vocab.size() == params.vocab.size());
  float after = score_i3(encode_query(loaded, q), query_aware_passage_vec(loaded, p)).value();
  CHECK(after == before);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint detects corruption of any single byte") {
  auto cfg = tiny_config();
  cfg.max_p_len = 4;
  cfg.max_q_len = 4;
  auto params = ModelParams::init(cfg, test_vocab(2), 22);
  auto bytes = serialize_checkpoint(params);
  Rng rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    auto corrupted = bytes;
    std::size_t pos = rng.below(corrupted.size());
    corrupted[pos] ^= static_cast<std::uint8_t>(1 + rng.below(255));
    CHECK_THROWS_AS(deserialize_checkpoint(corrupted), FormatError);
  }
  // truncation is its own failure kind
  auto cut = bytes;
  cut.resize(cut.size() / 2);
  try {
    deserialize_checkpoint(cut);
    FAIL("truncated checkpoint accepted");
  } catch (const FormatError& e) {
    bool ok = e.kind == FormatError::Kind::truncated || e.kind == FormatError::Kind::checksum;
    CHECK(ok);
  }
}

TEST_CASE("config validation rejects bad shapes") {
  I3Config cfg = tiny_config();
  cfg.heads = 3;  // does not divide d_model=8
  CHECK_THROWS_AS(ModelParams::init(cfg, test_vocab(), 1), ConfigError);
}

// Command-line entry point wiring the retriever into reproducible
// experiments. One subcommand per pipeline stage:
//
//   gen      synthesize a desk-scale corpus + queries + qrels
//   warmup   init a model and warm up the query reconstructor on keywords
//   mine     mine hard negatives (bm25, or model-mined to grow the pool)
//   train    one fine-tuning stage over a training-examples file
//   index    pre-compute query-aware passage vectors into a binary index
//   search   MIPS top-k over an index, TREC run output
//   eval     MRR/Recall/NDCG of a run against qrels
//   bench    scoring-cost comparison across paradigms
//   decode   readable pseudo-query terms for passages
//
// Configuration is a flat key=value file plus --key value overrides; every
// run logs the fully resolved config and writes it beside each artifact.
// Exit codes: 1 config error, 2 data error, 3 numeric failure.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "i3/bench.hpp"
#include "i3/bm25.hpp"
#include "i3/checkpoint.hpp"
#include "i3/data.hpp"
#include "i3/index.hpp"
#include "i3/metrics.hpp"
#include "i3/model.hpp"
#include "i3/train.hpp"

namespace {

using namespace i3;

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      // general
      "seed", "threads",
      // model
      "d_model", "heads", "layers_q", "layers_p", "layers_recon", "layers_inter",
      "pseudo_len", "max_q_len", "max_p_len", "vocab_cap", "dropout", "recon_strict",
      // training
      "lr", "batch_size", "neg_ratio", "epochs", "lambda0", "lambda_horizon",
      "optimizer", "stage",
      // bm25
      "k1", "b",
      // generator
      "gen_topics", "gen_passages_per_topic", "gen_train_queries_per_topic",
      "gen_eval_queries_per_topic", "gen_vocab_size", "out_dir",
      // warmup
      "warmup_steps", "warmup_lr",
      // mining
      "mine_mode", "mine_k",
      // search / eval
      "search_k", "run_tag", "eval_ks",
      // bench
      "bench_sizes", "bench_dim", "bench_q", "bench_p", "bench_queries", "bench_repeats",
      // decode
      "decode_pid", "decode_top",
      // paths
      "corpus", "queries", "qrels", "train_qrels", "checkpoint_in", "checkpoint_out",
      "index", "run", "examples_in", "examples_out", "loss_log", "report",
  };
  return keys;
}

class RunConfig {
 public:
  void load_file(const std::string& path) {
    std::string text;
    try {
      text = read_file_text(path);
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      std::string s = strip(line);
      if (s.empty() || s[0] == '#') continue;
      auto eq = s.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config: line " + std::to_string(line_no) + " is not key=value");
      set(strip(s.substr(0, eq)), strip(s.substr(eq + 1)));
    }
  }

  void set(const std::string& key, const std::string& value) {
    if (!known_keys().count(key)) throw ConfigError("config: unknown key '" + key + "'");
    values_[key] = value;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config: missing required key '" + key + "'");
    return it->second;
  }
  std::string str_or(const std::string& key, const std::string& def) const {
    auto it = values_.find(key);
    return it == values_.end() ? def : it->second;
  }

  long integer(const std::string& key) const { return to_long(key, str(key)); }
  long integer_or(const std::string& key, long def) const {
    return has(key) ? integer(key) : def;
  }
  double real(const std::string& key) const { return to_double(key, str(key)); }
  double real_or(const std::string& key, double def) const { return has(key) ? real(key) : def; }
  bool flag_or(const std::string& key, bool def) const {
    if (!has(key)) return def;
    std::string v = str(key);
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw ConfigError("config: key '" + key + "' is not a boolean");
  }

  std::vector<long> integer_list(const std::string& key) const {
    std::vector<long> out;
    for (const auto& part : split_commas(str(key))) out.push_back(to_long(key, part));
    return out;
  }
  std::vector<long> integer_list_or(const std::string& key, std::vector<long> def) const {
    return has(key) ? integer_list(key) : def;
  }

  std::string resolved() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  void log_resolved() const {
    for (const auto& [k, v] : values_) std::cerr << "[config] " << k << " = " << v << "\n";
  }

  // resolved-config sidecar, written beside every artifact
  void sidecar(const std::string& artifact_path) const {
    write_file_text(artifact_path + ".config", resolved());
  }

 private:
  static std::string strip(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }
  static std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
      if (c == ',') {
        out.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
  }
  static long to_long(const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      long x = std::stol(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (...) {
      throw ConfigError("config: key '" + key + "' is not an integer: " + v);
    }
  }
  static double to_double(const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      double x = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (...) {
      throw ConfigError("config: key '" + key + "' is not a number: " + v);
    }
  }
  std::map<std::string, std::string> values_;
};

std::uint64_t seed_of(const RunConfig& cfg) {
  if (cfg.has("seed")) return static_cast<std::uint64_t>(cfg.integer("seed"));
  if (const char* env = std::getenv("I3_SEED"))
    return static_cast<std::uint64_t>(std::strtoull(env, nullptr, 10));
  return 42;
}

I3Config model_config(const RunConfig& cfg) {
  I3Config m;
  m.d_model = static_cast<int>(cfg.integer_or("d_model", 32));
  m.heads = static_cast<int>(cfg.integer_or("heads", 4));
  m.layers_q = static_cast<int>(cfg.integer_or("layers_q", 2));
  m.layers_p = static_cast<int>(cfg.integer_or("layers_p", 2));
  m.layers_recon = static_cast<int>(cfg.integer_or("layers_recon", 1));
  m.layers_inter = static_cast<int>(cfg.integer_or("layers_inter", 1));
  m.pseudo_len = static_cast<int>(cfg.integer_or("pseudo_len", 32));
  m.max_q_len = static_cast<int>(cfg.integer_or("max_q_len", 32));
  m.max_p_len = static_cast<int>(cfg.integer_or("max_p_len", 128));
  m.dropout = cfg.real_or("dropout", 0.0);
  m.recon_strict = cfg.flag_or("recon_strict", false);
  return m;
}

TrainConfig train_config(const RunConfig& cfg) {
  TrainConfig t;
  std::string opt = cfg.str_or("optimizer", "sgd");
  if (opt == "adam")
    t.adam = true;
  else if (opt != "sgd")
    throw ConfigError("config: optimizer must be sgd or adam");
  t.lr = cfg.real_or("lr", t.adam ? 2e-5 : 0.05);
  t.batch_size = static_cast<int>(cfg.integer_or("batch_size", 8));
  t.neg_ratio = static_cast<int>(cfg.integer_or("neg_ratio", 7));
  t.epochs = static_cast<int>(cfg.integer_or("epochs", 1));
  t.lambda0 = cfg.real_or("lambda0", 1.0);
  t.lambda_horizon = cfg.integer_or("lambda_horizon", 0);
  t.seed = seed_of(cfg);
  t.stage = static_cast<int>(cfg.integer_or("stage", 1));
  return t;
}

Bm25Params bm25_config(const RunConfig& cfg) {
  Bm25Params p;
  p.k1 = cfg.real_or("k1", 0.9);
  p.b = cfg.real_or("b", 0.4);
  p.validate();
  return p;
}

Vocabulary corpus_vocab(const RunConfig& cfg, const Corpus& corpus) {
  std::vector<std::string> texts;
  texts.reserve(corpus.size());
  for (const auto& [pid, text] : corpus.passages) texts.push_back(text);
  return Vocabulary::build(texts, static_cast<std::size_t>(cfg.integer_or("vocab_cap", 30000)));
}

Run search_run(const ModelParams& params, const PassageIndex& index, const QueryMap& queries,
               int k, int shards) {
  Run run;
  for (const auto& [qid, text] : queries) {
    Tensor qv = encode_query(params, tokenize(text, params.config.max_q_len, params.vocab));
    auto hits = shards > 1 ? search_topk_sharded(index, qv.data->data(), index.dim, k, shards)
                           : search_topk(index, qv, k);
    for (const auto& h : hits) run[qid].push_back({h.pid, static_cast<double>(h.score)});
  }
  return run;
}

// ---------------------------------------------------------------------------
// subcommands

int cmd_gen(const RunConfig& cfg) {
  GenConfig gen;
  gen.seed = seed_of(cfg);
  gen.n_topics = static_cast<int>(cfg.integer_or("gen_topics", 8));
  gen.passages_per_topic = static_cast<int>(cfg.integer_or("gen_passages_per_topic", 8));
  gen.train_queries_per_topic = static_cast<int>(cfg.integer_or("gen_train_queries_per_topic", 4));
  gen.eval_queries_per_topic = static_cast<int>(cfg.integer_or("gen_eval_queries_per_topic", 2));
  gen.vocab_size = static_cast<int>(cfg.integer_or("gen_vocab_size", 400));
  std::string dir = cfg.str("out_dir");
  SynthData data = gen_synthetic(gen);

  save_corpus(data.corpus, dir + "/corpus.tsv");
  save_queries(data.train_queries(), dir + "/train_queries.tsv");
  save_queries(data.eval_queries(), dir + "/eval_queries.tsv");
  save_qrels(data.train_qrels(), dir + "/train_qrels.tsv");
  save_qrels(data.eval_qrels(), dir + "/eval_qrels.tsv");
  for (const char* name : {"corpus.tsv", "train_queries.tsv", "eval_queries.tsv",
                           "train_qrels.tsv", "eval_qrels.tsv"})
    cfg.sidecar(dir + "/" + name);
  std::cerr << "[gen] passages=" << data.corpus.size() << " train_queries=" << data.train_qids.size()
            << " eval_queries=" << data.eval_qids.size() << "\n";
  return 0;
}

int cmd_warmup(const RunConfig& cfg) {
  Corpus corpus = load_corpus(cfg.str("corpus"));
  Vocabulary vocab = corpus_vocab(cfg, corpus);
  ModelParams params = ModelParams::init(model_config(cfg), std::move(vocab), seed_of(cfg));
  long steps = cfg.integer_or("warmup_steps", 1000);
  double lr = cfg.real_or("warmup_lr", 0.003);
  auto losses = warmup_reconstructor(params, corpus, steps, lr);
  if (!losses.empty())
    std::cerr << "[warmup] steps=" << losses.size() << " loss " << losses.front() << " -> "
              << losses.back() << "\n";
  std::string out = cfg.str("checkpoint_out");
  save_checkpoint(params, out);
  cfg.sidecar(out);
  return 0;
}

int cmd_mine(const RunConfig& cfg) {
  Corpus corpus = load_corpus(cfg.str("corpus"));
  QueryMap queries = load_queries(cfg.str("queries"));
  Qrels qrels = load_qrels(cfg.str("qrels"));
  int k = static_cast<int>(cfg.integer_or("mine_k", 7));
  std::string mode = cfg.str_or("mine_mode", "bm25");
  std::string out = cfg.str("examples_out");

  std::vector<TrainingExample> examples;
  if (mode == "bm25") {
    CorpusStats stats = CorpusStats::build(corpus.passages);
    examples = mine_examples_bm25(queries, qrels, bm25_config(cfg), stats, k);
  } else if (mode == "model") {
    ModelParams params = load_checkpoint(cfg.str("checkpoint_in"));
    std::vector<TrainingExample> base = load_examples(cfg.str("examples_in"));
    PassageIndex index = cfg.has("index")
                             ? load_index(cfg.str("index"))
                             : build_index(params, corpus, static_cast<int>(cfg.integer_or("threads", 1)));
    examples = augment_examples_model(base, params, index, queries, qrels, k);
  } else {
    throw ConfigError("config: mine_mode must be bm25 or model");
  }
  save_examples(examples, out);
  cfg.sidecar(out);
  std::cerr << "[mine] mode=" << mode << " examples=" << examples.size() << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  Corpus corpus = load_corpus(cfg.str("corpus"));
  QueryMap queries = load_queries(cfg.str("queries"));
  TrainConfig tc = train_config(cfg);

  ModelParams params = cfg.has("checkpoint_in")
                           ? load_checkpoint(cfg.str("checkpoint_in"))
                           : ModelParams::init(model_config(cfg), corpus_vocab(cfg, corpus), seed_of(cfg));

  std::vector<TrainingExample> examples;
  if (cfg.has("examples_in")) {
    examples = load_examples(cfg.str("examples_in"));
  } else if (tc.stage == 1) {
    // stage 1 can mine its own BM25 negatives when no pool file is given
    Qrels qrels = load_qrels(cfg.str("qrels"));
    CorpusStats stats = CorpusStats::build(corpus.passages);
    examples = mine_examples_bm25(queries, qrels, bm25_config(cfg), stats, tc.neg_ratio);
    std::cerr << "[train] auto-mined " << examples.size() << " bm25 examples\n";
  } else {
    throw ConfigError("config: stage 2 training requires examples_in");
  }

  auto log = train_stage(params, examples, corpus, queries, tc);
  for (const auto& row : log)
    if (row.step == 0 || (row.step + 1) % std::max<long>(1, static_cast<long>(log.size()) / 10) == 0)
      std::cerr << "[train] step=" << row.step << " epoch=" << row.epoch << " L=" << row.total
                << " L_c=" << row.l_c << " L_r=" << row.l_r << " lambda=" << row.lambda << "\n";

  std::string out = cfg.str("checkpoint_out");
  save_checkpoint(params, out);
  cfg.sidecar(out);
  if (cfg.has("loss_log")) {
    write_file_text(cfg.str("loss_log"), loss_log_csv(log));
    cfg.sidecar(cfg.str("loss_log"));
  }
  return 0;
}

int cmd_index(const RunConfig& cfg) {
  ModelParams params = load_checkpoint(cfg.str("checkpoint_in"));
  Corpus corpus = load_corpus(cfg.str("corpus"));
  PassageIndex index = build_index(params, corpus, static_cast<int>(cfg.integer_or("threads", 1)));
  std::string out = cfg.str("index");
  save_index(index, out);
  cfg.sidecar(out);
  std::cerr << "[index] passages=" << index.count() << " dim=" << index.dim
            << " bytes=" << storage_report(index) << "\n";
  return 0;
}

int cmd_search(const RunConfig& cfg) {
  ModelParams params = load_checkpoint(cfg.str("checkpoint_in"));
  PassageIndex index = load_index(cfg.str("index"));
  QueryMap queries = load_queries(cfg.str("queries"));
  int k = static_cast<int>(cfg.integer_or("search_k", 10));
  int threads = static_cast<int>(cfg.integer_or("threads", 1));
  Run run = search_run(params, index, queries, k, threads);
  std::string out = cfg.str("run");
  save_run(run, out, cfg.str_or("run_tag", "i3"));
  cfg.sidecar(out);
  std::cerr << "[search] queries=" << run.size() << " k=" << k << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg) {
  Run run = load_run(cfg.str("run"));
  Qrels qrels = load_qrels(cfg.str("qrels"));
  std::vector<long> ks = cfg.integer_list_or("eval_ks", {10, 100, 1000});

  std::vector<MetricRow> rows;
  auto add_rows = [&](const std::string& suffix, const Run& r, const Qrels& q) {
    for (long k : ks) {
      auto m = mrr_at_k(r, q, static_cast<int>(k));
      rows.push_back({"mrr" + suffix, static_cast<int>(k), m.value, m.n_queries});
      auto rec = recall_at_k(r, q, static_cast<int>(k));
      rows.push_back({"recall" + suffix, static_cast<int>(k), rec.value, rec.n_queries});
      auto nd = ndcg_at_k(r, q, static_cast<int>(k));
      rows.push_back({"ndcg" + suffix, static_cast<int>(k), nd.value, nd.n_queries});
    }
  };
  add_rows("", run, qrels);

  if (cfg.has("train_qrels")) {
    Qrels train_qrels = load_qrels(cfg.str("train_qrels"));
    SetSplit split = split_set0_set1(train_qrels, qrels);
    std::cerr << "[eval] set0=" << split.set0.size() << " set1=" << split.set1.size()
              << " mixed_excluded=" << split.excluded_mixed.size()
              << " no_relevant=" << split.excluded_no_relevant.size() << "\n";
    auto filter = [&](const std::vector<QueryId>& qids) {
      std::set<QueryId> keep(qids.begin(), qids.end());
      Run sub;
      for (const auto& [qid, entries] : run)
        if (keep.count(qid)) sub[qid] = entries;
      return sub;
    };
    add_rows("_set0", filter(split.set0), qrels);
    add_rows("_set1", filter(split.set1), qrels);
  }

  std::string csv = metrics_csv(rows);
  std::cout << csv;
  if (cfg.has("report")) {
    write_file_text(cfg.str("report"), csv);
    cfg.sidecar(cfg.str("report"));
  }
  return 0;
}

int cmd_bench(const RunConfig& cfg) {
  BenchConfig bc;
  bc.dim = static_cast<int>(cfg.integer_or("bench_dim", 32));
  bc.q_len = static_cast<int>(cfg.integer_or("bench_q", 8));
  bc.p_len = static_cast<int>(cfg.integer_or("bench_p", 8));
  bc.queries = static_cast<int>(cfg.integer_or("bench_queries", 8));
  bc.repeats = static_cast<int>(cfg.integer_or("bench_repeats", 3));
  bc.seed = seed_of(cfg);
  bc.corpus_sizes.clear();
  for (long s : cfg.integer_list_or("bench_sizes", {1000, 10000}))
    bc.corpus_sizes.push_back(static_cast<std::size_t>(s));
  auto reports = bench_paradigms(bc);
  std::string csv = bench_csv(reports);
  std::cout << csv;
  if (cfg.has("report")) {
    write_file_text(cfg.str("report"), csv);
    cfg.sidecar(cfg.str("report"));
  }
  return 0;
}

int cmd_decode(const RunConfig& cfg) {
  ModelParams params = load_checkpoint(cfg.str("checkpoint_in"));
  Corpus corpus = load_corpus(cfg.str("corpus"));
  int top = static_cast<int>(cfg.integer_or("decode_top", 10));

  std::vector<PassageId> pids;
  std::string which = cfg.str_or("decode_pid", "all");
  if (which == "all") {
    for (const auto& [pid, text] : corpus.passages) pids.push_back(pid);
  } else {
    std::string cur;
    auto flush = [&] {
      if (!cur.empty()) pids.push_back(std::strtoull(cur.c_str(), nullptr, 10));
      cur.clear();
    };
    for (char c : which) {
      if (c == ',')
        flush();
      else
        cur += c;
    }
    flush();
  }

  std::string out = "pid,terms\n";
  for (PassageId pid : pids) {
    std::vector<int> ids = tokenize(corpus.text(pid), params.config.max_p_len, params.vocab);
    auto enc = encode_passage_tokens(params, ids);
    Tensor pseudo = reconstruct_pseudo_query(params, enc.vecs, enc.mask);
    auto terms = decode_pseudo_query_terms(params, pseudo, top);
    out += std::to_string(pid) + ",";
    for (std::size_t i = 0; i < terms.size(); ++i) {
      if (i) out += ";";
      out += params.vocab.token_of(terms[i].id);
    }
    out += "\n";
  }
  std::cout << out;
  if (cfg.has("report")) {
    write_file_text(cfg.str("report"), out);
    cfg.sidecar(cfg.str("report"));
  }
  return 0;
}

void usage() {
  std::cerr << "usage: i3 <gen|warmup|mine|train|index|search|eval|bench|decode>"
               " [--config file] [--key value ...]\n";
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    usage();
    return 1;
  }
  std::string cmd = argv[1];
  try {
    RunConfig cfg;
    for (int i = 2; i < argc; i += 2) {
      std::string key = argv[i];
      if (key.rfind("--", 0) != 0)
        throw ConfigError("config: expected --key, got '" + key + "'");
      key = key.substr(2);
      if (i + 1 >= argc) throw ConfigError("config: missing value for --" + key);
      if (key == "config")
        cfg.load_file(argv[i + 1]);
      else
        cfg.set(key, argv[i + 1]);
    }
    cfg.log_resolved();

    if (cmd == "gen") return cmd_gen(cfg);
    if (cmd == "warmup") return cmd_warmup(cfg);
    if (cmd == "mine") return cmd_mine(cfg);
    if (cmd == "train") return cmd_train(cfg);
    if (cmd == "index") return cmd_index(cfg);
    if (cmd == "search") return cmd_search(cfg);
    if (cmd == "eval") return cmd_eval(cfg);
    if (cmd == "bench") return cmd_bench(cfg);
    if (cmd == "decode") return cmd_decode(cfg);
    usage();
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error code=1 kind=config msg=\"" << e.what() << "\"\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "error code=3 kind=numeric msg=\"" << e.what() << "\"\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error code=2 kind=data msg=\"" << e.what() << "\"\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error code=2 kind=data msg=\"" << e.what() << "\"\n";
    return 2;
  }
}

#pragma once

// Offline cache of query-aware passage vectors plus exact brute-force MIPS.
//
// Index file:
//   magic "I3IX" | version u32 | dim u32 | count u64 | ids u64[] |
//   vectors f32[] row-major | crc32
//
// Fixed-width little-endian throughout so rebuilds compare bit-exactly.

#include <algorithm>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "i3/checkpoint.hpp"
#include "i3/data.hpp"
#include "i3/io.hpp"
#include "i3/model.hpp"

namespace i3 {

namespace idx {
constexpr char kMagic[4] = {'I', '3', 'I', 'X'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 4 + 4 + 8;
}  // namespace idx

struct PassageIndex {
  int dim = 0;
  std::vector<PassageId> ids;  // strictly increasing
  std::vector<float> vectors;  // count x dim, row-major

  std::size_t count() const { return ids.size(); }
  const float* row(std::size_t i) const { return vectors.data() + i * static_cast<std::size_t>(dim); }

  void validate() const {
    if (vectors.size() != ids.size() * static_cast<std::size_t>(dim))
      throw DataError("index: vector storage does not match count x dim");
    for (std::size_t i = 1; i < ids.size(); ++i)
      if (ids[i] <= ids[i - 1]) throw DataError("index: passage ids must be strictly increasing");
    for (float v : vectors)
      if (!std::isfinite(v)) throw NumericError("index: non-finite vector entry");
  }
};

// Every passage through the full offline pipeline: encode tokens,
// reconstruct the pseudo-query, interact, keep the pooled vector. Rows are
// ordered by passage id; shards only split the work, not the result.
inline PassageIndex build_index(const ModelParams& params, const Corpus& corpus, int threads = 1) {
  if (corpus.size() == 0) throw DataError("build_index: empty corpus");
  PassageIndex index;
  index.dim = params.config.d_model;
  index.ids.reserve(corpus.size());
  std::vector<const std::string*> texts;
  texts.reserve(corpus.size());
  for (const auto& [pid, text] : corpus.passages) {
    index.ids.push_back(pid);
    texts.push_back(&text);
  }
  index.vectors.assign(corpus.size() * static_cast<std::size_t>(index.dim), 0.0f);

  auto encode_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      std::vector<int> ids = tokenize(*texts[i], params.config.max_p_len, params.vocab);
      Tensor pooled = query_aware_passage_vec(params, ids);
      std::copy(pooled.data->begin(), pooled.data->end(),
                index.vectors.begin() + i * static_cast<std::size_t>(index.dim));
    }
  };

  if (threads <= 1) {
    encode_range(0, texts.size());
  } else {
    std::vector<std::thread> pool;
    std::size_t per = (texts.size() + static_cast<std::size_t>(threads) - 1) / static_cast<std::size_t>(threads);
    for (int t = 0; t < threads; ++t) {
      std::size_t begin = static_cast<std::size_t>(t) * per;
      std::size_t end = std::min(texts.size(), begin + per);
      if (begin >= end) break;
      pool.emplace_back(encode_range, begin, end);
    }
    for (auto& th : pool) th.join();
  }
  return index;
}

inline std::vector<std::uint8_t> serialize_index(const PassageIndex& index) {
  index.validate();
  ByteWriter w;
  w.raw(idx::kMagic, 4);
  w.u32(idx::kVersion);
  w.u32(static_cast<std::uint32_t>(index.dim));
  w.u64(index.count());
  for (PassageId pid : index.ids) w.u64(pid);
  for (float v : index.vectors) w.f32(v);
  w.u32(crc32(w.bytes()));
  return w.bytes();
}

inline void save_index(const PassageIndex& index, const std::string& path) {
  write_file_bytes(path, serialize_index(index));
}

inline PassageIndex deserialize_index(const std::vector<std::uint8_t>& buf) {
  if (buf.size() < idx::kHeaderBytes + 4)
    throw FormatError(FormatError::Kind::truncated, "index: file too small");
  std::uint32_t stored_crc = 0;
  for (int i = 0; i < 4; ++i)
    stored_crc |= static_cast<std::uint32_t>(buf[buf.size() - 4 + static_cast<std::size_t>(i)]) << (8 * i);
  if (crc32(buf.data(), buf.size() - 4) != stored_crc)
    throw FormatError(FormatError::Kind::checksum, "index: checksum mismatch");

  ByteReader r(buf);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, idx::kMagic, 4) != 0)
    throw FormatError(FormatError::Kind::magic, "index: bad magic");
  std::uint32_t version = r.u32();
  if (version != idx::kVersion)
    throw FormatError(FormatError::Kind::version, "index: unsupported version " + std::to_string(version));
  PassageIndex index;
  index.dim = static_cast<int>(r.u32());
  std::uint64_t count = r.u64();
  std::size_t expected = idx::kHeaderBytes + count * 8 + count * static_cast<std::size_t>(index.dim) * 4 + 4;
  if (buf.size() != expected)
    throw FormatError(FormatError::Kind::truncated, "index: size does not match header");
  index.ids.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) index.ids[i] = r.u64();
  index.vectors.resize(count * static_cast<std::size_t>(index.dim));
  for (auto& v : index.vectors) v = r.f32();
  index.validate();
  return index;
}

inline PassageIndex load_index(const std::string& path) {
  return deserialize_index(read_file_bytes(path));
}

// Exact on-disk size for a given shape.
inline std::size_t index_file_bytes(std::size_t count, int dim) {
  return idx::kHeaderBytes + 8 * count + 4 * static_cast<std::size_t>(dim) * count + 4;
}

inline std::size_t storage_report(const PassageIndex& index) {
  return index_file_bytes(index.count(), index.dim);
}

struct SearchHit {
  PassageId pid;
  float score;
};

namespace detail {
inline bool hit_before(const SearchHit& a, const SearchHit& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.pid < b.pid;
}
}  // namespace detail

// Exact top-k by dot product, ties broken by ascending passage id.
inline std::vector<SearchHit> search_topk(const PassageIndex& index, const float* query, int dim,
                                          int k) {
  if (k < 1) throw ConfigError("search: k must be >= 1");
  if (dim != index.dim) throw ShapeError("search: query dimension does not match index");
  std::vector<SearchHit> hits;
  hits.reserve(index.count());
  for (std::size_t i = 0; i < index.count(); ++i) {
    const float* row = index.row(i);
    float s = 0.0f;
    for (int j = 0; j < dim; ++j) s += query[j] * row[j];
    hits.push_back({index.ids[i], s});
  }
  std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(k), hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(),
                    detail::hit_before);
  hits.resize(keep);
  return hits;
}

inline std::vector<SearchHit> search_topk(const PassageIndex& index, const Tensor& query, int k) {
  return search_topk(index, query.data->data(), static_cast<int>(query.size()), k);
}

// Shard-parallel variant; identical results to the single-shard search for
// any shard count because per-row scores are computed the same way and the
// merge uses the same total order.
inline std::vector<SearchHit> search_topk_sharded(const PassageIndex& index, const float* query,
                                                  int dim, int k, int shards) {
  if (shards < 1) throw ConfigError("search: shards must be >= 1");
  if (dim != index.dim) throw ShapeError("search: query dimension does not match index");
  if (k < 1) throw ConfigError("search: k must be >= 1");
  std::size_t n = index.count();
  std::size_t per = (n + static_cast<std::size_t>(shards) - 1) / static_cast<std::size_t>(shards);
  std::vector<std::vector<SearchHit>> partial(static_cast<std::size_t>(shards));
  std::vector<std::thread> pool;
  for (int s = 0; s < shards; ++s) {
    std::size_t begin = static_cast<std::size_t>(s) * per;
    std::size_t end = std::min(n, begin + per);
    if (begin >= end) break;
    pool.emplace_back([&, s, begin, end] {
      std::vector<SearchHit> hits;
      hits.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        const float* row = index.row(i);
        float sc = 0.0f;
        for (int j = 0; j < dim; ++j) sc += query[j] * row[j];
        hits.push_back({index.ids[i], sc});
      }
      std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(k), hits.size());
      std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(),
                        detail::hit_before);
      hits.resize(keep);
      partial[static_cast<std::size_t>(s)] = std::move(hits);
    });
  }
  for (auto& th : pool) th.join();
  std::vector<SearchHit> merged;
  for (auto& p : partial) merged.insert(merged.end(), p.begin(), p.end());
  std::sort(merged.begin(), merged.end(), detail::hit_before);
  if (merged.size() > static_cast<std::size_t>(k)) merged.resize(static_cast<std::size_t>(k));
  return merged;
}

}  // namespace i3

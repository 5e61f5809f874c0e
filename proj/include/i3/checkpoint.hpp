#pragma once

// Model checkpoint file:
//   magic "I3CK" | version u32 | config block | param blobs | crc32
//
// The config block embeds the vocabulary so a checkpoint is self-contained.
// Parameter payloads are little-endian f32, so save -> load round-trips are
// bitwise exact.

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "i3/io.hpp"
#include "i3/model.hpp"

namespace i3 {

namespace ckpt {
constexpr char kMagic[4] = {'I', '3', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
}  // namespace ckpt

inline std::vector<std::uint8_t> serialize_checkpoint(ModelParams& params) {
  ByteWriter w;
  w.raw(ckpt::kMagic, 4);
  w.u32(ckpt::kVersion);

  const I3Config& c = params.config;
  w.u32(static_cast<std::uint32_t>(c.d_model));
  w.u32(static_cast<std::uint32_t>(c.heads));
  w.u32(static_cast<std::uint32_t>(c.layers_q));
  w.u32(static_cast<std::uint32_t>(c.layers_p));
  w.u32(static_cast<std::uint32_t>(c.layers_recon));
  w.u32(static_cast<std::uint32_t>(c.layers_inter));
  w.u32(static_cast<std::uint32_t>(c.pseudo_len));
  w.u32(static_cast<std::uint32_t>(c.max_q_len));
  w.u32(static_cast<std::uint32_t>(c.max_p_len));
  w.u32(static_cast<std::uint32_t>(c.vocab_size));
  w.f32(static_cast<float>(c.dropout));
  w.u8(c.recon_strict ? 1 : 0);

  w.u32(static_cast<std::uint32_t>(params.vocab.size()));
  for (const auto& t : params.vocab.tokens()) w.str(t);

  auto named = params.named_params();
  w.u32(static_cast<std::uint32_t>(named.size()));
  for (const auto& np : named) {
    w.str(np.name);
    w.u32(static_cast<std::uint32_t>(np.tensor->shape.size()));
    for (int d : np.tensor->shape) w.u32(static_cast<std::uint32_t>(d));
    for (float v : *np.tensor->data) w.f32(v);
  }
  w.u32(crc32(w.bytes()));
  return w.bytes();
}

inline void save_checkpoint(ModelParams& params, const std::string& path) {
  write_file_bytes(path, serialize_checkpoint(params));
}

inline ModelParams deserialize_checkpoint(const std::vector<std::uint8_t>& buf) {
  if (buf.size() < 8) throw FormatError(FormatError::Kind::truncated, "checkpoint: file too small");
  std::uint32_t stored_crc = 0;
  for (int i = 0; i < 4; ++i)
    stored_crc |= static_cast<std::uint32_t>(buf[buf.size() - 4 + static_cast<std::size_t>(i)]) << (8 * i);
  if (crc32(buf.data(), buf.size() - 4) != stored_crc)
    throw FormatError(FormatError::Kind::checksum, "checkpoint: checksum mismatch");

  ByteReader r(buf);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, ckpt::kMagic, 4) != 0)
    throw FormatError(FormatError::Kind::magic, "checkpoint: bad magic");
  std::uint32_t version = r.u32();
  if (version != ckpt::kVersion)
    throw FormatError(FormatError::Kind::version,
                      "checkpoint: unsupported version " + std::to_string(version));

  I3Config c;
  c.d_model = static_cast<int>(r.u32());
  c.heads = static_cast<int>(r.u32());
  c.layers_q = static_cast<int>(r.u32());
  c.layers_p = static_cast<int>(r.u32());
  c.layers_recon = static_cast<int>(r.u32());
  c.layers_inter = static_cast<int>(r.u32());
  c.pseudo_len = static_cast<int>(r.u32());
  c.max_q_len = static_cast<int>(r.u32());
  c.max_p_len = static_cast<int>(r.u32());
  c.vocab_size = static_cast<int>(r.u32());
  c.dropout = static_cast<double>(r.f32());
  c.recon_strict = r.u8() != 0;

  std::uint32_t n_tokens = r.u32();
  if (static_cast<int>(n_tokens) != c.vocab_size)
    throw FormatError(FormatError::Kind::layout, "checkpoint: vocab size mismatch");
  Vocabulary vocab;
  for (std::uint32_t i = 0; i < n_tokens; ++i) {
    std::string t = r.str();
    if (i < tok::kNumSpecial) {
      if (t != vocab.token_of(static_cast<int>(i)))
        throw FormatError(FormatError::Kind::layout, "checkpoint: special token mismatch");
      continue;
    }
    vocab.add_token(t);
  }

  // Sizes come from the config; payloads overwrite the fresh init.
  ModelParams params = ModelParams::init(c, std::move(vocab), 0);
  auto named = params.named_params();
  std::unordered_map<std::string, Tensor*> by_name;
  for (auto& np : named) by_name[np.name] = np.tensor;

  std::uint32_t n_params = r.u32();
  if (n_params != named.size())
    throw FormatError(FormatError::Kind::layout, "checkpoint: parameter count mismatch");
  for (std::uint32_t i = 0; i < n_params; ++i) {
    std::string name = r.str();
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw FormatError(FormatError::Kind::layout, "checkpoint: unknown parameter " + name);
    Tensor* t = it->second;
    std::uint32_t ndim = r.u32();
    std::vector<int> shape;
    for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(static_cast<int>(r.u32()));
    if (shape != t->shape)
      throw FormatError(FormatError::Kind::layout, "checkpoint: shape mismatch for " + name);
    for (float& v : *t->data) v = r.f32();
  }
  if (r.remaining() != 4)
    throw FormatError(FormatError::Kind::layout, "checkpoint: trailing bytes");
  return params;
}

inline ModelParams load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(read_file_bytes(path));
}

}  // namespace i3

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rgm/common.hpp"
#include "rgm/policy.hpp"
#include "rgm/sprm.hpp"
#include "rgm/tensor.hpp"

namespace rgm {

// Checkpoint file layout (all integers and floats little-endian):
//   magic   8 bytes  "RGMCKPT1"
//   version u32      currently 1
//   config  u32 x5   vocab_size, d_model, n_layers, n_heads, max_context
//           f32      dropout_p
//   step    u64      training step counter
//   count   u32      number of named tensors
//   per tensor:
//     name_len u32, name bytes, ndim u32, dims u32 x ndim, data f32 x numel
// Tensors appear in a fixed order (policy parameters, then optional SPRM
// head), so load -> save reproduces the file byte for byte.

inline constexpr char kCheckpointMagic[8] = {'R', 'G', 'M', 'C', 'K', 'P', 'T', '1'};
inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  PolicyConfig config;
  uint64_t step = 0;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return &t;
    }
    return nullptr;
  }
  bool has_sprm() const { return find("sprm.w1") != nullptr; }
};

namespace detail {

inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<uint32_t>(f)); }

class ByteReader {
 public:
  ByteReader(const std::string& data, const std::string& path) : data_(data), path_(path) {}

  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(byte()) << (8 * i);
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(byte()) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string bytes(size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool exhausted() const { return pos_ == data_.size(); }

 private:
  uint8_t byte() { return static_cast<uint8_t>(data_[pos_++]); }
  void need(size_t n) {
    if (pos_ + n > data_.size()) throw IoError("checkpoint: truncated file " + path_);
  }
  const std::string& data_;
  std::string path_;
  size_t pos_ = 0;
};

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::string out;
  out.append(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<uint32_t>(c.config.vocab_size));
  detail::put_u32(out, static_cast<uint32_t>(c.config.d_model));
  detail::put_u32(out, static_cast<uint32_t>(c.config.n_layers));
  detail::put_u32(out, static_cast<uint32_t>(c.config.n_heads));
  detail::put_u32(out, static_cast<uint32_t>(c.config.max_context));
  detail::put_f32(out, c.config.dropout_p);
  detail::put_u64(out, c.step);
  detail::put_u32(out, static_cast<uint32_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {
    detail::put_u32(out, static_cast<uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) detail::put_u32(out, static_cast<uint32_t>(d));
    for (float v : t.data) detail::put_f32(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("checkpoint: cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("checkpoint: write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open: " + path);
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  detail::ByteReader r(data, path);
  if (r.bytes(sizeof(kCheckpointMagic)) != std::string(kCheckpointMagic, sizeof(kCheckpointMagic))) {
    throw IoError("checkpoint: bad magic in " + path);
  }
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint: unsupported format version " + std::to_string(version));
  }
  Checkpoint c;
  c.config.vocab_size = static_cast<int>(r.u32());
  c.config.d_model = static_cast<int>(r.u32());
  c.config.n_layers = static_cast<int>(r.u32());
  c.config.n_heads = static_cast<int>(r.u32());
  c.config.max_context = static_cast<int>(r.u32());
  c.config.dropout_p = r.f32();
  c.step = r.u64();
  const uint32_t count = r.u32();
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = r.u32();
    std::string name = r.bytes(name_len);
    const uint32_t ndim = r.u32();
    std::vector<int> shape;
    size_t numel = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      shape.push_back(static_cast<int>(r.u32()));
      numel *= static_cast<size_t>(shape.back());
    }
    Tensor<float> t(shape);
    for (size_t j = 0; j < numel; ++j) t.data[j] = r.f32();
    c.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!r.exhausted()) throw IoError("checkpoint: trailing bytes in " + path);
  return c;
}

// ---- conversions between live parameters and checkpoints ----

inline Checkpoint make_checkpoint(PolicyParams<float>& params, uint64_t step) {
  Checkpoint c;
  c.config = params.cfg;
  c.step = step;
  for (Parameter<float>* p : params.param_list()) c.tensors.emplace_back(p->name, p->value);
  return c;
}

inline void append_sprm(Checkpoint& c, SprmHead<float>& head) {
  for (Parameter<float>* p : head.param_list()) c.tensors.emplace_back(p->name, p->value);
  c.tensors.emplace_back("sprm.dropout_p", Tensor<float>::scalar(head.dropout_p));
}

inline PolicyParams<float> policy_from_checkpoint(const Checkpoint& c) {
  PolicyParams<float> params(c.config, RngState(0));
  for (Parameter<float>* p : params.param_list()) {
    const Tensor<float>* t = c.find(p->name);
    require(t != nullptr, "checkpoint: missing tensor " + p->name);
    require(t->shape == p->value.shape, "checkpoint: shape mismatch for " + p->name);
    p->value = *t;
  }
  return params;
}

inline std::optional<SprmHead<float>> sprm_from_checkpoint(const Checkpoint& c) {
  if (!c.has_sprm()) return std::nullopt;
  SprmHead<float> head(c.config.d_model, RngState(0));
  if (const Tensor<float>* dp = c.find("sprm.dropout_p")) head.dropout_p = dp->data[0];
  for (Parameter<float>* p : head.param_list()) {
    const Tensor<float>* t = c.find(p->name);
    require(t != nullptr, "checkpoint: missing tensor " + p->name);
    require(t->shape == p->value.shape, "checkpoint: shape mismatch for " + p->name);
    p->value = *t;
  }
  return head;
}

}  // namespace rgm

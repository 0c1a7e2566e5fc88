// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "fbi/serialize.hpp"

#include <algorithm>

#include "fbi/data.hpp"
#include "fbi/errors.hpp"

namespace fbi {

namespace {

constexpr std::string_view kMagic = "FBIC1";

}  // namespace

const Tensor* Checkpoint::find(std::string_view name) const {
  for (const auto& nt : tensors) {
    if (nt.name == name) return &nt.tensor;
  }
  return nullptr;
}

const Tensor& Checkpoint::require(std::string_view name) const {
  if (const Tensor* t = find(name)) return *t;
  throw IoError("checkpoint has no tensor '" + std::string(name) + "'");
}

void write_tensor_record(ByteWriter& w, std::string_view name, const Tensor& t) {
  w.str(name);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) w.u64(d);
  for (float v : t.data()) w.f32(v);
}

NamedTensor read_tensor_record(ByteReader& r) {
  NamedTensor nt;
  nt.name = r.str();
  const std::uint32_t rank = r.u32();
  if (rank > 8) throw IoError(r.source() + ": tensor '" + nt.name + "' has implausible rank");
  Shape shape(rank);
  std::uint64_t numel = 1;
  for (auto& d : shape) {
    d = r.u64();
    numel *= d;
  }
  if (numel * 4 > r.remaining()) {
    throw IoError(r.source() + ": tensor '" + nt.name + "' is truncated");
  }
  std::vector<float> data(numel);
  for (auto& v : data) v = r.f32();
  nt.tensor = Tensor::from(std::move(shape), std::move(data));
  return nt;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.raw(kMagic);
  const std::string meta = format_kv(ckpt.meta);
  w.u64(meta.size());
  w.raw(meta);
  w.u64(ckpt.tensors.size());
  for (const auto& nt : ckpt.tensors) write_tensor_record(w, nt.name, nt.tensor);
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source) {
  ByteReader r(bytes, source);
  if (bytes.size() < kMagic.size() || r.raw(kMagic.size()) != kMagic) {
    throw IoError(source + ": not an FBIC1 checkpoint");
  }
  Checkpoint ckpt;
  const std::uint64_t meta_len = r.u64();
  ckpt.meta = parse_kv(r.raw(meta_len));
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) ckpt.tensors.push_back(read_tensor_record(r));
  if (!r.done()) throw IoError(source + ": trailing bytes after last record");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path), path.string());
}

Checkpoint model_checkpoint(const Model& model) {
  Checkpoint ckpt;
  ckpt.meta = model.config().to_kv();
  for (const auto& nt : model.named_parameters()) {
    ckpt.tensors.push_back({nt.name, nt.tensor.detach()});
  }
  return ckpt;
}

void load_model_weights(Model& model, const Checkpoint& ckpt) {
  for (auto& nt : model.named_parameters()) {
    const Tensor& src = ckpt.require(nt.name);
    if (src.shape() != nt.tensor.shape()) {
      throw ConfigError("checkpoint tensor '" + nt.name + "' has shape " + shape_str(src.shape()) +
                        ", model expects " + shape_str(nt.tensor.shape()));
    }
    auto dst = nt.tensor.mutable_data();
    std::copy(src.data().begin(), src.data().end(), dst.begin());
  }
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("model.hidden_size")) {
    throw ConfigError("checkpoint carries no model configuration");
  }
  ModelConfig cfg = ModelConfig::from_kv(ckpt.meta);
  Model model(cfg, 0);
  load_model_weights(model, ckpt);
  return model;
}

}  // namespace fbi

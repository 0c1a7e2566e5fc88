// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "fbi/bitpack.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "fbi/byte_io.hpp"
#include "fbi/data.hpp"
#include "fbi/errors.hpp"
#include "fbi/serialize.hpp"

namespace fbi {

PackedLinear pack_signs(const Tensor& signs, std::vector<float> alpha, std::vector<float> beta) {
  if (signs.rank() != 2) throw DimensionError("pack: expected a matrix, got " + shape_str(signs.shape()));
  PackedLinear pl;
  pl.m = signs.dim(0);
  pl.n = signs.dim(1);
  if (alpha.size() != pl.n || beta.size() != pl.n) {
    throw DimensionError("pack: scale/shift length must equal " + std::to_string(pl.n));
  }
  const std::size_t wpc = pl.words_per_column();
  pl.words.assign(pl.n * wpc, 0);
  const auto w = signs.data();
  for (std::size_t i = 0; i < pl.m; ++i) {
    for (std::size_t j = 0; j < pl.n; ++j) {
      if (w[i * pl.n + j] > 0.0f) pl.words[j * wpc + i / 64] |= std::uint64_t{1} << (i % 64);
    }
  }
  pl.alpha = std::move(alpha);
  pl.beta = std::move(beta);
  return pl;
}

PackedLinear pack(const FbiLinearParams& p) {
  return pack_signs(p.w_f, std::vector<float>(p.alpha.data().begin(), p.alpha.data().end()),
                    std::vector<float>(p.beta.data().begin(), p.beta.data().end()));
}

Tensor unpack(const PackedLinear& pl) {
  const std::size_t wpc = pl.words_per_column();
  std::vector<float> out(pl.m * pl.n);
  for (std::size_t j = 0; j < pl.n; ++j) {
    for (std::size_t i = 0; i < pl.m; ++i) {
      const bool set = (pl.words[j * wpc + i / 64] >> (i % 64)) & 1U;
      out[i * pl.n + j] = set ? 1.0f : -1.0f;
    }
  }
  return Tensor::from({pl.m, pl.n}, std::move(out));
}

Tensor packed_forward(const PackedLinear& pl, const Tensor& x) {
  if (x.rank() == 0 || x.shape().back() != pl.m) {
    throw DimensionError("packed_forward: input " + shape_str(x.shape()) + " vs m=" +
                         std::to_string(pl.m));
  }
  const std::size_t rows = x.numel() / pl.m;
  const std::size_t wpc = pl.words_per_column();
  Shape out_shape = x.shape();
  out_shape.back() = pl.n;
  std::vector<float> y(rows * pl.n);
  const auto xs = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = xs.data() + r * pl.m;
    double s_all = 0.0;
    for (std::size_t i = 0; i < pl.m; ++i) s_all += xr[i];
    for (std::size_t j = 0; j < pl.n; ++j) {
      const std::uint64_t* col = pl.words.data() + j * wpc;
      double s_set = 0.0;
      for (std::size_t k = 0; k < wpc; ++k) {
        std::uint64_t bits = col[k];
        const float* base = xr + k * 64;
        while (bits) {
          s_set += base[std::countr_zero(bits)];
          bits &= bits - 1;
        }
      }
      y[r * pl.n + j] = static_cast<float>(static_cast<double>(pl.alpha[j]) * (2.0 * s_set - s_all) +
                                           static_cast<double>(pl.beta[j]) * s_all);
    }
  }
  return Tensor::from(std::move(out_shape), std::move(y));
}

// --- PackedModel ---------------------------------------------------------------

PackedModel PackedModel::from_model(const Model& model) {
  if (!model.config().binarize) {
    throw ConfigError("pack: only binarized models can be packed");
  }
  PackedModel pm;
  pm.cfg_ = model.config();
  const auto& ps = model.params();
  pm.token_embedding_ = ps.token_embedding.detach();
  for (const auto& layer : ps.layers) {
    pm.attention_norms_.push_back(layer.attention_norm.detach());
    pm.mlp_norms_.push_back(layer.mlp_norm.detach());
    std::array<PackedLinear, 7> packed;
    for (auto slot : kLinearSlots) {
      packed[static_cast<std::size_t>(slot)] = pack(layer.linear(slot).params());
    }
    pm.linears_.push_back(std::move(packed));
  }
  pm.final_norm_ = ps.final_norm.detach();
  pm.head_ = ps.head.detach();
  return pm;
}

Tensor PackedModel::forward_logits(const TokenBatch& tokens) const {
  NoGradGuard no_grad;
  DecoderFrame frame;
  frame.token_embedding = &token_embedding_;
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    frame.attention_norms.push_back(&attention_norms_[l]);
    frame.mlp_norms.push_back(&mlp_norms_[l]);
  }
  frame.final_norm = &final_norm_;
  frame.head = &head_;
  return decoder_forward(
      cfg_, frame,
      [this](std::size_t layer, LinearSlot slot, const Tensor& x) {
        return packed_forward(linear(layer, slot), x);
      },
      tokens);
}

Tensor PackedModel::next_token_distribution(const TokenBatch& tokens) const {
  NoGradGuard no_grad;
  return softmax_rows(forward_logits(tokens));
}

namespace {

constexpr std::string_view kPackedMagic = "FBIP1";

std::string linear_name(std::size_t layer, LinearSlot slot) {
  return "layers." + std::to_string(layer) + "." + std::string(slot_name(slot));
}

}  // namespace

std::string PackedModel::encode() const {
  ByteWriter w;
  w.raw(kPackedMagic);
  const std::string meta = format_kv(cfg_.to_kv());
  w.u64(meta.size());
  w.raw(meta);
  w.u64(linears_.size() * kLinearSlots.size());
  for (std::size_t l = 0; l < linears_.size(); ++l) {
    for (auto slot : kLinearSlots) {
      const PackedLinear& pl = linear(l, slot);
      w.str(linear_name(l, slot));
      w.u64(pl.m);
      w.u64(pl.n);
      for (auto word : pl.words) w.u64(word);
      for (float a : pl.alpha) w.f32(a);
      for (float b : pl.beta) w.f32(b);
    }
  }
  w.u64(3 + 2 * cfg_.n_layers);
  write_tensor_record(w, "tok_embeddings.weight", token_embedding_);
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    write_tensor_record(w, p + "attention_norm.weight", attention_norms_[l]);
    write_tensor_record(w, p + "mlp_norm.weight", mlp_norms_[l]);
  }
  write_tensor_record(w, "norm.weight", final_norm_);
  write_tensor_record(w, "output.weight", head_);
  return w.take();
}

PackedModel PackedModel::decode(std::string_view bytes, const std::string& source) {
  ByteReader r(bytes, source);
  if (bytes.size() < kPackedMagic.size() || r.raw(kPackedMagic.size()) != kPackedMagic) {
    throw IoError(source + ": not an FBIP1 packed model");
  }
  PackedModel pm;
  const std::uint64_t meta_len = r.u64();
  pm.cfg_ = ModelConfig::from_kv(parse_kv(r.raw(meta_len)));
  pm.cfg_.validate();
  const std::uint64_t count = r.u64();
  if (count != pm.cfg_.n_layers * kLinearSlots.size()) {
    throw IoError(source + ": expected " + std::to_string(pm.cfg_.n_layers * 7) +
                  " packed linears, found " + std::to_string(count));
  }
  pm.linears_.resize(pm.cfg_.n_layers);
  for (std::size_t l = 0; l < pm.cfg_.n_layers; ++l) {
    for (auto slot : kLinearSlots) {
      const std::string name = r.str();
      if (name != linear_name(l, slot)) {
        throw IoError(source + ": unexpected record '" + name + "'");
      }
      PackedLinear pl;
      pl.m = r.u64();
      pl.n = r.u64();
      const auto [in, out] = slot_extents(pm.cfg_, slot);
      if (pl.m != in || pl.n != out) throw IoError(source + ": '" + name + "' has wrong extents");
      pl.words.resize(pl.n * pl.words_per_column());
      for (auto& word : pl.words) word = r.u64();
      pl.alpha.resize(pl.n);
      pl.beta.resize(pl.n);
      for (auto& a : pl.alpha) a = r.f32();
      for (auto& b : pl.beta) b = r.f32();
      pm.linears_[l][static_cast<std::size_t>(slot)] = std::move(pl);
    }
  }
  const std::uint64_t tensors = r.u64();
  Checkpoint fp;
  for (std::uint64_t i = 0; i < tensors; ++i) fp.tensors.push_back(read_tensor_record(r));
  if (!r.done()) throw IoError(source + ": trailing bytes after last record");
  auto take = [&](const std::string& name, Shape shape) {
    const Tensor& t = fp.require(name);
    if (t.shape() != shape) throw IoError(source + ": '" + name + "' has wrong shape");
    return t;
  };
  const std::size_t h = pm.cfg_.hidden_size;
  pm.token_embedding_ = take("tok_embeddings.weight", {pm.cfg_.vocab_size, h});
  for (std::size_t l = 0; l < pm.cfg_.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    pm.attention_norms_.push_back(take(p + "attention_norm.weight", {h}));
    pm.mlp_norms_.push_back(take(p + "mlp_norm.weight", {h}));
  }
  pm.final_norm_ = take("norm.weight", {h});
  pm.head_ = take("output.weight", {h, pm.cfg_.vocab_size});
  return pm;
}

void export_packed(const Model& model, const std::filesystem::path& path) {
  write_file_bytes(path, PackedModel::from_model(model).encode());
}

PackedModel import_packed(const std::filesystem::path& path) {
  return PackedModel::decode(read_file_bytes(path), path.string());
}

// --- bench ----------------------------------------------------------------------------

BenchReport bench(const PackedLinear& pl, std::size_t repetitions, std::uint64_t seed) {
  if (repetitions == 0) throw ContractError("bench: repetitions must be >= 1");
  NoGradGuard no_grad;
  Rng rng(seed);
  std::vector<float> xv(pl.m);
  for (auto& v : xv) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  const Tensor x = Tensor::from({1, pl.m}, std::move(xv));
  const Tensor dense = scale_shift_columns(unpack(pl), Tensor::from({pl.n}, pl.alpha),
                                           Tensor::from({pl.n}, pl.beta));

  using Clock = std::chrono::steady_clock;
  Tensor y_dense;
  Tensor y_packed;
  auto t0 = Clock::now();
  for (std::size_t i = 0; i < repetitions; ++i) y_dense = matmul(x, dense);
  auto t1 = Clock::now();
  for (std::size_t i = 0; i < repetitions; ++i) y_packed = packed_forward(pl, x);
  auto t2 = Clock::now();

  BenchReport r;
  r.m = pl.m;
  r.n = pl.n;
  r.repetitions = repetitions;
  const double reps = static_cast<double>(repetitions);
  r.dense_seconds_per_matvec = std::chrono::duration<double>(t1 - t0).count() / reps;
  r.packed_seconds_per_matvec = std::chrono::duration<double>(t2 - t1).count() / reps;
  r.dense_weight_bytes = 4 * pl.m * pl.n;
  r.packed_weight_bytes = 8 * pl.words.size() + 4 * (pl.alpha.size() + pl.beta.size());
  r.weight_byte_reduction =
      static_cast<double>(r.dense_weight_bytes) / static_cast<double>(r.packed_weight_bytes);
  for (std::size_t j = 0; j < pl.n; ++j) {
    r.max_abs_diff = std::max(
        r.max_abs_diff, std::abs(static_cast<double>(y_dense.at(j)) - y_packed.at(j)));
  }
  return r;
}

std::string bench_csv_header() {
  return "m,n,repetitions,dense_us,packed_us,dense_weight_bytes,packed_weight_bytes,"
         "weight_byte_reduction,max_abs_diff";
}

std::string bench_csv_row(const BenchReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.3f,%.3f,%zu,%zu,%.3f,%.3g", r.m, r.n,
                r.repetitions, 1e6 * r.dense_seconds_per_matvec, 1e6 * r.packed_seconds_per_matvec,
                r.dense_weight_bytes, r.packed_weight_bytes, r.weight_byte_reduction,
                r.max_abs_diff);
  return buf;
}

}  // namespace fbi

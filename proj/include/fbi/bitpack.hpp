// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0
//
// 1-bit inference path.
//
// A PackedLinear stores sign(W_f) column by column: ceil(m / 64) words per
// output column, input row i at bit (i % 64) of word (i / 64), bit 1 for +1.
// Padding bits are zero. The forward pass never expands the signs:
//
//   y_j = alpha_j * (2 * S_set(j) - S_all) + beta_j * S_all
//
// with S_all the sum of the input row and S_set(j) the sum over inputs whose
// bit in column j is set.
//
// "FBIP1" file layout (little-endian):
//   magic "FBIP1", u64 meta length + key=value text (model configuration),
//   u64 linear count, then per linear: u32 name length, name, u64 m, u64 n,
//   n * ceil(m/64) u64 words, n fp32 alpha, n fp32 beta;
//   u64 tensor count, then FBIC1-style tensor records for the embedding,
//   norms and head.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fbi/fbi_linear.hpp"
#include "fbi/model.hpp"

namespace fbi {

struct PackedLinear {
  std::size_t m = 0;
  std::size_t n = 0;
  std::vector<std::uint64_t> words;
  std::vector<float> alpha;
  std::vector<float> beta;

  std::size_t words_per_column() const { return (m + 63) / 64; }
  bool operator==(const PackedLinear&) const = default;
};

PackedLinear pack(const FbiLinearParams& p);
// Packs an explicit +-1 matrix [m, n] with the given column scale and shift.
PackedLinear pack_signs(const Tensor& signs, std::vector<float> alpha, std::vector<float> beta);
// +-1 matrix [m, n].
Tensor unpack(const PackedLinear& pl);

// x: [..., m] -> [..., n]. Sums are accumulated in double. Throws
// DimensionError when the trailing extent differs from m.
Tensor packed_forward(const PackedLinear& pl, const Tensor& x);

// Inference-only model whose projections are PackedLinear.
class PackedModel {
 public:
  PackedModel() = default;
  // Throws ConfigError unless the model is binarized.
  static PackedModel from_model(const Model& model);

  const ModelConfig& config() const { return cfg_; }
  Tensor forward_logits(const TokenBatch& tokens) const;
  Tensor next_token_distribution(const TokenBatch& tokens) const;
  const PackedLinear& linear(std::size_t layer, LinearSlot slot) const {
    return linears_.at(layer)[static_cast<std::size_t>(slot)];
  }

  std::string encode() const;
  static PackedModel decode(std::string_view bytes, const std::string& source);

 private:
  ModelConfig cfg_;
  Tensor token_embedding_;
  std::vector<Tensor> attention_norms_;
  std::vector<Tensor> mlp_norms_;
  Tensor final_norm_;
  Tensor head_;
  std::vector<std::array<PackedLinear, 7>> linears_;
};

void export_packed(const Model& model, const std::filesystem::path& path);
PackedModel import_packed(const std::filesystem::path& path);

struct BenchReport {
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t repetitions = 0;
  double dense_seconds_per_matvec = 0.0;
  double packed_seconds_per_matvec = 0.0;
  std::size_t dense_weight_bytes = 0;   // 4 * m * n
  std::size_t packed_weight_bytes = 0;  // sign words plus fp32 alpha and beta
  double weight_byte_reduction = 0.0;
  double max_abs_diff = 0.0;            // packed vs dense on the bench input
};

// Times packed and dense matrix-vector products on a fixed random input.
// Throws ContractError for repetitions == 0.
BenchReport bench(const PackedLinear& pl, std::size_t repetitions, std::uint64_t seed = 0);

std::string bench_csv_header();
std::string bench_csv_row(const BenchReport& r);

}  // namespace fbi

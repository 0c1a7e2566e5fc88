// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training-stability and size metrics: sign flip-flop ratio, perplexity,
// average bit-width and storage accounting.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fbi/model.hpp"
#include "fbi/token_batch.hpp"

namespace fbi {

// Packed sign bits (1 = positive) of every binarizable projection weight.
struct SignSnapshot {
  std::size_t step = 0;
  std::vector<std::string> names;
  std::vector<std::size_t> layers;
  std::vector<std::size_t> counts;
  std::vector<std::vector<std::uint64_t>> bits;

  std::size_t n_total() const;
};

SignSnapshot sign_snapshot(const Model& model, std::size_t step = 0);
// Generic form: one entry per tensor with the layer it belongs to.
SignSnapshot sign_snapshot(std::span<const NamedTensor> tensors,
                           std::span<const std::size_t> layers, std::size_t step = 0);

struct FlipFlopReport {
  std::size_t step_from = 0;
  std::size_t step_to = 0;
  std::vector<std::size_t> per_layer_flips;
  std::size_t total_flips = 0;
  std::size_t n_total = 0;
  double ratio = 0.0;
};

// Fraction of weights whose sign differs between the snapshots. Throws
// ContractError if the snapshots cover different parameter sets.
FlipFlopReport ff_ratio(const SignSnapshot& prev, const SignSnapshot& curr);

struct PerplexityResult {
  double perplexity = 0.0;
  double mean_nll = 0.0;
  std::size_t predicted_tokens = 0;
};

using LogitsFn = std::function<Tensor(const TokenBatch&)>;

// exp(mean NLL) over non-overlapping windows of `seq_len` tokens, NLL
// accumulated in double. A trailing window of at least two tokens is kept.
// Throws InputError when fewer than two tokens are supplied.
PerplexityResult perplexity(const LogitsFn& logits, std::span<const std::int32_t> tokens,
                            std::size_t seq_len, std::size_t batch = 8);
PerplexityResult perplexity(const Model& model, std::span<const std::int32_t> tokens,
                            std::size_t seq_len, std::size_t batch = 8);

// Sum of -log softmax(logits)[target] over unmasked positions, in double.
double total_nll(const Tensor& logits, const TokenBatch& tokens);

enum class CensusMode : std::uint8_t {
  kDecoderBody,   // bit-width ignores embedding and head
  kStrict,  // bit-width counts every parameter
};

// Mean bits per parameter: projection weights at 1 bit, everything else at 16.
double avg_bitwidth(const ModelConfig& cfg, CensusMode mode = CensusMode::kDecoderBody);
// Single square projection of width n with per-column scale, shift and one
// norm vector: (n^2 + 16 * 3n) / (n^2 + 3n).
double module_bitwidth(std::size_t n);

struct StorageReport {
  ParameterCensus census;
  CensusMode mode = CensusMode::kDecoderBody;
  double full_bytes = 0.0;       // every parameter at 16 bits
  double binarized_bytes = 0.0;  // projections at 1 bit, the rest at 16 bits
  double compression_ratio = 0.0;
  double extra_parameter_ratio = 0.0;  // (alpha + beta) / all parameters
  double avg_bitwidth = 0.0;
};

StorageReport storage_report(const ModelConfig& cfg, CensusMode mode = CensusMode::kDecoderBody);

inline double to_gib(double bytes) { return bytes / (1024.0 * 1024.0 * 1024.0); }

// Compares a published binarized size against the computed one.
struct SizeCheck {
  double reported_gib = 0.0;
  double computed_gib = 0.0;
  double relative_gap = 0.0;
  bool consistent = false;
};
SizeCheck check_reported_size(const ModelConfig& cfg, double reported_gib, double tolerance);

std::string storage_summary(const StorageReport& r);
std::string storage_csv_header();
std::string storage_csv_row(const std::string& label, const StorageReport& r);

}  // namespace fbi

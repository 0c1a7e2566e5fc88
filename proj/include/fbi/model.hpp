// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0
//
// LLaMA-style decoder: pre-norm RMSNorm blocks, rotary attention, SwiGLU MLP,
// no biases, untied embedding and head. With binarize=true every attention
// and MLP projection is an FBI-Linear; embedding, norms and head always stay
// full precision.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "fbi/fbi_linear.hpp"
#include "fbi/kv_config.hpp"
#include "fbi/rng.hpp"
#include "fbi/tensor.hpp"
#include "fbi/token_batch.hpp"

namespace fbi {

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t hidden_size = 128;
  std::size_t n_heads = 4;
  std::size_t n_kv_heads = 4;
  std::size_t intermediate_size = 352;
  std::size_t vocab_size = 259;
  std::size_t max_seq_len = 256;
  float initializer_range = 0.02f;
  bool binarize = true;
  float rms_eps = 1e-5f;
  float rope_base = 10000.0f;

  // Throws ConfigError naming the violated constraint.
  void validate() const;

  KvMap to_kv(std::string_view prefix = "model.") const;
  static ModelConfig from_kv(const KvMap& kv, std::string_view prefix = "model.");

  static ModelConfig toy();
  // Table-1 scale configurations with a 32k vocabulary.
  static ModelConfig fbi_130m();
  static ModelConfig fbi_1_3b();
  static ModelConfig fbi_7b();
};

enum class LinearSlot : std::uint8_t { kQ, kK, kV, kO, kGate, kUp, kDown };
inline constexpr std::array<LinearSlot, 7> kLinearSlots = {
    LinearSlot::kQ,    LinearSlot::kK,  LinearSlot::kV,   LinearSlot::kO,
    LinearSlot::kGate, LinearSlot::kUp, LinearSlot::kDown};

std::string_view slot_name(LinearSlot slot);
// (in, out) extents of a projection slot.
std::pair<std::size_t, std::size_t> slot_extents(const ModelConfig& cfg, LinearSlot slot);

// A projection that is either an FBI-Linear or a plain dense matrix of the
// same shape. In dense mode alpha/beta are undefined.
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, bool binarize, Rng& rng, float init_std);
  Linear(FbiLinearParams params, bool binarize) : params_(std::move(params)), binarize_(binarize) {}

  Tensor forward(const Tensor& x) const;

  bool binarized() const { return binarize_; }
  std::size_t in_features() const { return params_.w_f.dim(0); }
  std::size_t out_features() const { return params_.w_f.dim(1); }
  FbiLinearParams& params() { return params_; }
  const FbiLinearParams& params() const { return params_; }

 private:
  FbiLinearParams params_;
  bool binarize_ = true;
};

struct LayerParams {
  Tensor attention_norm;
  Tensor mlp_norm;
  std::array<Linear, 7> linears;  // indexed by LinearSlot

  Linear& linear(LinearSlot s) { return linears[static_cast<std::size_t>(s)]; }
  const Linear& linear(LinearSlot s) const { return linears[static_cast<std::size_t>(s)]; }
};

struct ModelParams {
  Tensor token_embedding;  // [vocab, hidden]
  std::vector<LayerParams> layers;
  Tensor final_norm;  // [hidden]
  Tensor head;        // [hidden, vocab]
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Parameter counts by storage class.
struct ParameterCensus {
  std::size_t linear_weights = 0;  // entries of the 7 projections per layer
  std::size_t scale_shift = 0;     // alpha + beta entries (0 for dense twins)
  std::size_t norms = 0;           // all RMSNorm weights
  std::size_t embedding = 0;
  std::size_t head = 0;

  std::size_t total() const { return linear_weights + scale_shift + norms + embedding + head; }
  bool operator==(const ParameterCensus&) const = default;
};

// Shape arithmetic only; no allocation.
ParameterCensus census_for(const ModelConfig& cfg);

// Projection evaluator used by decoder_forward.
using LinearFn = std::function<Tensor(std::size_t layer, LinearSlot slot, const Tensor& x)>;

// Full-precision tensors shared by the dense/FBI model and the packed model.
struct DecoderFrame {
  const Tensor* token_embedding = nullptr;
  std::vector<const Tensor*> attention_norms;
  std::vector<const Tensor*> mlp_norms;
  const Tensor* final_norm = nullptr;
  const Tensor* head = nullptr;
};

// Runs the decoder stack and returns logits [batch, seq, vocab].
Tensor decoder_forward(const ModelConfig& cfg, const DecoderFrame& frame, const LinearFn& linear,
                       const TokenBatch& tokens);

// Throws InputError/ContractError if tokens do not fit the configuration.
void check_tokens(const ModelConfig& cfg, const TokenBatch& tokens);

class Model {
 public:
  Model() = default;
  Model(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

  Tensor forward_logits(const TokenBatch& tokens) const;
  // softmax over the vocabulary at each position
  Tensor next_token_distribution(const TokenBatch& tokens) const;

  // Stable order; handles alias the model's storage.
  std::vector<NamedTensor> named_parameters() const;
  ParameterCensus census() const;

  // Deep copy with fresh storage.
  Model clone() const;
  void zero_grad();

  // Binarized student seeded from a (usually full-precision) twin: latent
  // weights copied, alpha/beta re-derived with init_scales, embedding, norms
  // and head copied. Throws ConfigError if the topologies differ.
  static Model binarized_from(const Model& twin);

 private:
  DecoderFrame frame() const;

  ModelConfig cfg_;
  ModelParams params_;
};

}  // namespace fbi

// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "fbi/model.hpp"

#include <string>
#include <utility>

#include "fbi/errors.hpp"

namespace fbi {

// --- TokenBatch ----------------------------------------------------------------

TokenBatch TokenBatch::from_ids(std::size_t batch, std::size_t seq,
                                std::span<const std::int32_t> ids) {
  if (ids.size() != batch * seq) {
    throw DimensionError("TokenBatch: " + std::to_string(ids.size()) + " ids for " +
                         std::to_string(batch) + "x" + std::to_string(seq));
  }
  TokenBatch tb;
  tb.batch = batch;
  tb.seq = seq;
  tb.ids.assign(ids.begin(), ids.end());
  tb.targets.assign(ids.size(), 0);
  tb.mask.assign(ids.size(), 0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t + 1 < seq; ++t) {
      tb.targets[b * seq + t] = ids[b * seq + t + 1];
      tb.mask[b * seq + t] = 1;
    }
  }
  return tb;
}

std::size_t TokenBatch::predicted_positions() const {
  std::size_t n = 0;
  for (auto m : mask) n += m != 0;
  return n;
}

// --- ModelConfig -----------------------------------------------------------------

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("model config: " + what); };
  if (n_layers == 0) fail("n_layers must be >= 1");
  if (hidden_size == 0 || n_heads == 0) fail("hidden_size and n_heads must be positive");
  if (hidden_size % n_heads != 0) fail("hidden_size must be divisible by n_heads");
  if ((hidden_size / n_heads) % 2 != 0) fail("head dimension must be even for rotary embeddings");
  if (n_kv_heads != n_heads) fail("n_kv_heads must equal n_heads");
  if (intermediate_size == 0) fail("intermediate_size must be positive");
  if (vocab_size < 2) fail("vocab_size must be >= 2");
  if (max_seq_len < 1) fail("max_seq_len must be >= 1");
  if (!(initializer_range > 0.0f)) fail("initializer_range must be positive");
  if (!(rms_eps > 0.0f)) fail("rms_eps must be positive");
}

KvMap ModelConfig::to_kv(std::string_view prefix) const {
  const std::string p(prefix);
  return {
      {p + "n_layers", std::to_string(n_layers)},
      {p + "hidden_size", std::to_string(hidden_size)},
      {p + "n_heads", std::to_string(n_heads)},
      {p + "n_kv_heads", std::to_string(n_kv_heads)},
      {p + "intermediate_size", std::to_string(intermediate_size)},
      {p + "vocab_size", std::to_string(vocab_size)},
      {p + "max_seq_len", std::to_string(max_seq_len)},
      {p + "initializer_range", exact_str(initializer_range)},
      {p + "binarize", binarize ? "true" : "false"},
      {p + "rms_eps", exact_str(rms_eps)},
      {p + "rope_base", exact_str(rope_base)},
  };
}

ModelConfig ModelConfig::from_kv(const KvMap& kv, std::string_view prefix) {
  const std::string p(prefix);
  ModelConfig c;
  c.n_layers = kv_size(kv, p + "n_layers", c.n_layers);
  c.hidden_size = kv_size(kv, p + "hidden_size", c.hidden_size);
  c.n_heads = kv_size(kv, p + "n_heads", c.n_heads);
  c.n_kv_heads = kv_size(kv, p + "n_kv_heads", c.n_heads);
  c.intermediate_size = kv_size(kv, p + "intermediate_size", c.intermediate_size);
  c.vocab_size = kv_size(kv, p + "vocab_size", c.vocab_size);
  c.max_seq_len = kv_size(kv, p + "max_seq_len", c.max_seq_len);
  c.initializer_range = kv_float(kv, p + "initializer_range", c.initializer_range);
  c.binarize = kv_bool(kv, p + "binarize", c.binarize);
  c.rms_eps = kv_float(kv, p + "rms_eps", c.rms_eps);
  c.rope_base = kv_float(kv, p + "rope_base", c.rope_base);
  return c;
}

ModelConfig ModelConfig::toy() { return ModelConfig{}; }

namespace {
ModelConfig table_config(std::size_t layers, std::size_t hidden, std::size_t heads,
                         std::size_t intermediate) {
  ModelConfig c;
  c.n_layers = layers;
  c.hidden_size = hidden;
  c.n_heads = heads;
  c.n_kv_heads = heads;
  c.intermediate_size = intermediate;
  c.vocab_size = 32000;
  c.max_seq_len = 2048;
  return c;
}
}  // namespace

ModelConfig ModelConfig::fbi_130m() { return table_config(12, 768, 12, 2048); }
ModelConfig ModelConfig::fbi_1_3b() { return table_config(24, 2048, 32, 5632); }
ModelConfig ModelConfig::fbi_7b() { return table_config(32, 4096, 32, 11008); }

// --- slots ------------------------------------------------------------------------

std::string_view slot_name(LinearSlot slot) {
  switch (slot) {
    case LinearSlot::kQ: return "attention.wq";
    case LinearSlot::kK: return "attention.wk";
    case LinearSlot::kV: return "attention.wv";
    case LinearSlot::kO: return "attention.wo";
    case LinearSlot::kGate: return "mlp.gate";
    case LinearSlot::kUp: return "mlp.up";
    case LinearSlot::kDown: return "mlp.down";
  }
  return "?";
}

std::pair<std::size_t, std::size_t> slot_extents(const ModelConfig& cfg, LinearSlot slot) {
  switch (slot) {
    case LinearSlot::kGate:
    case LinearSlot::kUp: return {cfg.hidden_size, cfg.intermediate_size};
    case LinearSlot::kDown: return {cfg.intermediate_size, cfg.hidden_size};
    default: return {cfg.hidden_size, cfg.hidden_size};
  }
}

ParameterCensus census_for(const ModelConfig& cfg) {
  ParameterCensus c;
  for (auto slot : kLinearSlots) {
    auto [in, out] = slot_extents(cfg, slot);
    c.linear_weights += in * out;
    if (cfg.binarize) c.scale_shift += 2 * out;
  }
  c.linear_weights *= cfg.n_layers;
  c.scale_shift *= cfg.n_layers;
  c.norms = (2 * cfg.n_layers + 1) * cfg.hidden_size;
  c.embedding = cfg.vocab_size * cfg.hidden_size;
  c.head = cfg.hidden_size * cfg.vocab_size;
  return c;
}

// --- Linear ---------------------------------------------------------------------------

Linear::Linear(std::size_t in, std::size_t out, bool binarize, Rng& rng, float init_std)
    : binarize_(binarize) {
  if (binarize) {
    params_ = make_fbi_linear(in, out, rng, init_std);
  } else {
    std::vector<float> w(in * out);
    for (auto& v : w) v = static_cast<float>(rng.normal() * init_std);
    params_.w_f = Tensor::from({in, out}, std::move(w), true);
  }
}

Tensor Linear::forward(const Tensor& x) const {
  return binarize_ ? fbi_linear_forward(params_, x) : matmul(x, params_.w_f);
}

// --- decoder ----------------------------------------------------------------------------

void check_tokens(const ModelConfig& cfg, const TokenBatch& tokens) {
  if (tokens.batch == 0 || tokens.seq == 0) throw ContractError("forward: empty token batch");
  if (tokens.ids.size() != tokens.batch * tokens.seq) {
    throw DimensionError("forward: token batch holds the wrong number of ids");
  }
  if (tokens.seq > cfg.max_seq_len) {
    throw ContractError("forward: sequence length " + std::to_string(tokens.seq) +
                        " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  for (auto id : tokens.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
      throw InputError("forward: token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(cfg.vocab_size));
    }
  }
}

Tensor decoder_forward(const ModelConfig& cfg, const DecoderFrame& frame, const LinearFn& linear,
                       const TokenBatch& tokens) {
  check_tokens(cfg, tokens);
  const float eps = cfg.rms_eps;
  Tensor h = embedding(*frame.token_embedding, std::span<const std::int32_t>(tokens.ids),
                       Shape{tokens.batch, tokens.seq});
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    Tensor a = rmsnorm(h, *frame.attention_norms[l], eps);
    Tensor q = rope(linear(l, LinearSlot::kQ, a), cfg.n_heads, cfg.rope_base);
    Tensor k = rope(linear(l, LinearSlot::kK, a), cfg.n_heads, cfg.rope_base);
    Tensor v = linear(l, LinearSlot::kV, a);
    Tensor attn = causal_attention(q, k, v, cfg.n_heads);
    h = add(h, linear(l, LinearSlot::kO, attn));

    Tensor m = rmsnorm(h, *frame.mlp_norms[l], eps);
    Tensor gated = mul(silu(linear(l, LinearSlot::kGate, m)), linear(l, LinearSlot::kUp, m));
    h = add(h, linear(l, LinearSlot::kDown, gated));
  }
  return matmul(rmsnorm(h, *frame.final_norm, eps), *frame.head);
}

// --- Model ------------------------------------------------------------------------------

namespace {

Tensor normal_tensor(Shape shape, Rng& rng, float std) {
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.normal() * std);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor deep_copy(const Tensor& t) {
  if (!t.defined()) return {};
  return Tensor::from(t.shape(), std::vector<float>(t.data().begin(), t.data().end()),
                      t.requires_grad());
}

}  // namespace

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const float std = cfg_.initializer_range;
  const std::size_t h = cfg_.hidden_size;
  params_.token_embedding = normal_tensor({cfg_.vocab_size, h}, rng, std);
  params_.layers.resize(cfg_.n_layers);
  for (auto& layer : params_.layers) {
    layer.attention_norm = Tensor::full({h}, 1.0f, true);
    layer.mlp_norm = Tensor::full({h}, 1.0f, true);
    for (auto slot : kLinearSlots) {
      auto [in, out] = slot_extents(cfg_, slot);
      layer.linear(slot) = Linear(in, out, cfg_.binarize, rng, std);
    }
  }
  params_.final_norm = Tensor::full({h}, 1.0f, true);
  params_.head = normal_tensor({h, cfg_.vocab_size}, rng, std);
}

DecoderFrame Model::frame() const {
  DecoderFrame f;
  f.token_embedding = &params_.token_embedding;
  for (const auto& layer : params_.layers) {
    f.attention_norms.push_back(&layer.attention_norm);
    f.mlp_norms.push_back(&layer.mlp_norm);
  }
  f.final_norm = &params_.final_norm;
  f.head = &params_.head;
  return f;
}

Tensor Model::forward_logits(const TokenBatch& tokens) const {
  const auto& layers = params_.layers;
  return decoder_forward(
      cfg_, frame(),
      [&layers](std::size_t l, LinearSlot slot, const Tensor& x) {
        return layers[l].linear(slot).forward(x);
      },
      tokens);
}

Tensor Model::next_token_distribution(const TokenBatch& tokens) const {
  return softmax_rows(forward_logits(tokens));
}

std::vector<NamedTensor> Model::named_parameters() const {
  std::vector<NamedTensor> out;
  out.push_back({"tok_embeddings.weight", params_.token_embedding});
  for (std::size_t l = 0; l < params_.layers.size(); ++l) {
    const auto& layer = params_.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    out.push_back({p + "attention_norm.weight", layer.attention_norm});
    for (auto slot : kLinearSlots) {
      const auto& lin = layer.linear(slot);
      const std::string base = p + std::string(slot_name(slot));
      out.push_back({base + ".weight", lin.params().w_f});
      if (lin.binarized()) {
        out.push_back({base + ".alpha", lin.params().alpha});
        out.push_back({base + ".beta", lin.params().beta});
      }
    }
    out.push_back({p + "mlp_norm.weight", layer.mlp_norm});
  }
  out.push_back({"norm.weight", params_.final_norm});
  out.push_back({"output.weight", params_.head});
  return out;
}

ParameterCensus Model::census() const {
  ParameterCensus c;
  c.embedding = params_.token_embedding.numel();
  c.head = params_.head.numel();
  c.norms = params_.final_norm.numel();
  for (const auto& layer : params_.layers) {
    c.norms += layer.attention_norm.numel() + layer.mlp_norm.numel();
    for (const auto& lin : layer.linears) {
      c.linear_weights += lin.params().w_f.numel();
      if (lin.binarized()) c.scale_shift += lin.params().alpha.numel() + lin.params().beta.numel();
    }
  }
  return c;
}

Model Model::clone() const {
  Model m;
  m.cfg_ = cfg_;
  m.params_.token_embedding = deep_copy(params_.token_embedding);
  m.params_.final_norm = deep_copy(params_.final_norm);
  m.params_.head = deep_copy(params_.head);
  m.params_.layers.resize(params_.layers.size());
  for (std::size_t l = 0; l < params_.layers.size(); ++l) {
    const auto& src = params_.layers[l];
    auto& dst = m.params_.layers[l];
    dst.attention_norm = deep_copy(src.attention_norm);
    dst.mlp_norm = deep_copy(src.mlp_norm);
    dst.linears = src.linears;
    for (auto& lin : dst.linears) {
      lin.params().w_f = deep_copy(lin.params().w_f);
      lin.params().alpha = deep_copy(lin.params().alpha);
      lin.params().beta = deep_copy(lin.params().beta);
    }
  }
  return m;
}

void Model::zero_grad() {
  for (auto& nt : named_parameters()) nt.tensor.zero_grad();
}

Model Model::binarized_from(const Model& twin) {
  Model m = twin.clone();
  m.cfg_.binarize = true;
  for (auto& layer : m.params_.layers) {
    for (auto slot : kLinearSlots) {
      auto [in, out] = slot_extents(m.cfg_, slot);
      auto& lin = layer.linear(slot);
      if (lin.in_features() != in || lin.out_features() != out) {
        throw ConfigError("binarized_from: twin projection shapes do not match its config");
      }
      FbiLinearParams p;
      p.w_f = lin.params().w_f;
      auto scales = init_scales(p.w_f);
      p.alpha = scales.alpha;
      p.beta = scales.beta;
      lin = Linear(std::move(p), true);
    }
  }
  return m;
}

}  // namespace fbi

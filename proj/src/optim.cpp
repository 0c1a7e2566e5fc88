// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "fbi/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "fbi/errors.hpp"

namespace fbi {

double lr_at(std::size_t step, const LrSchedule& s) {
  if (step > s.total_steps) {
    throw ContractError("lr_at: step " + std::to_string(step) + " beyond total_steps " +
                        std::to_string(s.total_steps));
  }
  if (step < s.warmup_steps) {
    return s.peak_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  }
  const double span = static_cast<double>(s.total_steps - s.warmup_steps);
  const double progress = span > 0 ? static_cast<double>(step - s.warmup_steps) / span : 1.0;
  return s.final_lr +
         0.5 * (s.peak_lr - s.final_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

Adam::Adam(std::vector<NamedTensor> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0f);
    v_.emplace_back(p.tensor.numel(), 0.0f);
  }
}

void Adam::step(double lr) {
  if (!(lr >= 0.0)) throw ContractError("adam: learning rate must be >= 0");
  ++t_;
  const double td = static_cast<double>(t_);
  const float bc1 = static_cast<float>(1.0 - std::pow(static_cast<double>(cfg_.beta1), td));
  const float bc2 = static_cast<float>(1.0 - std::pow(static_cast<double>(cfg_.beta2), td));
  const float b1 = cfg_.beta1;
  const float b2 = cfg_.beta2;
  const float eps = cfg_.eps;
  const float step_size = static_cast<float>(lr);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k].tensor;
    auto w = p.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    if (!p.has_grad()) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = b1 * m[i];
        v[i] = b2 * v[i];
        w[i] -= step_size * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
      }
      continue;
    }
    const auto g = p.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      w[i] -= step_size * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
  }
}

void Adam::export_state(Checkpoint& ckpt) const {
  ckpt.meta["adam.t"] = std::to_string(t_);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const Shape& shape = params_[k].tensor.shape();
    ckpt.tensors.push_back({"adam.m." + params_[k].name, Tensor::from(shape, m_[k])});
    ckpt.tensors.push_back({"adam.v." + params_[k].name, Tensor::from(shape, v_[k])});
  }
}

void Adam::import_state(const Checkpoint& ckpt) {
  t_ = kv_size(ckpt.meta, "adam.t", 0);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const Tensor& m = ckpt.require("adam.m." + params_[k].name);
    const Tensor& v = ckpt.require("adam.v." + params_[k].name);
    if (m.numel() != m_[k].size() || v.numel() != v_[k].size()) {
      throw ConfigError("optimizer state for '" + params_[k].name + "' has the wrong size");
    }
    m_[k].assign(m.data().begin(), m.data().end());
    v_[k].assign(v.data().begin(), v.data().end());
  }
}

ClipResult clip_global_norm(std::span<const NamedTensor> params, double clip_norm) {
  if (!(clip_norm > 0.0)) throw ContractError("clip_global_norm: clip_norm must be > 0");
  double sq = 0.0;
  for (const auto& p : params) {
    for (float g : p.tensor.grad()) sq += static_cast<double>(g) * g;
  }
  ClipResult r;
  r.preclip_norm = std::sqrt(sq);
  if (std::isfinite(r.preclip_norm) && r.preclip_norm > clip_norm) {
    const float factor = static_cast<float>(clip_norm / r.preclip_norm);
    for (const auto& p : params) {
      Tensor t = p.tensor;
      if (!t.has_grad()) continue;
      for (float& g : t.mutable_grad()) g *= factor;
    }
    r.clipped = true;
  }
  return r;
}

}  // namespace fbi

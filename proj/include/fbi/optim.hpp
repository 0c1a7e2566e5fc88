// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0
//
// Adam without weight decay, the warmup + cosine learning-rate schedule and
// global-norm gradient clipping.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fbi/model.hpp"
#include "fbi/serialize.hpp"

namespace fbi {

struct LrSchedule {
  double peak_lr = 3e-4;
  double final_lr = 3e-5;
  std::size_t warmup_steps = 2000;
  std::size_t total_steps = 20000;
};

// Linear ramp from 0 to peak over the warmup, then cosine decay to final.
// Throws ContractError for step > total_steps.
double lr_at(std::size_t step, const LrSchedule& schedule);

struct AdamConfig {
  float beta1 = 0.9f;
  float beta2 = 0.98f;
  float eps = 1e-8f;
};

class Adam {
 public:
  Adam() = default;
  // `params` alias the trained tensors; their gradients are read on step().
  explicit Adam(std::vector<NamedTensor> params, AdamConfig cfg = {});

  // Bias-corrected update. A tensor without an accumulated gradient is
  // treated as having a zero gradient.
  void step(double lr);

  std::size_t steps_taken() const { return t_; }
  const std::vector<NamedTensor>& params() const { return params_; }

  // Moments are stored as "adam.m.<name>" / "adam.v.<name>" records and the
  // step count as meta key "adam.t".
  void export_state(Checkpoint& ckpt) const;
  void import_state(const Checkpoint& ckpt);

 private:
  std::vector<NamedTensor> params_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  AdamConfig cfg_;
  std::size_t t_ = 0;
};

struct ClipResult {
  double preclip_norm = 0.0;
  bool clipped = false;
};

// L2 norm of all gradients taken together (accumulated in double). When it
// exceeds clip_norm every gradient is scaled by clip_norm / norm. A
// non-finite norm leaves the gradients untouched.
ClipResult clip_global_norm(std::span<const NamedTensor> params, double clip_norm);

}  // namespace fbi

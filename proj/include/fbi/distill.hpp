// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0
//
// Distillation and plain next-token objectives over a TokenBatch.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>

#include "fbi/model.hpp"
#include "fbi/tensor.hpp"
#include "fbi/token_batch.hpp"

namespace fbi {

enum class Provenance : std::uint8_t { kTeacher, kStudent };

// Vocabulary distributions per position, [batch, seq, vocab].
template <typename T>
struct BasicDistributionBatch {
  BasicTensor<T> probs;
  Provenance provenance = Provenance::kTeacher;
};

using DistributionBatch = BasicDistributionBatch<float>;

// Cross-entropy of the student against the teacher's full next-token
// distribution, averaged over unmasked positions. The teacher tensor is
// treated as a constant. Throws DimensionError on shape mismatch and
// InputError if a teacher row is negative or does not sum to 1 within 1e-4.
template <typename T>
BasicTensor<T> ad_loss(const BasicTensor<T>& student_logits,
                       const BasicDistributionBatch<T>& teacher,
                       std::span<const std::uint8_t> mask = {});

// Mean negative log-likelihood of the batch targets over unmasked positions.
template <typename T>
BasicTensor<T> na_loss(const BasicTensor<T>& student_logits, const TokenBatch& tokens);

// Gradient-free teacher distribution. Throws ConfigError when the teacher's
// vocabulary differs from `student_vocab`.
DistributionBatch teacher_forward(const Model& teacher, const TokenBatch& tokens,
                                  std::size_t student_vocab);

// Degenerate teacher that puts all mass on each position's target token.
// Masked positions get a uniform row so every row stays normalized.
DistributionBatch one_hot_teacher(const TokenBatch& tokens, std::size_t vocab);

// Anything that can produce teacher distributions for a batch.
using TeacherFn = std::function<DistributionBatch(const TokenBatch&)>;

TeacherFn model_teacher(const Model& teacher, std::size_t student_vocab);
TeacherFn one_hot_teacher_fn(std::size_t vocab);

}  // namespace fbi

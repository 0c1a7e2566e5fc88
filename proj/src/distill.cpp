// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "fbi/distill.hpp"

#include <cmath>
#include <string>

#include "fbi/errors.hpp"

namespace fbi {

namespace {

template <typename T>
void check_teacher_rows(const BasicTensor<T>& probs, std::size_t vocab) {
  const auto data = probs.data();
  const std::size_t rows = data.size() / vocab;
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) {
      const T p = data[r * vocab + v];
      if (!(p >= T(0))) {
        throw InputError("ad_loss: teacher row " + std::to_string(r) +
                         " has a negative or non-finite entry");
      }
      total += static_cast<double>(p);
    }
    if (std::abs(total - 1.0) > 1e-4) {
      throw InputError("ad_loss: teacher row " + std::to_string(r) + " sums to " +
                       std::to_string(total));
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> ad_loss(const BasicTensor<T>& student_logits,
                       const BasicDistributionBatch<T>& teacher,
                       std::span<const std::uint8_t> mask) {
  if (!teacher.probs.defined() || teacher.probs.shape() != student_logits.shape()) {
    throw DimensionError("ad_loss: teacher shape " +
                         (teacher.probs.defined() ? shape_str(teacher.probs.shape()) : "<none>") +
                         " vs student " + shape_str(student_logits.shape()));
  }
  if (student_logits.rank() == 0) throw DimensionError("ad_loss: logits need a vocab axis");
  check_teacher_rows(teacher.probs, student_logits.shape().back());
  return soft_cross_entropy(student_logits, teacher.probs, mask);
}

template <typename T>
BasicTensor<T> na_loss(const BasicTensor<T>& student_logits, const TokenBatch& tokens) {
  if (student_logits.rank() != 3 || student_logits.dim(0) != tokens.batch ||
      student_logits.dim(1) != tokens.seq) {
    throw DimensionError("na_loss: logits " + shape_str(student_logits.shape()) +
                         " do not match a " + std::to_string(tokens.batch) + "x" +
                         std::to_string(tokens.seq) + " batch");
  }
  return cross_entropy(student_logits, std::span<const std::int32_t>(tokens.targets),
                       std::span<const std::uint8_t>(tokens.mask));
}

DistributionBatch teacher_forward(const Model& teacher, const TokenBatch& tokens,
                                  std::size_t student_vocab) {
  if (teacher.config().vocab_size != student_vocab) {
    throw ConfigError("teacher vocabulary " + std::to_string(teacher.config().vocab_size) +
                      " differs from student vocabulary " + std::to_string(student_vocab));
  }
  NoGradGuard no_grad;
  return {teacher.next_token_distribution(tokens), Provenance::kTeacher};
}

DistributionBatch one_hot_teacher(const TokenBatch& tokens, std::size_t vocab) {
  Tensor probs = Tensor::zeros({tokens.batch, tokens.seq, vocab});
  auto out = probs.mutable_data();
  for (std::size_t r = 0; r < tokens.positions(); ++r) {
    auto row = out.subspan(r * vocab, vocab);
    if (tokens.mask[r]) {
      const auto target = tokens.targets[r];
      if (target < 0 || static_cast<std::size_t>(target) >= vocab) {
        throw InputError("one_hot_teacher: target id " + std::to_string(target) +
                         " outside vocabulary");
      }
      row[static_cast<std::size_t>(target)] = 1.0f;
    } else {
      for (auto& p : row) p = 1.0f / static_cast<float>(vocab);
    }
  }
  return {probs, Provenance::kTeacher};
}

TeacherFn model_teacher(const Model& teacher, std::size_t student_vocab) {
  if (teacher.config().vocab_size != student_vocab) {
    throw ConfigError("teacher vocabulary " + std::to_string(teacher.config().vocab_size) +
                      " differs from student vocabulary " + std::to_string(student_vocab));
  }
  return [&teacher, student_vocab](const TokenBatch& tokens) {
    return teacher_forward(teacher, tokens, student_vocab);
  };
}

TeacherFn one_hot_teacher_fn(std::size_t vocab) {
  return [vocab](const TokenBatch& tokens) { return one_hot_teacher(tokens, vocab); };
}

template Tensor ad_loss(const Tensor&, const DistributionBatch&, std::span<const std::uint8_t>);
template Tensor64 ad_loss(const Tensor64&, const BasicDistributionBatch<double>&,
                          std::span<const std::uint8_t>);
template Tensor na_loss(const Tensor&, const TokenBatch&);
template Tensor64 na_loss(const Tensor64&, const TokenBatch&);

}  // namespace fbi

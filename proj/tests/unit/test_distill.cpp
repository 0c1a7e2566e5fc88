// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <vector>

#include "fbi/distill.hpp"
#include "fbi/errors.hpp"
#include "support/gradcheck.hpp"

using namespace fbi;
using fbi::testing::random_tensor;

namespace {

// -(1/rows) * sum_r sum_v p[r,v] * log softmax(z)[r,v], accumulated in double.
double direct_ad_loss(const std::vector<double>& p, const std::vector<double>& z, std::size_t rows,
                      std::size_t vocab) {
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = z[r * vocab];
    for (std::size_t v = 1; v < vocab; ++v) mx = std::max(mx, z[r * vocab + v]);
    double s = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) s += std::exp(z[r * vocab + v] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t v = 0; v < vocab; ++v) total -= p[r * vocab + v] * (z[r * vocab + v] - lse);
  }
  return total / double(rows);
}

ModelConfig tiny(std::size_t vocab = 30) {
  ModelConfig c;
  c.n_layers = 1;
  c.hidden_size = 16;
  c.n_heads = 2;
  c.n_kv_heads = 2;
  c.intermediate_size = 24;
  c.vocab_size = vocab;
  c.max_seq_len = 8;
  return c;
}

}  // namespace

TEST_CASE("uniform teacher and uniform student give log V") {
  auto logits = Tensor::zeros({1, 3, 4});
  DistributionBatch t{Tensor::full({1, 3, 4}, 0.25f), Provenance::kTeacher};
  CHECK(ad_loss(logits, t).item() == doctest::Approx(std::log(4.0)).epsilon(1e-6));

  std::vector<std::int32_t> ids = {0, 3, 1};
  auto tokens = TokenBatch::from_ids(1, 3, ids);
  CHECK(na_loss(logits, tokens).item() == doctest::Approx(std::log(4.0)).epsilon(1e-6));

  auto sharp = Tensor::zeros({1, 3, 4});
  sharp.mutable_data()[0 * 4 + 3] = 60.0f;
  sharp.mutable_data()[1 * 4 + 1] = 60.0f;
  CHECK(na_loss(sharp, tokens).item() < 1e-12);
}

TEST_CASE("hand example against a 64-bit direct sum") {
  const std::vector<double> p = {0.2, 0.3, 0.5, 0.6, 0.1, 0.3};
  const std::vector<double> z = {0, 0, 0, 1, 0, -1};
  auto logits = Tensor::from({1, 2, 3}, std::vector<float>(z.begin(), z.end()));
  DistributionBatch t{Tensor::from({1, 2, 3}, std::vector<float>(p.begin(), p.end()))};
  const double oracle = direct_ad_loss(p, z, 2, 3);
  CHECK(std::abs(ad_loss(logits, t).item() - oracle) <= 1e-6);

  auto logits64 = Tensor64::from({1, 2, 3}, z);
  BasicDistributionBatch<double> t64{Tensor64::from({1, 2, 3}, p)};
  CHECK(std::abs(ad_loss(logits64, t64).item() - oracle) <= 1e-12);
}

TEST_CASE("one-hot teacher reproduces the next-token loss") {
  Rng rng(4);
  std::vector<std::int32_t> ids(2 * 7);
  for (auto& id : ids) id = static_cast<std::int32_t>(rng.below(11));
  auto tokens = TokenBatch::from_ids(2, 7, ids);
  auto logits = random_tensor({2, 7, 11}, rng, 2.0);
  auto teacher = one_hot_teacher(tokens, 11);
  CHECK(teacher.provenance == Provenance::kTeacher);
  const double ad = ad_loss(logits, teacher, tokens.mask).item();
  const double na = na_loss(logits, tokens).item();
  CHECK(std::abs(ad - na) <= 1e-6);

  // Masked rows are uniform so the batch still validates.
  CHECK(teacher.probs.at(6 * 11) == doctest::Approx(1.0 / 11));
  CHECK_THROWS_AS(one_hot_teacher(tokens, 5), InputError);
}

TEST_CASE("gradient against student logits is softmax minus teacher over rows") {
  Rng rng(9);
  auto logits = random_tensor({1, 4, 6}, rng, 1.0, true);
  auto p = softmax_rows(random_tensor({1, 4, 6}, rng));
  DistributionBatch t{p};
  backward(ad_loss(logits, t));
  auto q = softmax_rows(logits.detach());
  for (std::size_t i = 0; i < 24; ++i) {
    const double closed = (double(q.at(i)) - p.at(i)) / 4.0;
    CHECK(std::abs(logits.grad()[i] - closed) <= 1e-5);
  }
  CHECK_FALSE(p.has_grad());
}

TEST_CASE("Gibbs inequality on random distribution pairs") {
  Rng rng(2024);
  std::size_t equal_cases = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t vocab = 2 + rng.below(7);
    std::vector<double> p(vocab), z(vocab);
    double s = 0.0;
    for (auto& v : p) s += v = rng.uniform() + 1e-3;
    for (auto& v : p) v /= s;
    const bool same = trial % 10 == 0;
    for (std::size_t v = 0; v < vocab; ++v) z[v] = same ? std::log(p[v]) + 0.7 : rng.normal() * 2.0;
    double entropy = 0.0;
    for (double v : p) entropy -= v * std::log(v);
    BasicDistributionBatch<double> t{Tensor64::from({1, 1, vocab}, p)};
    const double loss = ad_loss(Tensor64::from({1, 1, vocab}, z), t).item();
    CHECK(loss >= entropy - 1e-12);
    if (same) {
      CHECK(loss - entropy <= 1e-6);
      ++equal_cases;
    }
  }
  CHECK(equal_cases == 200);
}

TEST_CASE("teacher validation") {
  auto logits = Tensor::zeros({1, 2, 3});
  DistributionBatch wrong_shape{Tensor::full({1, 2, 4}, 0.25f)};
  CHECK_THROWS_AS(ad_loss(logits, wrong_shape), DimensionError);
  DistributionBatch unnormalized{Tensor::full({1, 2, 3}, 0.5f)};
  CHECK_THROWS_AS(ad_loss(logits, unnormalized), InputError);
  DistributionBatch negative{Tensor::from({1, 2, 3}, {1.2f, -0.2f, 0.0f, 0.5f, 0.5f, 0.0f})};
  CHECK_THROWS_AS(ad_loss(logits, negative), InputError);
}

TEST_CASE("teacher forward") {
  Model teacher(tiny(), 5);
  std::vector<std::int32_t> ids = {1, 4, 9, 2, 7, 3};
  auto tokens = TokenBatch::from_ids(2, 3, ids);
  auto a = teacher_forward(teacher, tokens, 30);
  auto b = teacher_forward(teacher, tokens, 30);
  CHECK(a.provenance == Provenance::kTeacher);
  for (std::size_t i = 0; i < a.probs.numel(); ++i) CHECK(a.probs.at(i) == b.probs.at(i));
  CHECK_FALSE(a.probs.requires_grad());
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0.0;
    for (std::size_t v = 0; v < 30; ++v) s += a.probs.at(r * 30 + v);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
  }

  // A student identical to the teacher sees its own entropy.
  auto logits = teacher.forward_logits(tokens);
  double entropy = 0.0;
  for (std::size_t i = 0; i < a.probs.numel(); ++i) {
    const double p = a.probs.at(i);
    if (p > 0) entropy -= p * std::log(p);
  }
  CHECK(ad_loss(logits, a).item() == doctest::Approx(entropy / 6.0).epsilon(1e-5));

  CHECK_THROWS_AS(teacher_forward(teacher, tokens, 31), ConfigError);
  CHECK_THROWS_AS(model_teacher(teacher, 31), ConfigError);
}

TEST_CASE("teacher parameters never receive gradient") {
  Model teacher(tiny(), 6);
  Model student(tiny(), 7);
  std::vector<std::int32_t> ids = {1, 4, 9, 2, 7, 3, 0, 8};
  auto tokens = TokenBatch::from_ids(1, 8, ids);
  auto fn = model_teacher(teacher, 30);
  backward(ad_loss(student.forward_logits(tokens), fn(tokens), tokens.mask));
  for (const auto& nt : teacher.named_parameters()) CHECK_FALSE(nt.tensor.has_grad());
  bool student_has_grad = false;
  for (const auto& nt : student.named_parameters()) student_has_grad |= nt.tensor.has_grad();
  CHECK(student_has_grad);
}

// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <vector>

#include "fbi/errors.hpp"
#include "fbi/fbi_linear.hpp"
#include "support/gradcheck.hpp"

using namespace fbi;
using fbi::testing::check_gradients;
using fbi::testing::random_tensor;
using fbi::testing::random_tensor64;

namespace {

FbiLinearParams params_from(Shape shape, std::vector<float> w, std::vector<float> a,
                            std::vector<float> b) {
  const std::size_t n = shape[1];
  return {Tensor::from(std::move(shape), std::move(w), true), Tensor::from({n}, std::move(a), true),
          Tensor::from({n}, std::move(b), true)};
}

}  // namespace

TEST_CASE("init scales on hand columns") {
  // Two columns: [2, 4] and [1, -1]; W is [in=2, out=2].
  auto s = init_scales(Tensor::from({2, 2}, {2, 1, 4, -1}));
  CHECK(s.alpha.at(0) == 3.0f);
  CHECK(s.beta.at(0) == 1.0f);
  CHECK(s.alpha.at(1) == 0.0f);
  CHECK(s.beta.at(1) == 1.0f);

  auto c = init_scales(Tensor::from({3, 1}, {0.25f, 0.25f, 0.25f}));
  CHECK(c.alpha.at(0) == 0.25f);
  CHECK(c.beta.at(0) == 0.0f);

  CHECK_THROWS_AS(init_scales(Tensor::zeros({0, 3})), ContractError);
  CHECK_THROWS_AS(init_scales(Tensor::zeros({3})), ContractError);
}

TEST_CASE("effective weight") {
  auto p = params_from({2, 1}, {0.3f, -0.1f}, {2.0f}, {0.5f});
  auto w = effective_weight(p);
  CHECK(w.at(0) == 2.5f);
  CHECK(w.at(1) == -1.5f);

  Rng rng(2);
  FbiLinearParams unit{random_tensor({4, 3}, rng), Tensor::full({3}, 1.0f), Tensor::zeros({3})};
  auto wu = effective_weight(unit);
  for (std::size_t i = 0; i < 12; ++i) CHECK(wu.at(i) == binary_sign(unit.w_f.at(i)));

  FbiLinearParams r{random_tensor({4, 3}, rng), random_tensor({3}, rng), random_tensor({3}, rng)};
  auto wr = effective_weight(r);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      const double ref = double(r.alpha.at(j)) * binary_sign(r.w_f.at(i * 3 + j)) + r.beta.at(j);
      CHECK(std::abs(wr.at(i * 3 + j) - ref) <= 1e-6);
    }
}

TEST_CASE("forward") {
  // Column 0 signs [1, 1], column 1 signs [-1, 1].
  auto p = params_from({2, 2}, {0.4f, -0.2f, 0.9f, 0.1f}, {1, 1}, {0, 0});
  auto y = fbi_linear_forward(p, Tensor::from({1, 2}, {1, 1}));
  CHECK(y.at(0) == 2.0f);
  CHECK(y.at(1) == 0.0f);

  auto z = fbi_linear_forward(p, Tensor::zeros({1, 2}));
  CHECK(z.at(0) == 0.0f);
  CHECK(z.at(1) == 0.0f);

  Rng rng(6);
  FbiLinearParams r{random_tensor({5, 4}, rng), random_tensor({4}, rng), random_tensor({4}, rng)};
  auto x = random_tensor({2, 3, 5}, rng);
  auto out = fbi_linear_forward(r, x);
  auto ref = matmul(x, effective_weight(r));
  CHECK(out.shape() == Shape{2, 3, 4});
  for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out.at(i) == ref.at(i));

  CHECK_THROWS_AS(fbi_linear_forward(r, random_tensor({2, 4}, rng)), DimensionError);
}

TEST_CASE("closed-form gradients on the 2x1 case") {
  // Upstream dL/dW_eff = [[3], [5]], sign = [[1], [-1]], alpha = 2.
  auto p = params_from({2, 1}, {0.7f, -0.4f}, {2.0f}, {0.0f});
  auto trace = fbi_linear_forward_traced(p, Tensor::from({1, 2}, {1, 1}));
  auto upstream = Tensor::from({2, 1}, {3, 5});
  backward(sum(mul(trace.effective, upstream)));
  auto g = grads_consistency(p, trace.effective);
  CHECK(g.alpha.at(0) == -2.0f);
  CHECK(g.beta.at(0) == 8.0f);
  CHECK(g.w_f.at(0) == 6.0f);
  CHECK(g.w_f.at(1) == 10.0f);

  // Autodiff agrees with the closed form.
  CHECK(p.alpha.grad()[0] == -2.0f);
  CHECK(p.beta.grad()[0] == 8.0f);
  CHECK(p.w_f.grad()[0] == 6.0f);
  CHECK(p.w_f.grad()[1] == 10.0f);
}

TEST_CASE("unit alpha passes the sign gradient straight to the latent weights") {
  Rng rng(13);
  FbiLinearParams p{random_tensor({6, 4}, rng, 1.0, true), Tensor::full({4}, 1.0f, true),
                    Tensor::zeros({4}, true)};
  auto trace = fbi_linear_forward_traced(p, random_tensor({3, 6}, rng));
  backward(sum(mul(trace.output, trace.output)));
  auto sign_grad = trace.binary.grad();
  REQUIRE(sign_grad.size() == 24);
  for (std::size_t i = 0; i < 24; ++i) CHECK(p.w_f.grad()[i] == sign_grad[i]);
}

TEST_CASE("closed-form gradients agree with autodiff on random layers") {
  Rng rng(17);
  for (int rep = 0; rep < 10; ++rep) {
    FbiLinearParams p{random_tensor({7, 5}, rng, 1.0, true), random_tensor({5}, rng, 1.0, true),
                      random_tensor({5}, rng, 1.0, true)};
    auto trace = fbi_linear_forward_traced(p, random_tensor({4, 7}, rng));
    backward(mean(mul(trace.output, trace.output)));
    auto g = grads_consistency(p, trace.effective);
    for (std::size_t j = 0; j < 5; ++j) {
      CHECK(g.alpha.at(j) == doctest::Approx(p.alpha.grad()[j]).epsilon(1e-5));
      CHECK(g.beta.at(j) == doctest::Approx(p.beta.grad()[j]).epsilon(1e-5));
    }
    for (std::size_t i = 0; i < 35; ++i) CHECK(g.w_f.at(i) == doctest::Approx(p.w_f.grad()[i]).epsilon(1e-5));
  }
  FbiLinearParams fresh{random_tensor({2, 2}, rng), random_tensor({2}, rng), random_tensor({2}, rng)};
  CHECK_THROWS_AS(grads_consistency(fresh, effective_weight(fresh)), ContractError);
}

TEST_CASE("scale and shift gradients match 64-bit finite differences") {
  Rng rng(23);
  for (int rep = 0; rep < 10; ++rep) {
    BasicFbiLinearParams<double> p{random_tensor64({6, 4}, rng), random_tensor64({4}, rng),
                                   random_tensor64({4}, rng)};
    auto x = random_tensor64({3, 6}, rng, 1.0, false);
    auto probe = random_tensor64({3, 4}, rng, 1.0, false);
    auto r = check_gradients({p.alpha, p.beta}, [&] {
      auto y = fbi_linear_forward(p, x);
      return sum(mul(tanh(y), probe));
    });
    CHECK(r.max_rel_error <= 1e-3);
  }
}

TEST_CASE("one optimizer-like step flips signs only where latent weights cross zero") {
  Rng rng(31);
  auto p = make_fbi_linear(16, 8, rng, 0.02f);
  CHECK(p.w_f.requires_grad());
  CHECK(p.alpha.requires_grad());
  CHECK(p.beta.requires_grad());
  auto before = std::vector<float>(p.w_f.data().begin(), p.w_f.data().end());
  auto y = fbi_linear_forward(p, random_tensor({4, 16}, rng));
  backward(mean(mul(y, y)));
  auto w = p.w_f.mutable_data();
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= 0.05f * p.w_f.grad()[i];
  std::size_t changed = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] != before[i]) ++changed;
    const bool crossed = (before[i] > 0) != (w[i] > 0);
    CHECK((binary_sign(w[i]) != binary_sign(before[i])) == crossed);
  }
  CHECK(changed > 0);
}

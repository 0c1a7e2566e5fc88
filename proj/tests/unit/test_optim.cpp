// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "fbi/errors.hpp"
#include "fbi/optim.hpp"
#include "support/gradcheck.hpp"

using namespace fbi;

namespace {

NamedTensor param_with_grad(std::string name, std::vector<float> value, std::vector<float> grad) {
  const std::size_t n = value.size();
  auto t = Tensor::from({n}, std::move(value), true);
  auto g = t.mutable_grad();
  std::copy(grad.begin(), grad.end(), g.begin());
  return {std::move(name), t};
}

}  // namespace

TEST_CASE("learning-rate schedule anchors") {
  const LrSchedule s{3e-4, 3e-5, 2000, 20000};
  CHECK(lr_at(0, s) == 0.0);
  CHECK(lr_at(1000, s) == doctest::Approx(1.5e-4));
  CHECK(lr_at(2000, s) == doctest::Approx(3e-4).epsilon(1e-12));
  CHECK(lr_at(20000, s) == doctest::Approx(3e-5).epsilon(1e-12));
  CHECK(lr_at(11000, s) == doctest::Approx(1.65e-4).epsilon(1e-12));
  CHECK_THROWS_AS(lr_at(20001, s), ContractError);

  double prev = lr_at(2000, s);
  for (std::size_t step = 2100; step <= 20000; step += 100) {
    const double cur = lr_at(step, s);
    CHECK(cur <= prev);
    prev = cur;
  }
}

TEST_CASE("first Adam step moves by the learning rate") {
  auto p = param_with_grad("w", {0.0f}, {1.0f});
  Adam adam({p});
  adam.step(0.1);
  CHECK(p.tensor.at(0) == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(adam.steps_taken() == 1);
  CHECK_THROWS_AS(adam.step(-1.0), ContractError);
}

TEST_CASE("zero gradients leave parameters unchanged and decay the moments") {
  auto p = param_with_grad("w", {0.5f, -0.5f}, {0.0f, 0.0f});
  Adam adam({p});
  adam.step(0.1);
  CHECK(p.tensor.at(0) == 0.5f);
  CHECK(p.tensor.at(1) == -0.5f);

  // Build moments, then feed zeros: the moments shrink by beta each step.
  auto q = param_with_grad("q", {0.0f}, {2.0f});
  Adam a2({q});
  a2.step(0.0);
  Checkpoint c1;
  a2.export_state(c1);
  q.tensor.mutable_grad()[0] = 0.0f;
  a2.step(0.0);
  Checkpoint c2;
  a2.export_state(c2);
  CHECK(c2.require("adam.m.q").at(0) == doctest::Approx(0.9f * c1.require("adam.m.q").at(0)));
  CHECK(c2.require("adam.v.q").at(0) == doctest::Approx(0.98f * c1.require("adam.v.q").at(0)));
}

TEST_CASE("Adam is deterministic and its state round-trips") {
  auto run = [](bool split) {
    Rng rng(3);
    auto t = fbi::testing::random_tensor({16}, rng, 1.0, true);
    std::vector<NamedTensor> params{{"t", t}};
    Adam adam(params);
    for (int s = 0; s < 6; ++s) {
      if (split && s == 3) {
        Checkpoint ck;
        adam.export_state(ck);
        adam = Adam(params);
        adam.import_state(ck);
      }
      auto g = t.mutable_grad();
      for (auto& v : g) v = static_cast<float>(rng.normal());
      adam.step(1e-2);
    }
    return std::vector<float>(t.data().begin(), t.data().end());
  };
  auto a = run(false);
  auto b = run(false);
  auto c = run(true);
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
  CHECK(std::memcmp(a.data(), c.data(), a.size() * sizeof(float)) == 0);
}

TEST_CASE("global-norm clipping") {
  auto small = param_with_grad("a", {0, 0}, {0.3f, 0.4f});
  auto r = clip_global_norm(std::vector<NamedTensor>{small}, 1.0);
  CHECK_FALSE(r.clipped);
  CHECK(r.preclip_norm == doctest::Approx(0.5));
  CHECK(small.tensor.grad()[0] == 0.3f);

  auto big = param_with_grad("b", {0, 0}, {3.0f, 4.0f});
  r = clip_global_norm(std::vector<NamedTensor>{big}, 1.0);
  CHECK(r.clipped);
  CHECK(r.preclip_norm == doctest::Approx(5.0));
  CHECK(big.tensor.grad()[0] == doctest::Approx(0.6));
  CHECK(big.tensor.grad()[1] == doctest::Approx(0.8));

  Rng rng(8);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<NamedTensor> ps;
    for (int k = 0; k < 3; ++k) {
      auto t = Tensor::zeros({7}, true);
      for (auto& g : t.mutable_grad()) g = static_cast<float>(rng.normal() * (rep % 5));
      ps.push_back({"p" + std::to_string(k), t});
    }
    ps.push_back({"no_grad", Tensor::zeros({3}, true)});
    clip_global_norm(ps, 1.0);
    double sq = 0.0;
    for (const auto& p : ps)
      for (float g : p.tensor.grad()) sq += double(g) * g;
    CHECK(std::sqrt(sq) <= 1.0 + 1e-6);
  }

  auto bad = param_with_grad("n", {0, 0}, {std::numeric_limits<float>::infinity(), 1.0f});
  r = clip_global_norm(std::vector<NamedTensor>{bad}, 1.0);
  CHECK_FALSE(std::isfinite(r.preclip_norm));
  CHECK(bad.tensor.grad()[1] == 1.0f);
}

// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <vector>

#include "fbi/errors.hpp"
#include "fbi/model.hpp"

using namespace fbi;

namespace {

ModelConfig small_config(std::size_t layers = 2, bool binarize = true) {
  ModelConfig c;
  c.n_layers = layers;
  c.hidden_size = 32;
  c.n_heads = 2;
  c.n_kv_heads = 2;
  c.intermediate_size = 48;
  c.vocab_size = 40;
  c.max_seq_len = 16;
  c.binarize = binarize;
  return c;
}

TokenBatch random_tokens(std::size_t batch, std::size_t seq, std::size_t vocab, Rng& rng) {
  std::vector<std::int32_t> ids(batch * seq);
  for (auto& id : ids) id = static_cast<std::int32_t>(rng.below(vocab));
  return TokenBatch::from_ids(batch, seq, ids);
}

}  // namespace

TEST_CASE("token batch targets and mask") {
  std::vector<std::int32_t> ids = {1, 2, 3, 4, 5, 6};
  auto b = TokenBatch::from_ids(2, 3, ids);
  CHECK(b.targets[0] == 2);
  CHECK(b.targets[1] == 3);
  CHECK(b.mask[2] == 0);
  CHECK(b.targets[3] == 5);
  CHECK(b.mask[5] == 0);
  CHECK(b.predicted_positions() == 4);
}

TEST_CASE("config validation") {
  auto c = small_config();
  CHECK_NOTHROW(c.validate());
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.vocab_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  auto round = ModelConfig::from_kv(ModelConfig::toy().to_kv());
  CHECK(round.to_kv() == ModelConfig::toy().to_kv());
}

TEST_CASE("toy census matches shape arithmetic") {
  // Per layer: four 128x128 attention projections and three 128x352 MLP
  // projections; alpha and beta per output channel.
  const std::size_t linear = 4 * (4 * 128 * 128 + 3 * 128 * 352);
  const std::size_t scale_shift = 4 * 2 * (4 * 128 + 352 + 352 + 128);
  const std::size_t norms = (2 * 4 + 1) * 128;
  const std::size_t table = 259 * 128;

  auto cfg = ModelConfig::toy();
  auto c = census_for(cfg);
  CHECK(c.linear_weights == linear);
  CHECK(c.scale_shift == scale_shift);
  CHECK(c.norms == norms);
  CHECK(c.embedding == table);
  CHECK(c.head == table);
  CHECK(c.total() == 881024);

  Model m(cfg, 1);
  CHECK(m.census() == c);
  std::size_t counted = 0;
  for (const auto& nt : m.named_parameters()) counted += nt.tensor.numel();
  CHECK(counted == c.total());

  cfg.binarize = false;
  auto dense = census_for(cfg);
  CHECK(dense.scale_shift == 0);
  CHECK(Model(cfg, 1).census() == dense);
}

TEST_CASE("single token forward") {
  Model m(ModelConfig::toy(), 3);
  std::vector<std::int32_t> ids = {65};
  auto logits = m.forward_logits(TokenBatch::from_ids(1, 1, ids));
  CHECK(logits.shape() == Shape{1, 1, 259});
  for (float v : logits.data()) CHECK(std::isfinite(v));
}

TEST_CASE("causality holds at every depth") {
  Rng rng(5);
  for (std::size_t layers = 1; layers <= 3; ++layers) {
    for (bool binarize : {true, false}) {
      Model m(small_config(layers, binarize), 10 + layers);
      auto a = random_tokens(1, 12, 40, rng);
      auto b = a;
      const std::size_t t = 5;
      for (std::size_t i = t + 1; i < 12; ++i) b.ids[i] = static_cast<std::int32_t>(rng.below(40));
      auto la = m.forward_logits(a);
      auto lb = m.forward_logits(b);
      for (std::size_t i = 0; i <= t; ++i)
        for (std::size_t v = 0; v < 40; ++v) CHECK(la.at(i * 40 + v) == lb.at(i * 40 + v));
    }
  }
}

TEST_CASE("binarized model with unit scales equals a dense twin holding the signs") {
  auto cfg = small_config();
  Model bin(cfg, 7);
  for (auto& layer : bin.params().layers) {
    for (auto& lin : layer.linears) {
      for (auto& a : lin.params().alpha.mutable_data()) a = 1.0f;
      for (auto& b : lin.params().beta.mutable_data()) b = 0.0f;
    }
  }
  cfg.binarize = false;
  Model dense(cfg, 99);
  auto& dp = dense.params();
  const auto& bp = bin.params();
  dp.token_embedding = bp.token_embedding.detach();
  dp.final_norm = bp.final_norm.detach();
  dp.head = bp.head.detach();
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    dp.layers[l].attention_norm = bp.layers[l].attention_norm.detach();
    dp.layers[l].mlp_norm = bp.layers[l].mlp_norm.detach();
    for (std::size_t s = 0; s < 7; ++s) {
      auto w = bp.layers[l].linears[s].params().w_f.detach();
      for (auto& v : w.mutable_data()) v = binary_sign(v);
      dp.layers[l].linears[s].params().w_f = w;
    }
  }
  Rng rng(1);
  auto tokens = random_tokens(2, 10, 40, rng);
  auto lb = bin.forward_logits(tokens);
  auto ld = dense.forward_logits(tokens);
  for (std::size_t i = 0; i < lb.numel(); ++i) CHECK(std::abs(lb.at(i) - ld.at(i)) <= 1e-5);
}

TEST_CASE("next-token distribution") {
  Model m(small_config(), 4);
  Rng rng(2);
  auto tokens = random_tokens(2, 6, 40, rng);
  auto p = m.next_token_distribution(tokens);
  auto ref = softmax_rows(m.forward_logits(tokens));
  for (std::size_t i = 0; i < p.numel(); ++i) CHECK(p.at(i) == ref.at(i));
  for (std::size_t r = 0; r < 12; ++r) {
    double s = 0;
    for (std::size_t v = 0; v < 40; ++v) s += p.at(r * 40 + v);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
  }

  for (auto& v : m.params().head.mutable_data()) v = 0.0f;
  auto u = m.next_token_distribution(tokens);
  for (float v : u.data()) CHECK(v == doctest::Approx(1.0 / 40).epsilon(1e-6));
}

TEST_CASE("token contract") {
  Model m(small_config(), 4);
  std::vector<std::int32_t> bad = {1, 40};
  CHECK_THROWS_AS(m.forward_logits(TokenBatch::from_ids(1, 2, bad)), InputError);
  std::vector<std::int32_t> neg = {-1, 2};
  CHECK_THROWS_AS(m.forward_logits(TokenBatch::from_ids(1, 2, neg)), InputError);
  std::vector<std::int32_t> longer(17, 1);
  CHECK_THROWS(m.forward_logits(TokenBatch::from_ids(1, 17, longer)));
}

TEST_CASE("clone is deep and binarized_from re-derives scales") {
  auto cfg = small_config();
  cfg.binarize = false;
  Model twin(cfg, 8);
  auto copy = twin.clone();
  copy.params().head.mutable_data()[0] += 1.0f;
  CHECK(copy.params().head.at(0) != twin.params().head.at(0));

  auto student = Model::binarized_from(twin);
  CHECK(student.config().binarize);
  const auto& lin = student.params().layers[1].linear(LinearSlot::kUp);
  const auto& src = twin.params().layers[1].linear(LinearSlot::kUp);
  auto scales = init_scales(src.params().w_f);
  for (std::size_t j = 0; j < lin.out_features(); ++j) {
    CHECK(lin.params().alpha.at(j) == scales.alpha.at(j));
    CHECK(lin.params().beta.at(j) == scales.beta.at(j));
  }
  for (std::size_t i = 0; i < lin.params().w_f.numel(); ++i) CHECK(lin.params().w_f.at(i) == src.params().w_f.at(i));
  CHECK(student.params().token_embedding.at(3) == twin.params().token_embedding.at(3));
}

TEST_CASE("toy model builds and runs one forward step quickly") {
  using clock = std::chrono::steady_clock;
  auto t0 = clock::now();
  Model m(ModelConfig::toy(), 1);
  auto t1 = clock::now();
  std::vector<std::int32_t> ids(256);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::int32_t>(i % 256);
  const auto batch = TokenBatch::from_ids(1, 256, ids);
  // Best of three, so a busy machine does not decide the outcome.
  double best = 1e9;
  Tensor logits;
  for (int rep = 0; rep < 3; ++rep) {
    const auto a = clock::now();
    logits = m.forward_logits(batch);
    best = std::min(best, std::chrono::duration<double>(clock::now() - a).count());
  }
  CHECK(std::chrono::duration<double>(t1 - t0).count() < 1.0);
  CHECK(best < 0.1);
  CHECK(logits.numel() == 256 * 259);
}

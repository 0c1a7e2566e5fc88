// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "fbi/bitpack.hpp"
#include "fbi/data.hpp"
#include "fbi/errors.hpp"
#include "fbi/metrics.hpp"
#include "support/gradcheck.hpp"

using namespace fbi;
using fbi::testing::random_tensor;
using fbi::testing::widen;

namespace {

Tensor random_signs(std::size_t m, std::size_t n, Rng& rng) {
  std::vector<float> v(m * n);
  for (auto& s : v) s = rng.uniform() < 0.5 ? -1.0f : 1.0f;
  return Tensor::from({m, n}, std::move(v));
}

std::vector<float> random_vec(std::size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

}  // namespace

TEST_CASE("bit layout") {
  auto all = pack_signs(Tensor::full({64, 1}, 1.0f), {1.0f}, {0.0f});
  REQUIRE(all.words.size() == 1);
  CHECK(all.words[0] == 0xFFFFFFFFFFFFFFFFULL);

  auto three = pack_signs(Tensor::from({3, 1}, {1, -1, 1}), {1.0f}, {0.0f});
  REQUIRE(three.words.size() == 1);
  CHECK(three.words[0] == 0b101ULL);

  auto wide = pack_signs(Tensor::full({65, 2}, -1.0f), {1, 1}, {0, 0});
  CHECK(wide.words_per_column() == 2);
  CHECK(wide.words.size() == 4);
  for (auto w : wide.words) CHECK(w == 0);

  // Zero latent weights pack as -1.
  FbiLinearParams p{Tensor::from({2, 1}, {0.0f, 0.5f}), Tensor::from({1}, {1.0f}),
                    Tensor::from({1}, {0.0f})};
  CHECK(pack(p).words[0] == 0b10ULL);
}

TEST_CASE("unpack round-trip") {
  Rng rng(1);
  auto s = random_signs(100, 37, rng);
  auto pl = pack_signs(s, random_vec(37, rng), random_vec(37, rng));
  auto back = unpack(pl);
  CHECK(back.shape() == Shape{100, 37});
  for (std::size_t i = 0; i < s.numel(); ++i) CHECK(back.at(i) == s.at(i));
  CHECK(pack_signs(back, pl.alpha, pl.beta) == pl);
  CHECK_THROWS(pack_signs(s, random_vec(3, rng), random_vec(37, rng)));
}

TEST_CASE("packed forward hand cases") {
  auto pl = pack_signs(Tensor::from({3, 1}, {1, -1, 1}), {1.0f}, {0.0f});
  auto y = packed_forward(pl, Tensor::from({1, 3}, {1, 2, 3}));
  CHECK(y.at(0) == 2.0f);

  auto zero = pack_signs(Tensor::from({3, 2}, {1, -1, 1, 1, -1, -1}), {0, 0}, {0, 0});
  auto z = packed_forward(zero, Tensor::from({1, 3}, {4, 5, 6}));
  CHECK(z.at(0) == 0.0f);
  CHECK(z.at(1) == 0.0f);
  CHECK_THROWS_AS(packed_forward(pl, Tensor::zeros({1, 4})), DimensionError);
}

TEST_CASE("set-bit identity") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.below(4096);
    auto s = random_signs(m, 1, rng);
    std::vector<float> x(m);
    for (auto& v : x) v = static_cast<float>(rng.uniform(-10, 10));
    double direct = 0.0, set = 0.0, all = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      direct += double(x[i]) * s.at(i);
      all += x[i];
      if (s.at(i) > 0) set += x[i];
    }
    CHECK(std::abs(direct - (2 * set - all)) <= 1e-9);
    auto y = packed_forward(pack_signs(s, {1.0f}, {0.0f}), Tensor::from({1, m}, x));
    CHECK(std::abs(y.at(0) - direct) <= 1e-4);
  }
}

TEST_CASE("packed and dense agree on random 256x256 layers") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    FbiLinearParams p{random_tensor({256, 256}, rng), random_tensor({256}, rng), random_tensor({256}, rng)};
    std::vector<float> x(2 * 256);
    for (auto& v : x) v = static_cast<float>(rng.uniform(-10, 10));
    auto xt = Tensor::from({2, 256}, x);
    auto dense = fbi_linear_forward(widen(p), widen(xt));
    auto packed = packed_forward(pack(p), xt);
    double worst = 0.0;
    for (std::size_t i = 0; i < dense.numel(); ++i) worst = std::max(worst, std::abs(dense.at(i) - packed.at(i)));
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("packed model export and import") {
  ModelConfig cfg = ModelConfig::toy();
  cfg.n_layers = 2;
  Model m(cfg, 11);
  auto pm = PackedModel::from_model(m);

  std::vector<std::int32_t> ids(2 * 32);
  Rng rng(4);
  for (auto& id : ids) id = static_cast<std::int32_t>(rng.below(259));
  auto tokens = TokenBatch::from_ids(2, 32, ids);
  auto dense = m.forward_logits(tokens);
  auto packed = pm.forward_logits(tokens);
  double worst = 0.0;
  std::size_t argmax_agree = 0;
  for (std::size_t r = 0; r < 64; ++r) {
    std::size_t ad = 0, ap = 0;
    for (std::size_t v = 0; v < 259; ++v) {
      const std::size_t i = r * 259 + v;
      worst = std::max(worst, double(std::abs(dense.at(i) - packed.at(i))));
      if (dense.at(i) > dense.at(r * 259 + ad)) ad = v;
      if (packed.at(i) > packed.at(r * 259 + ap)) ap = v;
    }
    argmax_agree += ad == ap;
  }
  CHECK(worst <= 1e-4);
  CHECK(argmax_agree >= 63);

  const auto dir = std::filesystem::temp_directory_path() / "fbi_bitpack_test";
  std::filesystem::create_directories(dir);
  export_packed(m, dir / "a.fbip");
  auto imported = import_packed(dir / "a.fbip");
  auto again = imported.forward_logits(tokens);
  for (std::size_t i = 0; i < packed.numel(); ++i) CHECK(again.at(i) == packed.at(i));
  CHECK(imported.encode() == pm.encode());
  CHECK(imported.linear(1, LinearSlot::kDown) == pm.linear(1, LinearSlot::kDown));

  // File size = binarized census at 1 bit/16 bit, adjusted for word padding,
  // fp32 storage of everything else, and a small header.
  const auto bytes = std::filesystem::file_size(dir / "a.fbip");
  const auto c = census_for(cfg);
  const double payload = c.linear_weights / 8.0 + 4.0 * (c.scale_shift + c.norms + c.embedding + c.head);
  CHECK(double(bytes) >= payload);
  CHECK(double(bytes) <= payload + 8192);
  std::filesystem::remove_all(dir);

  cfg.binarize = false;
  CHECK_THROWS_AS(PackedModel::from_model(Model(cfg, 1)), ConfigError);
}

TEST_CASE("packed file corruption is reported") {
  ModelConfig cfg = ModelConfig::toy();
  cfg.n_layers = 1;
  auto bytes = PackedModel::from_model(Model(cfg, 2)).encode();
  CHECK_THROWS_AS(PackedModel::decode(bytes.substr(0, bytes.size() - 3), "t"), IoError);
  CHECK_THROWS_AS(PackedModel::decode(bytes + "x", "t"), IoError);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(PackedModel::decode(bad, "t"), IoError);
  CHECK_THROWS_AS(import_packed("/nonexistent/model.fbip"), IoError);
}

TEST_CASE("bench report") {
  Rng rng(5);
  auto small = bench(pack_signs(random_signs(64, 32, rng), random_vec(32, rng), random_vec(32, rng)), 3);
  CHECK(small.dense_weight_bytes == 4 * 64 * 32);
  CHECK(small.packed_weight_bytes == 64 * 32 / 8 + 8 * 32);
  CHECK(small.max_abs_diff <= 1e-4);
  CHECK(small.weight_byte_reduction > 1.0);

  auto big = bench(pack_signs(random_signs(512, 512, rng), random_vec(512, rng), random_vec(512, rng)), 2);
  CHECK(big.dense_weight_bytes >= 8 * big.packed_weight_bytes);
  CHECK(big.packed_weight_bytes > small.packed_weight_bytes);
  CHECK(big.dense_weight_bytes > small.dense_weight_bytes);
  CHECK(bench_csv_row(big).rfind("512,512,2,", 0) == 0);
  CHECK(bench_csv_header().find("max_abs_diff") != std::string::npos);

  CHECK_THROWS_AS(bench(pack_signs(random_signs(4, 4, rng), random_vec(4, rng), random_vec(4, rng)), 0), ContractError);
}

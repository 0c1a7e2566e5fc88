// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <set>
#include <vector>

#include "fbi/errors.hpp"
#include "fbi/trainer.hpp"
#include "support/corpus.hpp"

using namespace fbi;
using Verdict = SpikeDetector::Verdict;

namespace {

ModelConfig small_model() {
  ModelConfig c;
  c.n_layers = 2;
  c.hidden_size = 32;
  c.n_heads = 2;
  c.n_kv_heads = 2;
  c.intermediate_size = 48;
  c.max_seq_len = 32;
  return c;
}

// 256-token chunks of 16-token windows, four steps of four windows per chunk.
TrainConfig small_train(std::size_t steps) {
  TrainConfig t;
  t.peak_lr = 3e-3;
  t.final_lr = 3e-4;
  t.warmup_steps = 5;
  t.total_steps = steps;
  t.batch_tokens = 64;
  t.seq_len = 16;
  t.checkpoint_every = 10;
  t.ff_interval = 5;
  t.seed = 1;
  return t;
}

const ChunkedDataset& small_data() {
  static const ChunkedDataset data = [] {
    const auto text = fbi::testing::CorpusGenerator(3).generate(24 * 1024);
    return ChunkedDataset::from_tokens(Tokenizer{}.encode_documents(text), 256, 16);
  }();
  return data;
}

std::vector<double> losses(const TrainLog& log) {
  std::vector<double> out;
  for (const auto& r : log.rows)
    if (r.loss) out.push_back(*r.loss);
  return out;
}

bool has_event(const TrainLog& log, const std::string& event) {
  return std::any_of(log.rows.begin(), log.rows.end(),
                     [&](const TrainLogRow& r) { return r.event.find(event) != std::string::npos; });
}

}  // namespace

TEST_CASE("spike detector rule arithmetic") {
  SpikeDetector d({100, 3.0, 2});
  // The ratio rule waits for a full window.
  CHECK(d.observe(50.0) == Verdict::kOk);
  for (int i = 0; i < 99; ++i) CHECK(d.observe(1.0) == Verdict::kOk);
  CHECK(d.median() == 1.0);
  CHECK(d.observe(10.0) == Verdict::kSuspect);
  CHECK(d.streak() == 1);
  CHECK(d.observe(10.0) == Verdict::kSpike);
  CHECK(d.history().size() == 100);

  // An isolated outlier resets the streak on the next normal loss.
  CHECK(d.observe(10.0) == Verdict::kSuspect);
  CHECK(d.observe(1.1) == Verdict::kOk);
  CHECK(d.observe(10.0) == Verdict::kSuspect);
  CHECK(d.history().back() == 1.1f);

  SpikeDetector n;
  CHECK(n.observe(std::numeric_limits<double>::quiet_NaN()) == Verdict::kSpike);
  CHECK(n.observe(std::numeric_limits<double>::infinity()) == Verdict::kSpike);
  CHECK(n.history().empty());

  SpikeDetector even({4, 3.0, 2});
  for (double v : {1.0, 4.0, 2.0, 3.0}) even.observe(v);
  CHECK(even.median() == 2.5);
}

TEST_CASE("train config validation and round-trip") {
  auto t = small_train(50);
  CHECK_NOTHROW(t.validate());
  auto bad = t;
  bad.checkpoint_every = 7;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = t;
  bad.warmup_steps = 50;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = t;
  bad.final_lr = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = t;
  bad.batch_tokens = 8;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  auto round = TrainConfig::from_kv(t.to_kv());
  CHECK(round.to_kv() == t.to_kv());
  CHECK(round.batch_size() == 4);

  CHECK(parse_mode("ad") == TrainMode::kAD);
  CHECK(parse_mode("na") == TrainMode::kNA);
  CHECK_THROWS_AS(parse_mode("AD"), ConfigError);
}

TEST_CASE("trainer preconditions") {
  Model m(small_model(), 1);
  CHECK_THROWS_AS(Trainer(m, small_data(), small_train(10), TrainMode::kAD), ConfigError);
  auto t = small_train(10);
  t.seq_len = 64;
  t.batch_tokens = 64;
  CHECK_THROWS_AS(Trainer(m, small_data(), t, TrainMode::kNA), ConfigError);
  ChunkedDataset empty;
  empty.seq_len = 16;
  empty.tokens_per_chunk = 256;
  CHECK_THROWS_AS(Trainer(m, empty, small_train(10), TrainMode::kNA), InputError);
}

TEST_CASE("fifty steps on a small corpus reduce the loss") {
  const auto text = fbi::testing::CorpusGenerator(5).generate(10 * 1024);
  auto data = ChunkedDataset::from_tokens(Tokenizer{}.encode_documents(text), 1024, 64);
  std::vector<double> first, last;
  for (std::uint64_t seed : {1, 2, 3}) {
    Model m(ModelConfig::toy(), seed);
    TrainConfig t;
    t.peak_lr = 2e-3;
    t.final_lr = 2e-4;
    t.warmup_steps = 5;
    t.total_steps = 50;
    t.batch_tokens = 256;
    t.seq_len = 64;
    t.checkpoint_every = 10;
    t.seed = seed;
    t.epochs = 8;
    auto r = Trainer(m, data, t, TrainMode::kNA).run();
    auto l = losses(r.log);
    REQUIRE(l.size() == 50);
    first.push_back(l.front());
    last.push_back(l.back());
  }
  std::sort(first.begin(), first.end());
  std::sort(last.begin(), last.end());
  CHECK(last[1] < first[1]);
}

TEST_CASE("NA and AD with a one-hot teacher follow the same trajectory") {
  Model a(small_model(), 4);
  Model b = a.clone();
  auto ra = Trainer(a, small_data(), small_train(20), TrainMode::kNA).run();
  auto rb = Trainer(b, small_data(), small_train(20), TrainMode::kAD, one_hot_teacher_fn(259)).run();
  auto la = losses(ra.log);
  auto lb = losses(rb.log);
  REQUIRE(la.size() == lb.size());
  for (std::size_t i = 0; i < la.size(); ++i) CHECK(std::abs(la[i] - lb[i]) <= 1e-5);
}

TEST_CASE("clean run: no rollbacks, periodic checkpoints and FF ratios") {
  Model m(small_model(), 2);
  std::vector<std::size_t> ckpt_steps;
  Trainer tr(m, small_data(), small_train(30), TrainMode::kNA);
  tr.on_checkpoint([&](std::size_t step, const Model&) { ckpt_steps.push_back(step); });
  auto r = tr.run();
  CHECK(r.rollbacks == 0);
  CHECK(r.skipped_chunks.empty());
  CHECK(r.steps_completed == 30);
  CHECK(r.retained_chunks.size() == 30);
  CHECK(ckpt_steps == std::vector<std::size_t>{10, 20, 30});
  std::size_t ff_rows = 0;
  for (const auto& row : r.log.rows) {
    if (!row.ff_ratio) continue;
    ++ff_rows;
    CHECK(row.step % 5 == 0);
    CHECK(*row.ff_ratio >= 0.0);
    CHECK(*row.ff_ratio <= 1.0);
  }
  CHECK(ff_rows == 6);
  CHECK(r.log.csv({"seed=2"}).rfind("# seed=2\n" + std::string(TrainLog::kCsvHeader), 0) == 0);
}

TEST_CASE("every trainable tensor moves within ten steps") {
  Model m(small_model(), 9);
  std::vector<std::vector<float>> before;
  for (const auto& nt : m.named_parameters()) before.emplace_back(nt.tensor.data().begin(), nt.tensor.data().end());
  Trainer(m, small_data(), small_train(10), TrainMode::kNA).run();
  auto after = m.named_parameters();
  for (std::size_t k = 0; k < after.size(); ++k) {
    const auto d = after[k].tensor.data();
    CAPTURE(after[k].name);
    CHECK_FALSE(std::equal(d.begin(), d.end(), before[k].begin()));
  }
}

TEST_CASE("resume at step 25 reproduces the uninterrupted run bit for bit") {
  Model full(small_model(), 3);
  Model part = full.clone();
  auto cfg = small_train(50);
  cfg.checkpoint_every = 5;
  auto whole = Trainer(full, small_data(), cfg, TrainMode::kNA).run();

  Checkpoint mid;
  {
    Trainer first(part, small_data(), cfg, TrainMode::kNA);
    first.on_checkpoint([&](std::size_t step, const Model&) {
      if (step == 25) mid = first.snapshot();
    });
    first.run();
  }
  REQUIRE(kv_size(mid.meta, "trainer.step", 0) == 25);
  Model resumed(small_model(), 77);
  Trainer second(resumed, small_data(), cfg, TrainMode::kNA);
  second.resume(mid);
  auto tail = second.run();

  CHECK(encode_checkpoint(tail.final_checkpoint) == encode_checkpoint(whole.final_checkpoint));
  auto lw = losses(whole.log);
  auto lt = losses(tail.log);
  REQUIRE(lt.size() == 25);
  for (std::size_t i = 0; i < 25; ++i) CHECK(lt[i] == lw[25 + i]);
}

TEST_CASE("NaN loss triggers an immediate rollback and skip") {
  Model m(small_model(), 5);
  bool poisoned = false;
  Trainer tr(m, small_data(), small_train(40), TrainMode::kNA);
  tr.on_before_step([&](std::size_t step, Model& model) {
    if (step == 23 && !poisoned) {
      poisoned = true;
      model.params().head.mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
    }
  });
  auto r = tr.run();
  CHECK(r.rollbacks == 1);
  REQUIRE(r.skipped_chunks.size() == 1);
  CHECK(r.steps_completed == 40);
  CHECK(has_event(r.log, "spike"));
  CHECK(has_event(r.log, "rollback"));
  for (auto c : r.retained_chunks) CHECK(c != r.skipped_chunks[0]);
  for (float v : m.params().head.data()) CHECK(std::isfinite(v));
}

TEST_CASE("a sustained loss jump rolls back after the patience runs out") {
  Model m(small_model(), 6);
  auto cfg = small_train(40);
  cfg.spike.window = 10;
  bool poisoned = false;
  std::size_t spike_step = 0;
  Trainer tr(m, small_data(), cfg, TrainMode::kNA);
  tr.on_before_step([&](std::size_t step, Model& model) {
    if (step == 23 && !poisoned) {
      poisoned = true;
      for (auto& v : model.params().head.mutable_data()) v *= 200.0f;
    }
  });
  tr.on_log([&](const TrainLogRow& row) {
    if (row.event == "spike" && spike_step == 0) spike_step = row.step;
  });
  auto r = tr.run();
  CHECK(spike_step == 24);
  CHECK(r.rollbacks == 1);
  CHECK(has_event(r.log, "suspect"));
  std::set<std::size_t> skipped(r.skipped_chunks.begin(), r.skipped_chunks.end());
  CHECK_FALSE(skipped.empty());
  for (auto c : r.retained_chunks) CHECK_FALSE(skipped.contains(c));
  CHECK(r.steps_completed == 40);
}

TEST_CASE("a spike with no clean checkpoint aborts training") {
  Model m(small_model(), 7);
  Trainer tr(m, small_data(), small_train(40), TrainMode::kNA);
  tr.on_before_step([&](std::size_t step, Model& model) {
    if (step == 4) model.params().head.mutable_data()[0] = std::numeric_limits<float>::infinity();
  });
  CHECK_THROWS_AS(tr.run(), TrainingAborted);
}

TEST_CASE("running out of data ends the run early") {
  const auto text = fbi::testing::CorpusGenerator(8).generate(2000);
  auto data = ChunkedDataset::from_tokens(Tokenizer{}.encode_documents(text), 256, 16);
  Model m(small_model(), 8);
  auto r = Trainer(m, data, small_train(1000), TrainMode::kNA).run();
  CHECK(r.exhausted);
  CHECK(r.steps_completed < 1000);
  CHECK(has_event(r.log, "exhausted"));
}

TEST_CASE("checkpoints land on disk when a directory is set") {
  const auto dir = std::filesystem::temp_directory_path() / "fbi_trainer_ckpts";
  std::filesystem::remove_all(dir);
  Model m(small_model(), 10);
  auto cfg = small_train(20);
  cfg.checkpoint_dir = dir.string();
  auto r = Trainer(m, small_data(), cfg, TrainMode::kNA).run();
  CHECK(std::filesystem::exists(dir / "step_00000010.fbic"));
  CHECK(std::filesystem::exists(dir / "step_00000020.fbic"));
  auto on_disk = load_checkpoint(dir / "step_00000020.fbic");
  CHECK(encode_checkpoint(on_disk) == encode_checkpoint(r.final_checkpoint));
  std::filesystem::remove_all(dir);
}

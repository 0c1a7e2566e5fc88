// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0
//
// Pretraining loop over a chunked dataset.
//
// Chunks are visited in a seed-determined order (reshuffled per epoch) and
// each chunk is cut into non-overlapping seq_len windows, shuffled by
// (seed, epoch, chunk). A batch never spans two chunks; a chunk's leftover
// windows that do not fill a batch are dropped.
//
// Loss spikes: a step is suspect when its loss exceeds factor x the median of
// the last `window` accepted losses (only once that many are available). A
// run of `patience` suspect steps, or any non-finite loss or gradient norm,
// is a spike. Every chunk touched by the spiking run is added to the skip
// set, and training resumes from the newest retained checkpoint that never
// consumed a skipped chunk. Skipped chunks are never revisited.

#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fbi/data.hpp"
#include "fbi/distill.hpp"
#include "fbi/metrics.hpp"
#include "fbi/model.hpp"
#include "fbi/optim.hpp"
#include "fbi/serialize.hpp"

namespace fbi {

struct SpikeRule {
  std::size_t window = 100;
  double factor = 3.0;
  std::size_t patience = 2;
};

class SpikeDetector {
 public:
  enum class Verdict : std::uint8_t { kOk, kSuspect, kSpike };

  explicit SpikeDetector(SpikeRule rule = {}) : rule_(rule) {}

  Verdict observe(double loss);
  double median() const;
  const std::deque<float>& history() const { return history_; }
  std::size_t streak() const { return streak_; }
  // Replaces the accepted-loss window and clears the suspect streak.
  void restore(std::vector<float> history);

 private:
  SpikeRule rule_;
  std::deque<float> history_;
  std::size_t streak_ = 0;
};

enum class TrainMode : std::uint8_t { kAD, kNA };

std::string_view mode_name(TrainMode mode);
TrainMode parse_mode(std::string_view name);

struct TrainConfig {
  double peak_lr = 3e-4;
  double final_lr = 3e-5;
  std::size_t warmup_steps = 2000;
  std::size_t total_steps = 20000;
  float adam_beta1 = 0.9f;
  float adam_beta2 = 0.98f;
  float adam_eps = 1e-8f;
  double clip_norm = 1.0;
  std::size_t batch_tokens = 8192;
  std::size_t seq_len = 256;
  std::uint64_t seed = 0;
  SpikeRule spike;
  std::size_t checkpoint_every = 500;
  std::size_t keep_checkpoints = 4;
  std::size_t ff_interval = 10;
  std::size_t epochs = 1;
  std::string checkpoint_dir;  // empty keeps checkpoints in memory only

  // Throws ConfigError naming the violated constraint.
  void validate() const;
  std::size_t batch_size() const { return batch_tokens / seq_len; }
  LrSchedule schedule() const { return {peak_lr, final_lr, warmup_steps, total_steps}; }
  AdamConfig adam() const { return {adam_beta1, adam_beta2, adam_eps}; }

  KvMap to_kv(std::string_view prefix = "train.") const;
  static TrainConfig from_kv(const KvMap& kv, std::string_view prefix = "train.");
};

struct TrainLogRow {
  std::size_t step = 0;
  std::optional<double> loss;
  std::optional<double> lr;
  std::optional<double> grad_norm_preclip;
  std::optional<double> ff_ratio;
  std::optional<std::size_t> chunk_id;
  std::string event;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;

  static constexpr const char* kCsvHeader =
      "step,loss,lr,grad_norm_preclip,ff_ratio,chunk_id,event";
  // `preamble` lines are emitted first, each prefixed with "# ".
  void write_csv(std::ostream& out, const std::vector<std::string>& preamble = {}) const;
  std::string csv(const std::vector<std::string>& preamble = {}) const;
};

struct TrainResult {
  TrainLog log;
  Checkpoint final_checkpoint;
  std::size_t steps_completed = 0;
  std::size_t rollbacks = 0;
  bool exhausted = false;
  std::vector<std::size_t> skipped_chunks;
  // Chunk feeding each update that survives in the final weights, in order.
  std::vector<std::size_t> retained_chunks;
};

class Trainer {
 public:
  // `teacher` is required for TrainMode::kAD. The student and dataset must
  // outlive the trainer.
  Trainer(Model& student, const ChunkedDataset& data, TrainConfig cfg, TrainMode mode,
          TeacherFn teacher = {});

  // Restores parameters, optimizer moments and loop state.
  void resume(const Checkpoint& ckpt);

  // Called after every retained checkpoint with the step count.
  void on_checkpoint(std::function<void(std::size_t, const Model&)> hook) {
    checkpoint_hook_ = std::move(hook);
  }
  // Called before each step is computed with the step about to run (1-based).
  void on_before_step(std::function<void(std::size_t, Model&)> hook) {
    before_step_hook_ = std::move(hook);
  }
  // Called for every row appended to the log.
  void on_log(std::function<void(const TrainLogRow&)> hook) { log_hook_ = std::move(hook); }

  TrainResult run();

  // Full training state at the current step.
  Checkpoint snapshot() const;
  std::size_t step() const { return step_; }

 private:
  struct Cursor {
    std::size_t order_pos = 0;
    std::size_t batch = 0;
  };
  struct Pending {
    std::size_t chunk = 0;
    TokenBatch tokens;
  };

  std::optional<Pending> next_batch();
  std::vector<std::size_t> window_order(std::size_t order_pos, std::size_t chunk) const;
  void emit(TrainLogRow row);
  void save(Checkpoint ckpt);
  void restore(const Checkpoint& ckpt);
  void rollback(const std::vector<std::size_t>& streak_chunks, std::size_t chunk);
  std::set<std::size_t> consumed_chunks() const;

  Model& student_;
  const ChunkedDataset& data_;
  TrainConfig cfg_;
  TrainMode mode_;
  TeacherFn teacher_;
  std::vector<NamedTensor> trainables_;
  Adam adam_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t chunks_per_epoch_ = 0;

  std::size_t step_ = 0;
  Cursor cursor_;
  SpikeDetector detector_;
  std::set<std::size_t> skipped_;
  // Run-length (chunk, updates) history of retained updates.
  std::vector<std::pair<std::size_t, std::size_t>> lineage_;
  SignSnapshot ff_snapshot_;

  std::deque<Checkpoint> ring_;
  TrainResult result_;
  std::function<void(std::size_t, const Model&)> checkpoint_hook_;
  std::function<void(std::size_t, Model&)> before_step_hook_;
  std::function<void(const TrainLogRow&)> log_hook_;
};

}  // namespace fbi

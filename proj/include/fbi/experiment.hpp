// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0
//
// Toy-scale experiment drivers. Every CSV starts with "# " preamble lines
// recording seed list, corpus hash and configuration hash.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fbi/data.hpp"
#include "fbi/distill.hpp"
#include "fbi/model.hpp"
#include "fbi/trainer.hpp"

namespace fbi {

struct ExperimentSetup {
  const ChunkedDataset* train = nullptr;
  std::span<const std::int32_t> heldout;
  ModelConfig student;
  TrainConfig train_cfg;
  std::uint64_t corpus_hash = 0;
  std::size_t eval_batch = 8;
  // Progress lines ("ablate seed=1 mode=ad step=500 ppl=...") go here when set.
  std::function<void(const std::string&)> progress;
};

// fnv1a64 over the key=value rendering of both configurations.
std::uint64_t config_hash(const ModelConfig& model, const TrainConfig& train);

struct AblationRow {
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::kAD;
  std::size_t step = 0;
  double perplexity = 0.0;
  double avg_loss = 0.0;  // mean training loss since the previous row; 0 at step 0
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::vector<std::string> preamble;

  // Row with the largest step for (seed, mode).
  const AblationRow& final_row(std::uint64_t seed, TrainMode mode) const;
  // Step-0 row (random initialization) for (seed, mode).
  const AblationRow& initial_row(std::uint64_t seed, TrainMode mode) const;
  std::string csv() const;
};

// Trains an AD and an NA binarized student per seed from the same
// initialization and evaluates held-out perplexity at every checkpoint.
// Throws ConfigError when the teacher is missing or its vocabulary differs.
AblationResult ablate_ad_vs_na(const ExperimentSetup& setup, const Model* teacher,
                               std::span<const std::uint64_t> seeds);

struct InitTraceRow {
  std::uint64_t seed = 0;
  bool pretrained = false;
  std::size_t step = 0;
  double loss = 0.0;
  double grad_norm_preclip = 0.0;
  double ff_ratio = 0.0;
};

struct CompareInitResult {
  std::vector<InitTraceRow> rows;
  std::vector<std::string> preamble;

  // Mean FF ratio over the first `steps` steps of one run.
  double mean_ff(std::uint64_t seed, bool pretrained, std::size_t steps) const;
  std::string csv() const;
};

// Trains binarized students from random initialization and from the
// full-precision twin's weights with a per-step FF snapshot. Uses the AD
// objective when `teacher` is set and NA otherwise. Throws ConfigError if the
// twin's topology differs from setup.student.
CompareInitResult compare_init(const ExperimentSetup& setup, const Model& twin,
                               std::span<const std::uint64_t> seeds, TeacherFn teacher = {});

struct TrainLogSummary {
  std::size_t steps = 0;
  double first_loss = 0.0;
  double last_loss = 0.0;
  double mean_ff_ratio = 0.0;
  double max_grad_norm = 0.0;
  std::size_t spikes = 0;
  std::size_t rollbacks = 0;
  std::size_t skipped_chunks = 0;
};

// Parses a train-log CSV (TrainLog::write_csv format).
TrainLogSummary summarize_train_log(std::string_view csv);
std::string render_summary(const TrainLogSummary& s);

// Storage and bit-width table for the toy and the three published configs.
std::string storage_table();

}  // namespace fbi

// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "fbi/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "fbi/errors.hpp"
#include "fbi/metrics.hpp"

namespace fbi {

std::uint64_t config_hash(const ModelConfig& model, const TrainConfig& train) {
  KvMap kv = model.to_kv();
  for (auto& [k, v] : train.to_kv()) kv[k] = v;
  return fnv1a64(format_kv(kv));
}

namespace {

std::vector<std::string> make_preamble(const char* kind, const ExperimentSetup& setup,
                                       std::span<const std::uint64_t> seeds) {
  std::string seed_list;
  for (auto s : seeds) seed_list += (seed_list.empty() ? "" : " ") + std::to_string(s);
  return {std::string("experiment=") + kind, "seeds=" + seed_list,
          "corpus_hash=" + hex64(setup.corpus_hash),
          "config_hash=" + hex64(config_hash(setup.student, setup.train_cfg))};
}

std::string with_preamble(const std::vector<std::string>& preamble) {
  std::string out;
  for (const auto& line : preamble) out += "# " + line + "\n";
  return out;
}

double heldout_ppl(const ExperimentSetup& setup, const Model& model) {
  return perplexity(model, setup.heldout, setup.train_cfg.seq_len, setup.eval_batch).perplexity;
}

}  // namespace

const AblationRow& AblationResult::final_row(std::uint64_t seed, TrainMode mode) const {
  const AblationRow* best = nullptr;
  for (const auto& r : rows) {
    if (r.seed == seed && r.mode == mode && (!best || r.step >= best->step)) best = &r;
  }
  if (!best) throw ContractError("ablation has no rows for seed " + std::to_string(seed));
  return *best;
}

const AblationRow& AblationResult::initial_row(std::uint64_t seed, TrainMode mode) const {
  for (const auto& r : rows) {
    if (r.seed == seed && r.mode == mode && r.step == 0) return r;
  }
  throw ContractError("ablation has no step-0 row for seed " + std::to_string(seed));
}

std::string AblationResult::csv() const {
  std::string out = with_preamble(preamble) + "seed,mode,step,ppl,avg_loss\n";
  for (const auto& r : rows) {
    out += std::to_string(r.seed) + "," + std::string(mode_name(r.mode)) + "," +
           std::to_string(r.step) + "," + exact_str(r.perplexity) + "," + exact_str(r.avg_loss) +
           "\n";
  }
  return out;
}

AblationResult ablate_ad_vs_na(const ExperimentSetup& setup, const Model* teacher,
                               std::span<const std::uint64_t> seeds) {
  if (!teacher) throw ConfigError("ablate: a trained full-precision teacher is required");
  if (!setup.train) throw ContractError("ablate: no training dataset");
  ModelConfig student_cfg = setup.student;
  student_cfg.binarize = true;
  const TeacherFn teach = model_teacher(*teacher, student_cfg.vocab_size);

  AblationResult result;
  result.preamble = make_preamble("ablate_ad_vs_na", setup, seeds);
  for (auto seed : seeds) {
    for (TrainMode mode : {TrainMode::kAD, TrainMode::kNA}) {
      Model student(student_cfg, seed);
      TrainConfig cfg = setup.train_cfg;
      cfg.seed = seed;
      result.rows.push_back({seed, mode, 0, heldout_ppl(setup, student), 0.0});

      Trainer trainer(student, *setup.train, cfg, mode,
                      mode == TrainMode::kAD ? teach : TeacherFn{});
      double loss_sum = 0.0;
      std::size_t loss_n = 0;
      trainer.on_log([&](const TrainLogRow& row) {
        if (row.loss && std::isfinite(*row.loss) && row.event.find("spike") == std::string::npos) {
          loss_sum += *row.loss;
          ++loss_n;
        }
      });
      auto record = [&](std::size_t step, const Model& m) {
        AblationRow row{seed, mode, step, heldout_ppl(setup, m),
                        loss_n ? loss_sum / static_cast<double>(loss_n) : 0.0};
        loss_sum = 0.0;
        loss_n = 0;
        if (setup.progress) {
          char buf[160];
          std::snprintf(buf, sizeof buf, "ablate seed=%llu mode=%s step=%zu ppl=%.4f",
                        static_cast<unsigned long long>(seed), std::string(mode_name(mode)).c_str(),
                        step, row.perplexity);
          setup.progress(buf);
        }
        result.rows.push_back(row);
      };
      trainer.on_checkpoint(record);
      const TrainResult tr = trainer.run();
      if (tr.steps_completed % cfg.checkpoint_every != 0) record(tr.steps_completed, student);
    }
  }
  return result;
}

double CompareInitResult::mean_ff(std::uint64_t seed, bool pretrained, std::size_t steps) const {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (r.seed == seed && r.pretrained == pretrained && r.step >= 1 && r.step <= steps) {
      total += r.ff_ratio;
      ++n;
    }
  }
  if (n == 0) throw ContractError("compare_init: no trace rows for the requested run");
  return total / static_cast<double>(n);
}

std::string CompareInitResult::csv() const {
  std::string out = with_preamble(preamble) + "seed,init,step,loss,grad_norm_preclip,ff_ratio\n";
  for (const auto& r : rows) {
    out += std::to_string(r.seed) + "," + (r.pretrained ? "pretrained" : "random") + "," +
           std::to_string(r.step) + "," + exact_str(r.loss) + "," + exact_str(r.grad_norm_preclip) +
           "," + exact_str(r.ff_ratio) + "\n";
  }
  return out;
}

CompareInitResult compare_init(const ExperimentSetup& setup, const Model& twin,
                               std::span<const std::uint64_t> seeds, TeacherFn teacher) {
  if (!setup.train) throw ContractError("compare_init: no training dataset");
  ModelConfig student_cfg = setup.student;
  student_cfg.binarize = true;
  ModelConfig twin_cfg = twin.config();
  twin_cfg.binarize = true;
  if (census_for(twin_cfg) != census_for(student_cfg) ||
      twin_cfg.n_heads != student_cfg.n_heads) {
    throw ConfigError("compare_init: pretrained twin topology differs from the student config");
  }

  CompareInitResult result;
  TrainConfig cfg = setup.train_cfg;
  cfg.ff_interval = 1;
  ExperimentSetup hashed = setup;
  hashed.train_cfg = cfg;
  result.preamble = make_preamble("compare_init", hashed, seeds);
  const TrainMode mode = teacher ? TrainMode::kAD : TrainMode::kNA;
  for (auto seed : seeds) {
    for (bool pretrained : {false, true}) {
      Model student = pretrained ? Model::binarized_from(twin) : Model(student_cfg, seed);
      cfg.seed = seed;
      Trainer trainer(student, *setup.train, cfg, mode, teacher);
      trainer.on_log([&](const TrainLogRow& row) {
        if (!row.loss || !row.ff_ratio) return;
        result.rows.push_back({seed, pretrained, row.step, *row.loss,
                               row.grad_norm_preclip.value_or(0.0), *row.ff_ratio});
      });
      trainer.run();
      if (setup.progress) {
        setup.progress("compare_init seed=" + std::to_string(seed) +
                       (pretrained ? " init=pretrained" : " init=random") + " done");
      }
    }
  }
  return result;
}

TrainLogSummary summarize_train_log(std::string_view csv) {
  TrainLogSummary s;
  double ff_total = 0.0;
  std::size_t ff_n = 0;
  bool header_seen = false;
  std::size_t line_no = 0;
  while (!csv.empty()) {
    ++line_no;
    const auto nl = csv.find('\n');
    std::string line(csv.substr(0, nl));
    csv = nl == std::string_view::npos ? std::string_view{} : csv.substr(nl + 1);
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != TrainLog::kCsvHeader) {
        throw InputError("train log: unexpected header '" + line + "'");
      }
      header_seen = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 7) throw InputError("train log: line " + std::to_string(line_no) + " has " + std::to_string(f.size()) + " fields");
    const std::string& event = f[6];
    if (event.find("spike") != std::string::npos) ++s.spikes;
    if (event == "rollback") ++s.rollbacks;
    if (event == "skip") ++s.skipped_chunks;
    if (f[1].empty() || event.find("spike") != std::string::npos) continue;
    const double loss = std::stod(f[1]);
    if (s.steps == 0) s.first_loss = loss;
    s.last_loss = loss;
    ++s.steps;
    if (!f[3].empty()) s.max_grad_norm = std::max(s.max_grad_norm, std::stod(f[3]));
    if (!f[4].empty()) {
      ff_total += std::stod(f[4]);
      ++ff_n;
    }
  }
  if (!header_seen) throw InputError("train log: missing CSV header");
  s.mean_ff_ratio = ff_n ? ff_total / static_cast<double>(ff_n) : 0.0;
  return s;
}

std::string render_summary(const TrainLogSummary& s) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "logged steps        %zu\n"
                "loss first/last     %.4f / %.4f\n"
                "mean FF ratio       %.6g\n"
                "max pre-clip norm   %.4f\n"
                "spikes              %zu\n"
                "rollbacks           %zu\n"
                "skipped chunks      %zu\n",
                s.steps, s.first_loss, s.last_loss, s.mean_ff_ratio, s.max_grad_norm, s.spikes,
                s.rollbacks, s.skipped_chunks);
  return buf;
}

std::string storage_table() {
  struct Entry {
    const char* label;
    ModelConfig cfg;
  };
  const Entry entries[] = {{"toy", ModelConfig::toy()},
                           {"130M", ModelConfig::fbi_130m()},
                           {"1.3B", ModelConfig::fbi_1_3b()},
                           {"7B", ModelConfig::fbi_7b()}};
  std::string out =
      "config  params          16-bit GiB  binarized GiB  compression  extra params  "
      "bit-width(body)   bit-width(strict)\n";
  for (const auto& e : entries) {
    const StorageReport r = storage_report(e.cfg, CensusMode::kDecoderBody);
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-7s %-15zu %-11.4f %-14.4f %-12.2f %-13.4f %-17.4f %.4f\n",
                  e.label, r.census.total(), to_gib(r.full_bytes), to_gib(r.binarized_bytes),
                  100.0 * r.compression_ratio, 100.0 * r.extra_parameter_ratio, r.avg_bitwidth,
                  avg_bitwidth(e.cfg, CensusMode::kStrict));
    out += buf;
  }
  return out;
}

}  // namespace fbi

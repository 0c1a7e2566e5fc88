// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0
//
// fbi: command-line driver for tokenization, training, evaluation, packing
// and the toy experiments.
//
// Exit codes: 0 success, 1 contract/config error, 2 I/O error, 3 training
// aborted by an unrecoverable loss spike.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fbi/bitpack.hpp"
#include "fbi/data.hpp"
#include "fbi/distill.hpp"
#include "fbi/errors.hpp"
#include "fbi/experiment.hpp"
#include "fbi/metrics.hpp"
#include "fbi/model.hpp"
#include "fbi/runtime.hpp"
#include "fbi/serialize.hpp"
#include "fbi/trainer.hpp"

namespace fs = std::filesystem;
using namespace fbi;

namespace {

// Values given on the command line; unset options leave the file/default.
struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  std::optional<std::size_t> warmup;
  std::optional<double> lr;
  std::optional<double> final_lr;
  std::optional<std::size_t> batch_tokens;
  std::optional<std::size_t> seq_len;
  std::optional<std::size_t> checkpoint_every;
  std::optional<std::size_t> ff_interval;
  std::optional<std::size_t> epochs;
  std::string checkpoint_dir;
};

void add_config_options(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "key=value or JSON configuration file");
  cmd->add_option("--seed", o.seed, "random seed (train.seed)");
  cmd->add_option("--steps", o.steps, "total optimizer steps (train.total_steps)");
  cmd->add_option("--warmup", o.warmup, "warmup steps (train.warmup_steps)");
  cmd->add_option("--lr", o.lr, "peak learning rate (train.peak_lr)");
  cmd->add_option("--final-lr", o.final_lr, "final learning rate (train.final_lr)");
  cmd->add_option("--batch-tokens", o.batch_tokens, "tokens per step (train.batch_tokens)");
  cmd->add_option("--seq-len", o.seq_len, "window length (train.seq_len)");
  cmd->add_option("--checkpoint-every", o.checkpoint_every, "steps between checkpoints");
  cmd->add_option("--ff-interval", o.ff_interval, "steps between sign snapshots");
  cmd->add_option("--epochs", o.epochs, "passes over the chunk list");
  cmd->add_option("--checkpoint-dir", o.checkpoint_dir, "also write checkpoints here");
}

std::set<std::string> known_keys() {
  std::set<std::string> keys;
  for (auto& [k, v] : ModelConfig{}.to_kv()) keys.insert(k);
  for (auto& [k, v] : TrainConfig{}.to_kv()) keys.insert(k);
  keys.insert("train.checkpoint_dir");
  keys.insert("train.mode");
  return keys;
}

// Built-in default < config file < command-line flag.
KvMap effective_config(const Overrides& o, KvMap base = {}) {
  KvMap kv = std::move(base);
  if (!o.config_path.empty()) {
    const KvMap file = parse_config_text(read_file_bytes(o.config_path));
    const auto keys = known_keys();
    for (const auto& [k, v] : file) {
      if (!keys.contains(k)) throw ConfigError("config: unknown key '" + k + "'");
      kv[k] = v;
    }
  }
  auto set = [&kv](const char* key, const auto& value) {
    if (!value) return;
    if constexpr (std::is_floating_point_v<std::decay_t<decltype(*value)>>) {
      kv[key] = exact_str(*value);
    } else {
      kv[key] = std::to_string(*value);
    }
  };
  set("train.seed", o.seed);
  set("train.total_steps", o.steps);
  set("train.warmup_steps", o.warmup);
  set("train.peak_lr", o.lr);
  set("train.final_lr", o.final_lr);
  set("train.batch_tokens", o.batch_tokens);
  set("train.seq_len", o.seq_len);
  set("train.checkpoint_every", o.checkpoint_every);
  set("train.ff_interval", o.ff_interval);
  set("train.epochs", o.epochs);
  if (!o.checkpoint_dir.empty()) kv["train.checkpoint_dir"] = o.checkpoint_dir;
  return kv;
}

std::uint64_t dataset_hash(const fs::path& dir) {
  const KvMap manifest = parse_kv(read_file_bytes(dir / "manifest.txt"));
  const std::string h = kv_string(manifest, "corpus_hash", "0");
  return std::stoull(h, nullptr, 16);
}

void print_header(const std::string& command, std::uint64_t seed, const ModelConfig& model,
                  const TrainConfig& train, std::uint64_t corpus_hash) {
  std::cout << "# fbi " << command << " seed=" << seed
            << " config_hash=" << hex64(config_hash(model, train))
            << " corpus_hash=" << hex64(corpus_hash) << "\n";
  KvMap kv = model.to_kv();
  for (auto& [k, v] : train.to_kv()) kv[k] = v;
  for (auto& [k, v] : kv) std::cout << "# " << k << "=" << v << "\n";
  std::cout.flush();
}

std::vector<std::string> log_preamble(const std::string& command, const ModelConfig& model,
                                      const TrainConfig& train, std::uint64_t corpus_hash) {
  return {"fbi " + command, "seed=" + std::to_string(train.seed),
          "config_hash=" + hex64(config_hash(model, train)),
          "corpus_hash=" + hex64(corpus_hash)};
}

std::vector<std::uint64_t> parse_seeds(const std::string& list) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      seeds.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ConfigError("--seeds expects a comma-separated list of integers");
    }
  }
  if (seeds.empty()) throw ConfigError("--seeds must name at least one seed");
  return seeds;
}

std::vector<std::int32_t> heldout_tokens(const std::string& path) {
  auto tokens = Tokenizer{}.encode_documents(read_file_bytes(path));
  if (tokens.size() < 2) throw InputError("held-out file " + path + " is too short to evaluate");
  return tokens;
}

void progress_hook(Trainer& trainer, std::size_t every) {
  if (every == 0) return;
  trainer.on_log([every](const TrainLogRow& r) {
    const bool periodic = r.loss && r.step % every == 0 && r.event.find("suspect") == std::string::npos;
    const bool special = !r.event.empty() && r.event != "checkpoint";
    if (!periodic && !special) return;
    std::fprintf(stderr, "step %zu", r.step);
    if (r.loss) std::fprintf(stderr, " loss %.4f", *r.loss);
    if (r.lr) std::fprintf(stderr, " lr %.3g", *r.lr);
    if (r.grad_norm_preclip) std::fprintf(stderr, " gnorm %.3f", *r.grad_norm_preclip);
    if (r.chunk_id) std::fprintf(stderr, " chunk %zu", *r.chunk_id);
    if (!r.event.empty()) std::fprintf(stderr, " [%s]", r.event.c_str());
    std::fprintf(stderr, "\n");
  });
}

void write_log(const std::string& path, const TrainLog& log, const std::vector<std::string>& pre) {
  if (path.empty()) return;
  write_file_bytes(path, log.csv(pre));
}

// --- commands ------------------------------------------------------------------

struct TrainArgs {
  Overrides o;
  std::string data;
  std::string out;
  std::string log;
  std::string teacher;
  std::string resume;
  std::string mode = "ad";
  std::size_t progress = 100;
};

int run_training(const TrainArgs& a, bool teacher_run) {
  const TrainMode mode = teacher_run ? TrainMode::kNA : parse_mode(a.mode);
  if (mode == TrainMode::kAD && a.teacher.empty()) {
    throw ConfigError("train --mode ad requires --teacher <checkpoint>");
  }
  KvMap base;
  std::optional<Checkpoint> resume;
  if (!a.resume.empty()) {
    resume = load_checkpoint(a.resume);
    base = resume->meta;
  }
  KvMap kv = effective_config(a.o, base);
  ModelConfig mcfg = ModelConfig::from_kv(kv);
  mcfg.binarize = !teacher_run;
  TrainConfig tcfg = TrainConfig::from_kv(kv);
  tcfg.validate();
  const ChunkedDataset data = ChunkedDataset::open(a.data);
  const std::uint64_t corpus = dataset_hash(a.data);
  const std::string command = teacher_run ? "train-teacher" : "train --mode " + a.mode;
  print_header(command, tcfg.seed, mcfg, tcfg, corpus);

  std::optional<Model> teacher;
  TeacherFn teach;
  if (mode == TrainMode::kAD) {
    teacher = model_from_checkpoint(load_checkpoint(a.teacher));
    teach = model_teacher(*teacher, mcfg.vocab_size);
  }
  Model student(mcfg, tcfg.seed);
  Trainer trainer(student, data, tcfg, mode, teach);
  if (resume) trainer.resume(*resume);
  progress_hook(trainer, a.progress);
  const TrainResult result = trainer.run();
  if (!a.out.empty()) save_checkpoint(result.final_checkpoint, a.out);
  write_log(a.log, result.log, log_preamble(command, mcfg, tcfg, corpus));
  std::cout << "steps " << result.steps_completed << " rollbacks " << result.rollbacks
            << " skipped_chunks " << result.skipped_chunks.size()
            << (result.exhausted ? " (dataset exhausted)" : "") << "\n";
  return 0;
}

LogitsFn logits_source(const std::string& model_path, const std::string& packed_path,
                       std::optional<Model>& model, std::optional<PackedModel>& packed,
                       ModelConfig& cfg) {
  if (!packed_path.empty()) {
    packed = import_packed(packed_path);
    cfg = packed->config();
    return [&packed](const TokenBatch& tb) { return packed->forward_logits(tb); };
  }
  if (model_path.empty()) throw ConfigError("give --model <checkpoint> or --packed <file>");
  model = model_from_checkpoint(load_checkpoint(model_path));
  cfg = model->config();
  return [&model](const TokenBatch& tb) {
    NoGradGuard no_grad;
    return model->forward_logits(tb);
  };
}

int dispatch(int argc, char** argv) {
  CLI::App app{"fbi: fully binarized transformer training and inference"};
  app.require_subcommand(1);

  // tokenize
  std::string corpus, out_dir;
  std::size_t tokens_per_chunk = 65536, tok_seq = 256;
  auto* tokenize = app.add_subcommand("tokenize", "split a text corpus into token chunks");
  tokenize->add_option("--corpus", corpus, "UTF-8 or binary text file")->required();
  tokenize->add_option("--out", out_dir, "output directory")->required();
  tokenize->add_option("--tokens-per-chunk", tokens_per_chunk, "tokens per chunk file");
  tokenize->add_option("--seq-len", tok_seq, "training window length");

  // train-teacher / train
  TrainArgs teacher_args, train_args;
  auto* train_teacher = app.add_subcommand("train-teacher", "train a full-precision model (NA)");
  add_config_options(train_teacher, teacher_args.o);
  train_teacher->add_option("--data", teacher_args.data, "chunk directory")->required();
  train_teacher->add_option("--out", teacher_args.out, "final checkpoint path");
  train_teacher->add_option("--log", teacher_args.log, "train log CSV path");
  train_teacher->add_option("--resume", teacher_args.resume, "checkpoint to continue from");
  train_teacher->add_option("--progress", teacher_args.progress, "print every N steps (0: quiet)");

  auto* train = app.add_subcommand("train", "train a binarized model (AD or NA)");
  add_config_options(train, train_args.o);
  train->add_option("--data", train_args.data, "chunk directory")->required();
  train->add_option("--mode", train_args.mode, "ad or na");
  train->add_option("--teacher", train_args.teacher, "teacher checkpoint (mode ad)");
  train->add_option("--resume", train_args.resume, "checkpoint to continue from");
  train->add_option("--out", train_args.out, "final checkpoint path");
  train->add_option("--log", train_args.log, "train log CSV path");
  train->add_option("--progress", train_args.progress, "print every N steps (0: quiet)");

  // eval
  std::string eval_model, eval_packed, eval_text;
  std::size_t eval_seq = 256, eval_batch = 8;
  bool eval_uniform = false;
  auto* eval = app.add_subcommand("eval", "held-out perplexity");
  eval->add_option("--model", eval_model, "dense checkpoint");
  eval->add_option("--packed", eval_packed, "packed model file");
  eval->add_flag("--uniform", eval_uniform, "score the uniform-logit reference model");
  eval->add_option("--text", eval_text, "held-out text file")->required();
  eval->add_option("--seq-len", eval_seq, "evaluation window length");
  eval->add_option("--batch", eval_batch, "windows per forward pass");

  // pack / unpack-check
  std::string pack_model, pack_out;
  auto* pack_cmd = app.add_subcommand("pack", "export a binarized checkpoint as FBIP1");
  pack_cmd->add_option("--model", pack_model, "binarized checkpoint")->required();
  pack_cmd->add_option("--out", pack_out, "packed output file")->required();

  std::string check_model, check_packed, check_text;
  std::size_t check_seq = 64;
  std::uint64_t check_seed = 0;
  auto* unpack_check = app.add_subcommand("unpack-check", "compare packed and dense logits");
  unpack_check->add_option("--model", check_model, "binarized checkpoint")->required();
  unpack_check->add_option("--packed", check_packed, "packed file")->required();
  unpack_check->add_option("--text", check_text, "text to score (random tokens otherwise)");
  unpack_check->add_option("--seq-len", check_seq, "tokens compared");
  unpack_check->add_option("--seed", check_seed, "seed for random tokens");

  // bench
  std::size_t bench_m = 1024, bench_n = 1024, bench_reps = 20;
  std::uint64_t bench_seed = 0;
  std::string bench_packed;
  auto* bench_cmd = app.add_subcommand("bench", "packed vs dense matvec timing (CSV)");
  bench_cmd->add_option("--m", bench_m, "input features");
  bench_cmd->add_option("--n", bench_n, "output features");
  bench_cmd->add_option("--reps", bench_reps, "repetitions");
  bench_cmd->add_option("--seed", bench_seed, "seed for weights and input");
  bench_cmd->add_option("--packed", bench_packed, "bench every projection of a packed model");

  // report
  std::string report_log, report_config;
  bool report_strict = false;
  auto* report = app.add_subcommand("report", "bit-width, storage and training-log summaries");
  report->add_option("--log", report_log, "train log CSV to summarize");
  report->add_option("--config", report_config, "model configuration to account for");
  report->add_flag("--strict", report_strict, "count embedding and head in the bit-width");

  // ablate / compare-init
  TrainArgs exp_args;
  std::string exp_heldout, exp_seeds = "1,2,3", exp_out, exp_twin;
  auto* ablate = app.add_subcommand("ablate", "AD vs NA binarized students per seed");
  add_config_options(ablate, exp_args.o);
  ablate->add_option("--data", exp_args.data, "chunk directory")->required();
  ablate->add_option("--heldout", exp_heldout, "held-out text file")->required();
  ablate->add_option("--teacher", exp_args.teacher, "teacher checkpoint")->required();
  ablate->add_option("--seeds", exp_seeds, "comma-separated seeds");
  ablate->add_option("--out", exp_out, "CSV output path")->required();

  auto* cmp = app.add_subcommand("compare-init", "random vs pretrained-twin initialization");
  add_config_options(cmp, exp_args.o);
  cmp->add_option("--data", exp_args.data, "chunk directory")->required();
  cmp->add_option("--twin", exp_twin, "full-precision pretrained checkpoint")->required();
  cmp->add_option("--teacher", exp_args.teacher, "optional teacher (AD objective)");
  cmp->add_option("--seeds", exp_seeds, "comma-separated seeds");
  cmp->add_option("--out", exp_out, "CSV output path")->required();

  // generate
  std::string gen_model, gen_packed, gen_prompt;
  std::size_t gen_tokens = 200;
  double gen_temperature = 0.0;
  std::uint64_t gen_seed = 0;
  auto* generate = app.add_subcommand("generate", "sample text from a dense or packed model");
  generate->add_option("--model", gen_model, "dense checkpoint");
  generate->add_option("--packed", gen_packed, "packed model file");
  generate->add_option("--prompt", gen_prompt, "prompt text");
  generate->add_option("--tokens", gen_tokens, "tokens to generate");
  generate->add_option("--temperature", gen_temperature, "0 for greedy decoding");
  generate->add_option("--seed", gen_seed, "sampling seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (*tokenize) {
    const ChunkedDataset ds = build_chunks(corpus, tokens_per_chunk, tok_seq, out_dir);
    std::cout << "# fbi tokenize corpus_hash=" << hex64(fnv1a64(read_file_bytes(corpus))) << "\n"
              << "chunks " << ds.size() << " tokens " << ds.total_tokens() << "\n";
    return 0;
  }
  if (*train_teacher) return run_training(teacher_args, true);
  if (*train) return run_training(train_args, false);

  if (*eval) {
    const auto tokens = heldout_tokens(eval_text);
    PerplexityResult r;
    if (eval_uniform) {
      r = perplexity(
          [](const TokenBatch& tb) { return Tensor::zeros({tb.batch, tb.seq, kByteVocab}); },
          tokens, eval_seq, eval_batch);
    } else {
      std::optional<Model> model;
      std::optional<PackedModel> packed;
      ModelConfig cfg;
      const LogitsFn fn = logits_source(eval_model, eval_packed, model, packed, cfg);
      r = perplexity(fn, tokens, std::min(eval_seq, cfg.max_seq_len), eval_batch);
    }
    std::printf("# fbi eval corpus_hash=%s\n", hex64(fnv1a64(read_file_bytes(eval_text))).c_str());
    std::printf("tokens %zu\nmean_nll %.6f\nperplexity %.6f\n", r.predicted_tokens, r.mean_nll,
                r.perplexity);
    return 0;
  }

  if (*pack_cmd) {
    const Model model = model_from_checkpoint(load_checkpoint(pack_model));
    export_packed(model, pack_out);
    const auto bytes = fs::file_size(pack_out);
    const StorageReport sr = storage_report(model.config());
    std::printf("packed %s bytes %llu storage_report_binarized_bytes %.0f\n", pack_out.c_str(),
                static_cast<unsigned long long>(bytes), sr.binarized_bytes);
    return 0;
  }

  if (*unpack_check) {
    const Model model = model_from_checkpoint(load_checkpoint(check_model));
    const PackedModel packed = import_packed(check_packed);
    std::vector<std::int32_t> ids;
    if (!check_text.empty()) {
      ids = heldout_tokens(check_text);
    } else {
      Rng rng(check_seed);
      for (std::size_t i = 0; i < check_seq; ++i) {
        ids.push_back(static_cast<std::int32_t>(rng.below(model.config().vocab_size)));
      }
    }
    const std::size_t len = std::min({ids.size(), check_seq, model.config().max_seq_len});
    const TokenBatch tb = TokenBatch::from_ids(1, len, std::span(ids).first(len));
    NoGradGuard no_grad;
    const Tensor dense = model.forward_logits(tb);
    const Tensor pk = packed.forward_logits(tb);
    if (dense.shape() != pk.shape()) throw ContractError("packed model topology differs");
    double max_diff = 0.0;
    for (std::size_t i = 0; i < dense.numel(); ++i) {
      max_diff = std::max(max_diff, std::abs(static_cast<double>(dense.at(i)) - pk.at(i)));
    }
    std::printf("positions %zu max_abs_diff %.3g\n", len, max_diff);
    if (max_diff > 1e-4) {
      std::fprintf(stderr, "fbi: packed logits deviate from dense by more than 1e-4\n");
      return 1;
    }
    return 0;
  }

  if (*bench_cmd) {
    std::cout << bench_csv_header() << "\n";
    if (!bench_packed.empty()) {
      const PackedModel pm = import_packed(bench_packed);
      for (std::size_t l = 0; l < pm.config().n_layers; ++l) {
        for (auto slot : kLinearSlots) {
          std::cout << bench_csv_row(bench(pm.linear(l, slot), bench_reps, bench_seed)) << "\n";
        }
      }
      return 0;
    }
    Rng rng(bench_seed);
    FbiLinearParams p = make_fbi_linear(bench_m, bench_n, rng, 0.02f);
    std::cout << bench_csv_row(bench(pack(p), bench_reps, bench_seed)) << "\n";
    return 0;
  }

  if (*report) {
    std::cout << storage_table();
    if (!report_config.empty()) {
      const ModelConfig cfg = ModelConfig::from_kv(parse_config_text(read_file_bytes(report_config)));
      cfg.validate();
      std::cout << "\n"
                << storage_summary(storage_report(
                       cfg, report_strict ? CensusMode::kStrict : CensusMode::kDecoderBody));
    }
    if (!report_log.empty()) {
      std::cout << "\n" << render_summary(summarize_train_log(read_file_bytes(report_log)));
    }
    return 0;
  }

  if (*ablate || *cmp) {
    const KvMap kv = effective_config(exp_args.o);
    ModelConfig mcfg = ModelConfig::from_kv(kv);
    TrainConfig tcfg = TrainConfig::from_kv(kv);
    tcfg.validate();
    const ChunkedDataset data = ChunkedDataset::open(exp_args.data);
    const auto seeds = parse_seeds(exp_seeds);
    ExperimentSetup setup;
    setup.train = &data;
    setup.train_cfg = tcfg;
    setup.corpus_hash = dataset_hash(exp_args.data);
    setup.progress = [](const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); };
    std::optional<Model> teacher;
    if (!exp_args.teacher.empty()) teacher = model_from_checkpoint(load_checkpoint(exp_args.teacher));
    if (*ablate) {
      const auto held = heldout_tokens(exp_heldout);
      setup.heldout = held;
      setup.student = mcfg;
      print_header("ablate", seeds.front(), mcfg, tcfg, setup.corpus_hash);
      const AblationResult r = ablate_ad_vs_na(setup, teacher ? &*teacher : nullptr, seeds);
      write_file_bytes(exp_out, r.csv());
      for (auto s : seeds) {
        std::printf("seed %llu ad_ppl %.4f na_ppl %.4f\n", static_cast<unsigned long long>(s),
                    r.final_row(s, TrainMode::kAD).perplexity,
                    r.final_row(s, TrainMode::kNA).perplexity);
      }
      return 0;
    }
    const Model twin = model_from_checkpoint(load_checkpoint(exp_twin));
    setup.student = twin.config();
    setup.student.binarize = true;
    print_header("compare-init", seeds.front(), setup.student, tcfg, setup.corpus_hash);
    TeacherFn teach;
    if (teacher) teach = model_teacher(*teacher, setup.student.vocab_size);
    const CompareInitResult r = compare_init(setup, twin, seeds, teach);
    write_file_bytes(exp_out, r.csv());
    const std::size_t window = std::min<std::size_t>(100, tcfg.total_steps);
    for (auto s : seeds) {
      std::printf("seed %llu mean_ff_random %.6g mean_ff_pretrained %.6g (first %zu steps)\n",
                  static_cast<unsigned long long>(s), r.mean_ff(s, false, window),
                  r.mean_ff(s, true, window), window);
    }
    return 0;
  }

  if (*generate) {
    std::optional<Model> model;
    std::optional<PackedModel> packed;
    ModelConfig cfg;
    const LogitsFn fn = logits_source(gen_model, gen_packed, model, packed, cfg);
    std::vector<std::int32_t> ids{kBosToken};
    for (auto id : Tokenizer{}.encode(gen_prompt)) ids.push_back(id);
    Rng rng(gen_seed);
    const std::size_t prompt_len = ids.size();
    for (std::size_t i = 0; i < gen_tokens; ++i) {
      const std::size_t ctx = std::min(ids.size(), cfg.max_seq_len);
      const auto window = std::span(ids).last(ctx);
      const TokenBatch tb = TokenBatch::from_ids(1, ctx, window);
      const Tensor logits = fn(tb);
      const auto last = logits.data().subspan((ctx - 1) * cfg.vocab_size, cfg.vocab_size);
      std::int32_t next = 0;
      if (gen_temperature <= 0.0) {
        next = static_cast<std::int32_t>(std::max_element(last.begin(), last.end()) - last.begin());
      } else {
        double mx = *std::max_element(last.begin(), last.end());
        std::vector<double> w(last.size());
        double total = 0.0;
        for (std::size_t v = 0; v < w.size(); ++v) {
          w[v] = std::exp((last[v] - mx) / gen_temperature);
          total += w[v];
        }
        double u = rng.uniform() * total;
        for (std::size_t v = 0; v < w.size(); ++v) {
          u -= w[v];
          if (u <= 0.0 || v + 1 == w.size()) {
            next = static_cast<std::int32_t>(v);
            break;
          }
        }
      }
      if (next == kEosToken) break;
      ids.push_back(next);
    }
    std::cout << gen_prompt
              << Tokenizer{}.decode(std::span(ids).subspan(prompt_len)) << "\n";
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  keep_freed_memory();
  try {
    return dispatch(argc, argv);
  } catch (const TrainingAborted& e) {
    std::fprintf(stderr, "fbi: training aborted: %s\n", e.what());
    return 3;
  } catch (const IoError& e) {
    std::fprintf(stderr, "fbi: I/O error: %s\n", e.what());
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "fbi: I/O error: %s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "fbi: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "fbi: %s\n", e.what());
    return 1;
  }
}

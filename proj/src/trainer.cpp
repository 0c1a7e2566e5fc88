// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "fbi/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <sstream>

#include "fbi/errors.hpp"

namespace fbi {

// --- spike detection ---------------------------------------------------------

SpikeDetector::Verdict SpikeDetector::observe(double loss) {
  if (!std::isfinite(loss)) {
    streak_ = 0;
    return Verdict::kSpike;
  }
  if (history_.size() >= rule_.window && loss > rule_.factor * median()) {
    if (++streak_ >= rule_.patience) {
      streak_ = 0;
      return Verdict::kSpike;
    }
    return Verdict::kSuspect;
  }
  streak_ = 0;
  history_.push_back(static_cast<float>(loss));
  while (history_.size() > rule_.window) history_.pop_front();
  return Verdict::kOk;
}

double SpikeDetector::median() const {
  if (history_.empty()) return 0.0;
  std::vector<float> v(history_.begin(), history_.end());
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

void SpikeDetector::restore(std::vector<float> history) {
  history_.assign(history.begin(), history.end());
  streak_ = 0;
}

// --- configuration ---------------------------------------------------------------

std::string_view mode_name(TrainMode mode) { return mode == TrainMode::kAD ? "ad" : "na"; }

TrainMode parse_mode(std::string_view name) {
  if (name == "ad") return TrainMode::kAD;
  if (name == "na") return TrainMode::kNA;
  throw ConfigError("mode must be 'ad' or 'na', got '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("train config: " + what); };
  if (!(peak_lr > 0.0)) fail("peak_lr must be > 0");
  if (!(final_lr > 0.0 && final_lr <= peak_lr)) fail("need 0 < final_lr <= peak_lr");
  if (total_steps == 0) fail("total_steps must be >= 1");
  if (warmup_steps >= total_steps) fail("warmup_steps must be < total_steps");
  if (!(clip_norm > 0.0)) fail("clip_norm must be > 0");
  if (seq_len < 2) fail("seq_len must be >= 2");
  if (batch_tokens < seq_len) fail("batch_tokens must be >= seq_len");
  if (checkpoint_every == 0 || ff_interval == 0) fail("checkpoint_every and ff_interval must be >= 1");
  if (checkpoint_every % ff_interval != 0) fail("checkpoint_every must be a multiple of ff_interval");
  if (keep_checkpoints == 0) fail("keep_checkpoints must be >= 1");
  if (epochs == 0) fail("epochs must be >= 1");
  if (spike.window == 0 || spike.patience == 0) fail("spike window and patience must be >= 1");
  if (!(spike.factor > 1.0)) fail("spike factor must be > 1");
}

KvMap TrainConfig::to_kv(std::string_view prefix) const {
  const std::string p(prefix);
  return {
      {p + "adam_beta1", exact_str(adam_beta1)},
      {p + "adam_beta2", exact_str(adam_beta2)},
      {p + "adam_eps", exact_str(adam_eps)},
      {p + "batch_tokens", std::to_string(batch_tokens)},
      {p + "checkpoint_every", std::to_string(checkpoint_every)},
      {p + "clip_norm", exact_str(clip_norm)},
      {p + "epochs", std::to_string(epochs)},
      {p + "ff_interval", std::to_string(ff_interval)},
      {p + "final_lr", exact_str(final_lr)},
      {p + "keep_checkpoints", std::to_string(keep_checkpoints)},
      {p + "peak_lr", exact_str(peak_lr)},
      {p + "seed", std::to_string(seed)},
      {p + "seq_len", std::to_string(seq_len)},
      {p + "spike.factor", exact_str(spike.factor)},
      {p + "spike.patience", std::to_string(spike.patience)},
      {p + "spike.window", std::to_string(spike.window)},
      {p + "total_steps", std::to_string(total_steps)},
      {p + "warmup_steps", std::to_string(warmup_steps)},
  };
}

TrainConfig TrainConfig::from_kv(const KvMap& kv, std::string_view prefix) {
  const std::string p(prefix);
  TrainConfig c;
  c.adam_beta1 = kv_float(kv, p + "adam_beta1", c.adam_beta1);
  c.adam_beta2 = kv_float(kv, p + "adam_beta2", c.adam_beta2);
  c.adam_eps = kv_float(kv, p + "adam_eps", c.adam_eps);
  c.batch_tokens = kv_size(kv, p + "batch_tokens", c.batch_tokens);
  c.checkpoint_every = kv_size(kv, p + "checkpoint_every", c.checkpoint_every);
  c.clip_norm = kv_double(kv, p + "clip_norm", c.clip_norm);
  c.epochs = kv_size(kv, p + "epochs", c.epochs);
  c.ff_interval = kv_size(kv, p + "ff_interval", c.ff_interval);
  c.final_lr = kv_double(kv, p + "final_lr", c.final_lr);
  c.keep_checkpoints = kv_size(kv, p + "keep_checkpoints", c.keep_checkpoints);
  c.peak_lr = kv_double(kv, p + "peak_lr", c.peak_lr);
  c.seed = kv_u64(kv, p + "seed", c.seed);
  c.seq_len = kv_size(kv, p + "seq_len", c.seq_len);
  c.spike.factor = kv_double(kv, p + "spike.factor", c.spike.factor);
  c.spike.patience = kv_size(kv, p + "spike.patience", c.spike.patience);
  c.spike.window = kv_size(kv, p + "spike.window", c.spike.window);
  c.total_steps = kv_size(kv, p + "total_steps", c.total_steps);
  c.warmup_steps = kv_size(kv, p + "warmup_steps", c.warmup_steps);
  c.checkpoint_dir = kv_string(kv, p + "checkpoint_dir", c.checkpoint_dir);
  return c;
}

// --- log ---------------------------------------------------------------------------

namespace {

template <typename V>
std::string opt_str(const std::optional<V>& v) {
  if (!v) return {};
  if constexpr (std::is_floating_point_v<V>) {
    return exact_str(*v);
  } else {
    return std::to_string(*v);
  }
}

}  // namespace

void TrainLog::write_csv(std::ostream& out, const std::vector<std::string>& preamble) const {
  for (const auto& line : preamble) out << "# " << line << '\n';
  out << kCsvHeader << '\n';
  for (const auto& r : rows) {
    out << r.step << ',' << opt_str(r.loss) << ',' << opt_str(r.lr) << ','
        << opt_str(r.grad_norm_preclip) << ',' << opt_str(r.ff_ratio) << ','
        << opt_str(r.chunk_id) << ',' << r.event << '\n';
  }
}

std::string TrainLog::csv(const std::vector<std::string>& preamble) const {
  std::ostringstream os;
  write_csv(os, preamble);
  return os.str();
}

// --- trainer ------------------------------------------------------------------------

namespace {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string join_floats(const std::deque<float>& v) {
  std::string s;
  for (float x : v) {
    if (!s.empty()) s += ',';
    s += exact_str(x);
  }
  return s;
}

std::vector<float> split_floats(const std::string& s) {
  std::vector<float> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    auto next = s.find(',', pos);
    if (next == std::string::npos) next = s.size();
    out.push_back(std::stof(s.substr(pos, next - pos)));
    pos = next + 1;
  }
  return out;
}

std::string join_lineage(const std::vector<std::pair<std::size_t, std::size_t>>& lineage) {
  std::string s;
  for (auto [chunk, n] : lineage) {
    if (!s.empty()) s += ',';
    s += std::to_string(chunk) + ':' + std::to_string(n);
  }
  return s;
}

std::vector<std::pair<std::size_t, std::size_t>> split_lineage(const std::string& s) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    auto next = s.find(',', pos);
    if (next == std::string::npos) next = s.size();
    const std::string item = s.substr(pos, next - pos);
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw IoError("checkpoint lineage entry '" + item + "'");
    out.emplace_back(std::stoull(item.substr(0, colon)), std::stoull(item.substr(colon + 1)));
    pos = next + 1;
  }
  return out;
}

std::string join_set(const std::set<std::size_t>& v) {
  std::string s;
  for (auto x : v) {
    if (!s.empty()) s += ',';
    s += std::to_string(x);
  }
  return s;
}

std::set<std::size_t> split_set(const std::string& s) {
  std::set<std::size_t> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    auto next = s.find(',', pos);
    if (next == std::string::npos) next = s.size();
    out.insert(std::stoull(s.substr(pos, next - pos)));
    pos = next + 1;
  }
  return out;
}

TrainLogRow event_row(std::size_t step, std::string event,
                      std::optional<std::size_t> chunk = std::nullopt) {
  TrainLogRow row;
  row.step = step;
  row.chunk_id = chunk;
  row.event = std::move(event);
  return row;
}

std::set<std::size_t> lineage_chunks(const std::vector<std::pair<std::size_t, std::size_t>>& l) {
  std::set<std::size_t> out;
  for (auto [chunk, n] : l) out.insert(chunk);
  return out;
}

}  // namespace

Trainer::Trainer(Model& student, const ChunkedDataset& data, TrainConfig cfg, TrainMode mode,
                 TeacherFn teacher)
    : student_(student),
      data_(data),
      cfg_(std::move(cfg)),
      mode_(mode),
      teacher_(std::move(teacher)),
      rng_(cfg_.seed),
      detector_(cfg_.spike) {
  cfg_.validate();
  if (cfg_.seq_len > student_.config().max_seq_len) {
    throw ConfigError("train config: seq_len " + std::to_string(cfg_.seq_len) +
                      " exceeds the model's max_seq_len " +
                      std::to_string(student_.config().max_seq_len));
  }
  if (mode_ == TrainMode::kAD && !teacher_) {
    throw ConfigError("mode ad requires a teacher");
  }
  if (data_.size() == 0) throw InputError("training dataset has no chunks");
  trainables_ = student_.named_parameters();
  adam_ = Adam(trainables_, cfg_.adam());
  chunks_per_epoch_ = data_.size();
  for (std::size_t e = 0; e < cfg_.epochs; ++e) {
    std::vector<std::size_t> perm(chunks_per_epoch_);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng_.shuffle(perm.begin(), perm.end());
    order_.insert(order_.end(), perm.begin(), perm.end());
  }
  ff_snapshot_ = sign_snapshot(student_, 0);
}

std::vector<std::size_t> Trainer::window_order(std::size_t order_pos, std::size_t chunk) const {
  const std::size_t n = data_.chunk(chunk).size() / cfg_.seq_len;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::uint64_t epoch = order_pos / chunks_per_epoch_;
  Rng r(mix64(cfg_.seed ^ mix64(epoch * 0x100000001ULL + chunk)));
  r.shuffle(order.begin(), order.end());
  return order;
}

std::optional<Trainer::Pending> Trainer::next_batch() {
  const std::size_t bs = cfg_.batch_size();
  while (cursor_.order_pos < order_.size()) {
    const std::size_t chunk = order_[cursor_.order_pos];
    const auto& tokens = data_.chunk(chunk);
    const std::size_t batches = tokens.size() / cfg_.seq_len / bs;
    if (skipped_.contains(chunk) || cursor_.batch >= batches) {
      ++cursor_.order_pos;
      cursor_.batch = 0;
      continue;
    }
    const auto windows = window_order(cursor_.order_pos, chunk);
    std::vector<std::int32_t> ids;
    ids.reserve(bs * cfg_.seq_len);
    for (std::size_t i = 0; i < bs; ++i) {
      const auto off = windows[cursor_.batch * bs + i] * cfg_.seq_len;
      ids.insert(ids.end(), tokens.begin() + static_cast<std::ptrdiff_t>(off),
                 tokens.begin() + static_cast<std::ptrdiff_t>(off + cfg_.seq_len));
    }
    ++cursor_.batch;
    return Pending{chunk, TokenBatch::from_ids(bs, cfg_.seq_len, ids)};
  }
  return std::nullopt;
}

void Trainer::emit(TrainLogRow row) {
  if (log_hook_) log_hook_(row);
  result_.log.rows.push_back(std::move(row));
}

Checkpoint Trainer::snapshot() const {
  Checkpoint ckpt = model_checkpoint(student_);
  for (auto& [k, v] : cfg_.to_kv()) ckpt.meta[k] = v;
  ckpt.meta["train.mode"] = std::string(mode_name(mode_));
  ckpt.meta["trainer.step"] = std::to_string(step_);
  ckpt.meta["trainer.cursor.order_pos"] = std::to_string(cursor_.order_pos);
  ckpt.meta["trainer.cursor.batch"] = std::to_string(cursor_.batch);
  ckpt.meta["trainer.rng"] = rng_.state();
  ckpt.meta["trainer.loss_window"] = join_floats(detector_.history());
  ckpt.meta["trainer.skipped"] = join_set(skipped_);
  ckpt.meta["trainer.lineage"] = join_lineage(lineage_);
  adam_.export_state(ckpt);
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  load_model_weights(student_, ckpt);
  adam_.import_state(ckpt);
  step_ = kv_size(ckpt.meta, "trainer.step", 0);
  cursor_.order_pos = kv_size(ckpt.meta, "trainer.cursor.order_pos", 0);
  cursor_.batch = kv_size(ckpt.meta, "trainer.cursor.batch", 0);
  rng_.set_state(kv_string(ckpt.meta, "trainer.rng", ""));
  detector_.restore(split_floats(kv_string(ckpt.meta, "trainer.loss_window", "")));
  lineage_ = split_lineage(kv_string(ckpt.meta, "trainer.lineage", ""));
  ff_snapshot_ = sign_snapshot(student_, step_);
}

void Trainer::resume(const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("trainer.step")) {
    throw ConfigError("checkpoint carries no trainer state and cannot be resumed");
  }
  restore(ckpt);
  skipped_ = split_set(kv_string(ckpt.meta, "trainer.skipped", ""));
  ring_.clear();
  ring_.push_back(ckpt);
  emit(event_row(step_, "resume"));
}

void Trainer::save(Checkpoint ckpt) {
  if (!cfg_.checkpoint_dir.empty()) {
    char name[32];
    std::snprintf(name, sizeof name, "step_%08zu.fbic", step_);
    std::filesystem::create_directories(cfg_.checkpoint_dir);
    save_checkpoint(ckpt, std::filesystem::path(cfg_.checkpoint_dir) / name);
  }
  ring_.push_back(std::move(ckpt));
  while (ring_.size() > cfg_.keep_checkpoints) ring_.pop_front();
}

void Trainer::rollback(const std::vector<std::size_t>& streak_chunks, std::size_t chunk) {
  std::vector<std::size_t> culprits = streak_chunks;
  culprits.push_back(chunk);
  for (auto c : culprits) {
    if (skipped_.insert(c).second) emit(event_row(step_, "skip", c));
  }
  auto clean = [&](const Checkpoint& ckpt) {
    for (auto c : lineage_chunks(split_lineage(kv_string(ckpt.meta, "trainer.lineage", "")))) {
      if (skipped_.contains(c)) return false;
    }
    return true;
  };
  while (!ring_.empty() && !clean(ring_.back())) ring_.pop_back();
  if (ring_.empty()) {
    throw TrainingAborted("loss spike at step " + std::to_string(step_ + 1) + " (chunk " +
                          std::to_string(chunk) +
                          ") and no retained checkpoint predates the skipped chunks {" +
                          join_set(skipped_) + "}");
  }
  restore(ring_.back());
  ++result_.rollbacks;
  emit(event_row(step_, "rollback", chunk));
}

TrainResult Trainer::run() {
  const LrSchedule schedule = cfg_.schedule();
  std::vector<std::size_t> streak;
  while (step_ < cfg_.total_steps) {
    if (before_step_hook_) before_step_hook_(step_ + 1, student_);
    auto pending = next_batch();
    if (!pending) {
      result_.exhausted = true;
      emit(event_row(step_, "exhausted"));
      break;
    }
    const TokenBatch& tokens = pending->tokens;
    const double lr = lr_at(step_ + 1, schedule);

    double loss_value;
    ClipResult clip{std::numeric_limits<double>::quiet_NaN(), false};
    {
      Tensor logits = student_.forward_logits(tokens);
      Tensor loss = mode_ == TrainMode::kAD
                        ? ad_loss(logits, teacher_(tokens), std::span<const std::uint8_t>(tokens.mask))
                        : na_loss(logits, tokens);
      loss_value = loss.item();
      if (std::isfinite(loss_value)) {
        backward(loss);
        clip = clip_global_norm(trainables_, cfg_.clip_norm);
      }
    }
    const double observed =
        std::isfinite(clip.preclip_norm) ? loss_value : std::numeric_limits<double>::quiet_NaN();
    const auto verdict = detector_.observe(observed);

    TrainLogRow row = event_row(step_ + 1, "", pending->chunk);
    row.loss = loss_value;
    row.lr = lr;
    row.grad_norm_preclip = clip.preclip_norm;
    if (verdict == SpikeDetector::Verdict::kSpike) {
      row.event = "spike";
      emit(std::move(row));
      student_.zero_grad();
      rollback(streak, pending->chunk);
      streak.clear();
      continue;
    }
    if (verdict == SpikeDetector::Verdict::kSuspect) {
      streak.push_back(pending->chunk);
      row.event = "suspect";
    } else {
      streak.clear();
    }

    adam_.step(lr);
    student_.zero_grad();
    ++step_;
    if (!lineage_.empty() && lineage_.back().first == pending->chunk) {
      ++lineage_.back().second;
    } else {
      lineage_.emplace_back(pending->chunk, 1);
    }
    if (step_ % cfg_.ff_interval == 0) {
      SignSnapshot snap = sign_snapshot(student_, step_);
      row.ff_ratio = ff_ratio(ff_snapshot_, snap).ratio;
      ff_snapshot_ = std::move(snap);
    }
    const bool checkpoint = step_ % cfg_.checkpoint_every == 0;
    if (checkpoint) row.event += row.event.empty() ? "checkpoint" : ";checkpoint";
    emit(std::move(row));
    if (checkpoint) {
      save(snapshot());
      if (checkpoint_hook_) checkpoint_hook_(step_, student_);
    }
  }

  result_.steps_completed = step_;
  result_.final_checkpoint = snapshot();
  result_.skipped_chunks.assign(skipped_.begin(), skipped_.end());
  result_.retained_chunks.clear();
  for (auto [chunk, n] : lineage_) result_.retained_chunks.insert(result_.retained_chunks.end(), n, chunk);
  return std::move(result_);
}

}  // namespace fbi

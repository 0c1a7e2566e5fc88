// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "fbi/metrics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <limits>

#include "fbi/errors.hpp"

namespace fbi {

std::size_t SignSnapshot::n_total() const {
  std::size_t n = 0;
  for (auto c : counts) n += c;
  return n;
}

SignSnapshot sign_snapshot(std::span<const NamedTensor> tensors,
                           std::span<const std::size_t> layers, std::size_t step) {
  if (tensors.size() != layers.size()) {
    throw ContractError("sign_snapshot: one layer index per tensor required");
  }
  SignSnapshot s;
  s.step = step;
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    const auto data = tensors[k].tensor.data();
    std::vector<std::uint64_t> words((data.size() + 63) / 64, 0);
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data[i] > 0.0f) words[i / 64] |= std::uint64_t{1} << (i % 64);
    }
    s.names.push_back(tensors[k].name);
    s.layers.push_back(layers[k]);
    s.counts.push_back(data.size());
    s.bits.push_back(std::move(words));
  }
  return s;
}

SignSnapshot sign_snapshot(const Model& model, std::size_t step) {
  std::vector<NamedTensor> tensors;
  std::vector<std::size_t> layers;
  const auto& ps = model.params();
  for (std::size_t l = 0; l < ps.layers.size(); ++l) {
    for (auto slot : kLinearSlots) {
      tensors.push_back({"layers." + std::to_string(l) + "." + std::string(slot_name(slot)),
                         ps.layers[l].linear(slot).params().w_f});
      layers.push_back(l);
    }
  }
  return sign_snapshot(tensors, layers, step);
}

FlipFlopReport ff_ratio(const SignSnapshot& prev, const SignSnapshot& curr) {
  if (prev.names != curr.names || prev.counts != curr.counts || prev.layers != curr.layers) {
    throw ContractError("ff_ratio: snapshots cover different parameter sets");
  }
  FlipFlopReport r;
  r.step_from = prev.step;
  r.step_to = curr.step;
  const std::size_t n_layers =
      prev.layers.empty() ? 0 : *std::max_element(prev.layers.begin(), prev.layers.end()) + 1;
  r.per_layer_flips.assign(n_layers, 0);
  for (std::size_t k = 0; k < prev.bits.size(); ++k) {
    std::size_t flips = 0;
    for (std::size_t w = 0; w < prev.bits[k].size(); ++w) {
      flips += static_cast<std::size_t>(std::popcount(prev.bits[k][w] ^ curr.bits[k][w]));
    }
    r.per_layer_flips[prev.layers[k]] += flips;
    r.total_flips += flips;
  }
  r.n_total = prev.n_total();
  r.ratio = r.n_total == 0 ? 0.0
                           : static_cast<double>(r.total_flips) / static_cast<double>(r.n_total);
  return r;
}

double total_nll(const Tensor& logits, const TokenBatch& tokens) {
  const std::size_t vocab = logits.shape().back();
  const auto z = logits.data();
  double nll = 0.0;
  for (std::size_t r = 0; r < tokens.positions(); ++r) {
    if (!tokens.mask[r]) continue;
    const auto row = z.subspan(r * vocab, vocab);
    double mx = -std::numeric_limits<double>::infinity();
    for (float v : row) mx = std::max(mx, static_cast<double>(v));
    double s = 0.0;
    for (float v : row) s += std::exp(static_cast<double>(v) - mx);
    nll += std::log(s) + mx - static_cast<double>(row[static_cast<std::size_t>(tokens.targets[r])]);
  }
  return nll;
}

PerplexityResult perplexity(const LogitsFn& logits, std::span<const std::int32_t> tokens,
                            std::size_t seq_len, std::size_t batch) {
  if (tokens.size() < 2) throw InputError("perplexity: evaluation set needs at least two tokens");
  if (seq_len < 2 || batch == 0) throw ContractError("perplexity: seq_len >= 2 and batch >= 1");
  const std::size_t full = tokens.size() / seq_len;
  double nll = 0.0;
  std::size_t predicted = 0;
  auto run = [&](std::size_t rows, std::size_t len, std::size_t offset) {
    TokenBatch tb = TokenBatch::from_ids(rows, len, tokens.subspan(offset, rows * len));
    Tensor out = logits(tb);
    nll += total_nll(out, tb);
    predicted += tb.predicted_positions();
  };
  for (std::size_t w = 0; w < full; w += batch) {
    const std::size_t rows = std::min(batch, full - w);
    run(rows, seq_len, w * seq_len);
  }
  const std::size_t tail = tokens.size() - full * seq_len;
  if (tail >= 2) run(1, tail, full * seq_len);
  PerplexityResult r;
  r.predicted_tokens = predicted;
  r.mean_nll = nll / static_cast<double>(predicted);
  r.perplexity = std::exp(r.mean_nll);
  return r;
}

PerplexityResult perplexity(const Model& model, std::span<const std::int32_t> tokens,
                            std::size_t seq_len, std::size_t batch) {
  NoGradGuard no_grad;
  return perplexity([&model](const TokenBatch& tb) { return model.forward_logits(tb); }, tokens,
                    std::min(seq_len, model.config().max_seq_len), batch);
}

double module_bitwidth(std::size_t n) {
  const double nn = static_cast<double>(n);
  return (nn * nn + 16.0 * 3.0 * nn) / (nn * nn + 3.0 * nn);
}

namespace {

ParameterCensus binarized_census(const ModelConfig& cfg) {
  ModelConfig c = cfg;
  c.binarize = true;
  return census_for(c);
}

}  // namespace

double avg_bitwidth(const ModelConfig& cfg, CensusMode mode) {
  const ParameterCensus c = binarized_census(cfg);
  double one_bit = static_cast<double>(c.linear_weights);
  double sixteen_bit = static_cast<double>(c.scale_shift + c.norms);
  if (mode == CensusMode::kStrict) sixteen_bit += static_cast<double>(c.embedding + c.head);
  return (one_bit + 16.0 * sixteen_bit) / (one_bit + sixteen_bit);
}

StorageReport storage_report(const ModelConfig& cfg, CensusMode mode) {
  StorageReport r;
  r.census = binarized_census(cfg);
  r.mode = mode;
  const auto& c = r.census;
  const double dense_params = static_cast<double>(c.total() - c.scale_shift);
  r.full_bytes = 2.0 * dense_params;
  r.binarized_bytes = static_cast<double>(c.linear_weights) / 8.0 +
                      2.0 * static_cast<double>(c.scale_shift + c.norms + c.embedding + c.head);
  r.compression_ratio = 1.0 - r.binarized_bytes / r.full_bytes;
  r.extra_parameter_ratio =
      static_cast<double>(c.scale_shift) / static_cast<double>(c.total());
  r.avg_bitwidth = avg_bitwidth(cfg, mode);
  return r;
}

SizeCheck check_reported_size(const ModelConfig& cfg, double reported_gib, double tolerance) {
  SizeCheck s;
  s.reported_gib = reported_gib;
  s.computed_gib = to_gib(storage_report(cfg).binarized_bytes);
  s.relative_gap = std::abs(s.computed_gib - reported_gib) / s.computed_gib;
  s.consistent = s.relative_gap <= tolerance;
  return s;
}

std::string storage_summary(const StorageReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "parameters          %zu (projections %zu, scale/shift %zu)\n"
                "16-bit size         %.4f GiB\n"
                "binarized size      %.4f GiB\n"
                "compression ratio   %.2f%%\n"
                "extra parameters    %.4f%%\n"
                "average bit-width   %.4f (%s census)\n",
                r.census.total(), r.census.linear_weights, r.census.scale_shift,
                to_gib(r.full_bytes), to_gib(r.binarized_bytes), 100.0 * r.compression_ratio,
                100.0 * r.extra_parameter_ratio, r.avg_bitwidth,
                r.mode == CensusMode::kDecoderBody ? "body" : "strict");
  return buf;
}

std::string storage_csv_header() {
  return "config,params,full_bytes,binarized_bytes,compression_ratio,extra_parameter_ratio,"
         "avg_bitwidth";
}

std::string storage_csv_row(const std::string& label, const StorageReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%zu,%.0f,%.0f,%.6f,%.8f,%.6f", label.c_str(),
                r.census.total(), r.full_bytes, r.binarized_bytes, r.compression_ratio,
                r.extra_parameter_ratio, r.avg_bitwidth);
  return buf;
}

}  // namespace fbi

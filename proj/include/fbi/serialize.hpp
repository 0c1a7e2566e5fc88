// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0
//
// "FBIC1" checkpoint container:
//
//   magic    5 bytes  "FBIC1"
//   meta     u64 byte length, then key=value lines in key order
//   count    u64 number of tensor records
//   record   u32 name length, name, u32 rank, u64 extent per axis,
//            fp32 little-endian values in row-major order
//
// Records keep insertion order, so save -> load -> save is byte-identical.

#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fbi/byte_io.hpp"
#include "fbi/kv_config.hpp"
#include "fbi/model.hpp"

namespace fbi {

struct Checkpoint {
  KvMap meta;
  std::vector<NamedTensor> tensors;

  const Tensor* find(std::string_view name) const;
  // Throws IoError naming the missing record.
  const Tensor& require(std::string_view name) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

void write_tensor_record(ByteWriter& w, std::string_view name, const Tensor& t);
NamedTensor read_tensor_record(ByteReader& r);

// Model weights (copied) plus the model configuration under "model.".
Checkpoint model_checkpoint(const Model& model);
// Rebuilds a model from the "model." keys and weight records.
Model model_from_checkpoint(const Checkpoint& ckpt);
// Copies weight records into an existing model of matching topology.
void load_model_weights(Model& model, const Checkpoint& ckpt);

}  // namespace fbi

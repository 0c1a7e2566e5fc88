// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace fbi {

// A [batch x seq] block of token ids with next-token targets. targets[t] is
// ids[t + 1] inside each row; the last position of every row has no target
// and is masked out.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::int32_t> ids;
  std::vector<std::int32_t> targets;
  std::vector<std::uint8_t> mask;

  static TokenBatch from_ids(std::size_t batch, std::size_t seq, std::span<const std::int32_t> ids);

  std::size_t positions() const { return batch * seq; }
  std::size_t predicted_positions() const;
};

}  // namespace fbi

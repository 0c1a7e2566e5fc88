// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0
//
// Flat key=value configuration blocks. Checkpoints and packed-model files embed
// them as UTF-8 text; the CLI also accepts a JSON object, flattened with '.'.

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>

namespace fbi {

using KvMap = std::map<std::string, std::string>;

// "key=value\n" per entry in key order.
std::string format_kv(const KvMap& kv);
// Parses key=value lines; blank lines and '#' comments are ignored.
KvMap parse_kv(std::string_view text);
// Detects JSON (first non-space character '{') or falls back to key=value.
KvMap parse_config_text(std::string_view text);

// Shortest text that round-trips exactly.
std::string exact_str(float v);
std::string exact_str(double v);

std::string kv_string(const KvMap& kv, const std::string& key, const std::string& fallback);
std::size_t kv_size(const KvMap& kv, const std::string& key, std::size_t fallback);
std::uint64_t kv_u64(const KvMap& kv, const std::string& key, std::uint64_t fallback);
float kv_float(const KvMap& kv, const std::string& key, float fallback);
double kv_double(const KvMap& kv, const std::string& key, double fallback);
bool kv_bool(const KvMap& kv, const std::string& key, bool fallback);

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text);
std::string hex64(std::uint64_t v);

}  // namespace fbi

// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "fbi/kv_config.hpp"

#include <charconv>
#include <cstdio>
#include <json.hpp>
#include <sstream>
#include <system_error>

#include "fbi/errors.hpp"

namespace fbi {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

void flatten(const nlohmann::json& j, const std::string& prefix, KvMap& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
    }
    return;
  }
  if (j.is_string()) {
    out[prefix] = j.get<std::string>();
  } else if (j.is_boolean()) {
    out[prefix] = j.get<bool>() ? "true" : "false";
  } else if (j.is_number_integer() || j.is_number_unsigned()) {
    out[prefix] = j.dump();
  } else if (j.is_number_float()) {
    out[prefix] = exact_str(j.get<double>());
  } else {
    throw ConfigError("config: unsupported JSON value at '" + prefix + "'");
  }
}

template <typename N>
N parse_number(const KvMap& kv, const std::string& key, N fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  N v{};
  const auto& s = it->second;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + s + "'");
  }
  return v;
}

}  // namespace

std::string format_kv(const KvMap& kv) {
  std::string out;
  for (const auto& [k, v] : kv) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

KvMap parse_kv(std::string_view text) {
  KvMap kv;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config: line " + std::to_string(line_no) + " is not key=value");
    }
    kv[std::string(trim(line.substr(0, eq)))] = std::string(trim(line.substr(eq + 1)));
  }
  return kv;
}

KvMap parse_config_text(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string_view::npos && text[first] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    KvMap kv;
    flatten(j, "", kv);
    return kv;
  }
  return parse_kv(text);
}

std::string exact_str(float v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string exact_str(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string kv_string(const KvMap& kv, const std::string& key, const std::string& fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

std::size_t kv_size(const KvMap& kv, const std::string& key, std::size_t fallback) {
  return parse_number<std::size_t>(kv, key, fallback);
}

std::uint64_t kv_u64(const KvMap& kv, const std::string& key, std::uint64_t fallback) {
  return parse_number<std::uint64_t>(kv, key, fallback);
}

float kv_float(const KvMap& kv, const std::string& key, float fallback) {
  return parse_number<float>(kv, key, fallback);
}

double kv_double(const KvMap& kv, const std::string& key, double fallback) {
  return parse_number<double>(kv, key, fallback);
}

bool kv_bool(const KvMap& kv, const std::string& key, bool fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ConfigError("config: '" + key + "' expects true/false, got '" + it->second + "'");
}

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64(std::string_view text) {
  return fnv1a64(std::span<const unsigned char>(
      reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace fbi

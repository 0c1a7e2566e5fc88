// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0
//
// Byte-level tokenization and chunked token datasets.
//
// Chunk files hold a little-endian u64 token count followed by that many
// little-endian u32 token ids. A dataset directory also carries a
// manifest.txt key=value block describing the chunking.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fbi {

inline constexpr std::int32_t kBosToken = 256;
inline constexpr std::int32_t kEosToken = 257;
inline constexpr std::int32_t kPadToken = 258;
inline constexpr std::size_t kByteVocab = 259;

class Tokenizer {
 public:
  static constexpr std::size_t vocab_size() { return kByteVocab; }

  // One id per byte.
  std::vector<std::int32_t> encode(std::string_view text) const;
  // Byte ids are emitted verbatim; BOS/EOS/PAD are dropped. Throws InputError
  // for ids outside the vocabulary.
  std::string decode(std::span<const std::int32_t> ids) const;
  // Documents are separated by blank lines; a BOS id precedes each document.
  // Separator bytes stay in the stream, so decode() restores the text.
  std::vector<std::int32_t> encode_documents(std::string_view text) const;
};

struct ChunkedDataset {
  std::size_t tokens_per_chunk = 0;
  std::size_t seq_len = 0;
  std::vector<std::vector<std::int32_t>> chunks;
  std::vector<std::filesystem::path> files;  // empty for in-memory datasets

  std::size_t size() const { return chunks.size(); }
  std::size_t total_tokens() const;
  const std::vector<std::int32_t>& chunk(std::size_t i) const { return chunks.at(i); }

  // Splits a token stream into consecutive chunks; only the last may be short.
  static ChunkedDataset from_tokens(std::span<const std::int32_t> tokens,
                                    std::size_t tokens_per_chunk, std::size_t seq_len);
  // Loads a directory written by build_chunks.
  static ChunkedDataset open(const std::filesystem::path& dir);
};

// Tokenizes the corpus file and writes chunk_NNNNN.bin files plus a manifest
// into out_dir. Throws IoError if the corpus is unreadable, InputError if it
// tokenizes to nothing and ContractError if tokens_per_chunk < seq_len.
ChunkedDataset build_chunks(const std::filesystem::path& corpus, std::size_t tokens_per_chunk,
                            std::size_t seq_len, const std::filesystem::path& out_dir);

void write_chunk_file(const std::filesystem::path& path, std::span<const std::int32_t> ids);
std::vector<std::int32_t> read_chunk_file(const std::filesystem::path& path);

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::string_view bytes);

}  // namespace fbi

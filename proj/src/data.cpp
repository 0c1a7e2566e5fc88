// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "fbi/data.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "fbi/byte_io.hpp"
#include "fbi/errors.hpp"
#include "fbi/kv_config.hpp"

namespace fbi {

std::vector<std::int32_t> Tokenizer::encode(std::string_view text) const {
  std::vector<std::int32_t> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(c);
  return ids;
}

std::string Tokenizer::decode(std::span<const std::int32_t> ids) const {
  std::string text;
  text.reserve(ids.size());
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= kByteVocab) {
      throw InputError("decode: token id " + std::to_string(id) + " outside vocabulary");
    }
    if (id < 256) text.push_back(static_cast<char>(id));
  }
  return text;
}

std::vector<std::int32_t> Tokenizer::encode_documents(std::string_view text) const {
  std::vector<std::int32_t> ids;
  ids.reserve(text.size() + text.size() / 64 + 1);
  bool at_document_start = true;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (at_document_start && c != '\n') {
      ids.push_back(kBosToken);
      at_document_start = false;
    }
    ids.push_back(static_cast<unsigned char>(c));
    // A newline that closes an empty line ends the current document.
    if (c == '\n' && i > 0 && text[i - 1] == '\n') at_document_start = true;
  }
  return ids;
}

std::size_t ChunkedDataset::total_tokens() const {
  std::size_t n = 0;
  for (const auto& c : chunks) n += c.size();
  return n;
}

ChunkedDataset ChunkedDataset::from_tokens(std::span<const std::int32_t> tokens,
                                           std::size_t tokens_per_chunk, std::size_t seq_len) {
  if (seq_len == 0 || tokens_per_chunk < seq_len) {
    throw ContractError("chunking: tokens_per_chunk (" + std::to_string(tokens_per_chunk) +
                        ") must be >= seq_len (" + std::to_string(seq_len) + ") >= 1");
  }
  if (tokens.empty()) throw InputError("chunking: token stream is empty");
  ChunkedDataset ds;
  ds.tokens_per_chunk = tokens_per_chunk;
  ds.seq_len = seq_len;
  for (std::size_t off = 0; off < tokens.size(); off += tokens_per_chunk) {
    const auto n = std::min(tokens_per_chunk, tokens.size() - off);
    ds.chunks.emplace_back(tokens.begin() + off, tokens.begin() + off + n);
  }
  return ds;
}

namespace {

std::filesystem::path chunk_path(const std::filesystem::path& dir, std::size_t i) {
  char name[32];
  std::snprintf(name, sizeof name, "chunk_%05zu.bin", i);
  return dir / name;
}

}  // namespace

ChunkedDataset ChunkedDataset::open(const std::filesystem::path& dir) {
  const KvMap manifest = parse_kv(read_file_bytes(dir / "manifest.txt"));
  ChunkedDataset ds;
  ds.tokens_per_chunk = kv_size(manifest, "tokens_per_chunk", 0);
  ds.seq_len = kv_size(manifest, "seq_len", 0);
  const std::size_t count = kv_size(manifest, "chunks", 0);
  if (count == 0) throw IoError("dataset manifest in " + dir.string() + " lists no chunks");
  for (std::size_t i = 0; i < count; ++i) {
    ds.files.push_back(chunk_path(dir, i));
    ds.chunks.push_back(read_chunk_file(ds.files.back()));
  }
  return ds;
}

ChunkedDataset build_chunks(const std::filesystem::path& corpus, std::size_t tokens_per_chunk,
                            std::size_t seq_len, const std::filesystem::path& out_dir) {
  const std::string text = read_file_bytes(corpus);
  const auto tokens = Tokenizer{}.encode_documents(text);
  if (tokens.empty()) throw InputError("corpus " + corpus.string() + " is empty");
  ChunkedDataset ds = ChunkedDataset::from_tokens(tokens, tokens_per_chunk, seq_len);

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    ds.files.push_back(chunk_path(out_dir, i));
    write_chunk_file(ds.files.back(), ds.chunks[i]);
  }
  const KvMap manifest = {
      {"chunks", std::to_string(ds.size())},
      {"corpus_hash", hex64(fnv1a64(text))},
      {"seq_len", std::to_string(seq_len)},
      {"tokens_per_chunk", std::to_string(tokens_per_chunk)},
      {"total_tokens", std::to_string(tokens.size())},
  };
  write_file_bytes(out_dir / "manifest.txt", format_kv(manifest));
  return ds;
}

void write_chunk_file(const std::filesystem::path& path, std::span<const std::int32_t> ids) {
  ByteWriter w;
  w.u64(ids.size());
  for (auto id : ids) w.u32(static_cast<std::uint32_t>(id));
  write_file_bytes(path, w.bytes());
}

std::vector<std::int32_t> read_chunk_file(const std::filesystem::path& path) {
  const std::string bytes = read_file_bytes(path);
  ByteReader r(bytes, path.string());
  const std::uint64_t count = r.u64();
  if (r.remaining() != count * 4) {
    throw IoError(path.string() + ": header announces " + std::to_string(count) +
                  " tokens but payload holds " + std::to_string(r.remaining()) + " bytes");
  }
  std::vector<std::int32_t> ids(count);
  for (auto& id : ids) {
    const std::uint32_t v = r.u32();
    if (v >= kByteVocab) {
      throw InputError(path.string() + ": token id " + std::to_string(v) + " outside vocabulary");
    }
    id = static_cast<std::int32_t>(v);
  }
  return ids;
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path.string());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace fbi

#pragma once

// Trace archives: a directory with
//   manifest.txt  key=value lines (format, version, dims, sentence count)
//   records.bin   one framed record per sentence, little-endian throughout
//
// Record layout (every integer is u64):
//   n_tokens, then n_tokens x (byte length, UTF-8 token text)
//   n_tokens token ids
//   byte length + UTF-8 text of the sentence characters
//   n_words, then n_words x (start, end)
//   byte length + float32 attention   layers x heads x n x n
//   byte length + float32 hidden      layers x n x dim
//   byte length + float32 embed_out   n x dim (length 0 when has_embed=0)

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wordprobe/corpus.hpp"
#include "wordprobe/traces.hpp"

namespace wordprobe {

inline constexpr std::string_view kDumpFormat = "wordprobe-dump";
inline constexpr int kDumpVersion = 1;

struct DumpManifest {
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::size_t dim = 0;
  std::size_t vocab_size = 0;
  std::size_t sentences = 0;
  bool has_embed = false;
  std::string tool_version;
};

struct DumpRecord {
  TracedSentence traced;
  std::vector<std::string> token_texts;
};

/// Throws Error(config_mismatch) when traces differ in shape or only some
/// carry embed_out, Error(io_error) on write failures.
void write_dump(const std::filesystem::path& dir, std::span<const TracedSentence> traces, const CharVocab& vocab);

/// Streams records one at a time. Truncation, trailing bytes or blob sizes
/// that disagree with the manifest raise Error(corrupt_archive). Attention
/// rows whose sum is off by more than 1e-2 raise
/// Error(normalization_violation); rows off by more than 1e-4 are rescaled.
class DumpReader {
 public:
  explicit DumpReader(const std::filesystem::path& dir);

  const DumpManifest& manifest() const noexcept { return manifest_; }
  std::optional<DumpRecord> next();

 private:
  DumpManifest manifest_;
  std::ifstream in_;
  std::size_t read_ = 0;
};

std::vector<DumpRecord> read_dump(const std::filesystem::path& dir);
std::vector<TracedSentence> read_dump_traces(const std::filesystem::path& dir);

}  // namespace wordprobe

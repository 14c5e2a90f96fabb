#pragma once

// Model checkpoints are a directory holding:
//   model.manifest  key=value text (dims, seed, dropout, vocab fingerprint)
//   model.bin       little-endian float32 parameters in ParamLayout order
//   vocab.tsv       the character vocabulary

#include <filesystem>
#include <map>
#include <string>

#include "wordprobe/corpus.hpp"
#include "wordprobe/encoder.hpp"

namespace wordprobe {

struct Checkpoint {
  Model model;
  CharVocab vocab;
};

void save_checkpoint(const std::filesystem::path& dir, const Model& model, const CharVocab& vocab);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Shared key=value manifest helpers (also used by dumps and CLI configs).
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);
void write_key_values(const std::filesystem::path& path, const std::vector<std::pair<std::string, std::string>>& entries);

}  // namespace wordprobe

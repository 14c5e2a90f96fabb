#pragma once

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "wordprobe/corpus.hpp"
#include "wordprobe/encoder.hpp"
#include "wordprobe/probe.hpp"

namespace testutil {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("wordprobe_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline wordprobe::ModelConfig tiny_config(std::size_t vocab_size, std::size_t layers = 2) {
  wordprobe::ModelConfig cfg;
  cfg.layers = layers;
  cfg.heads = 2;
  cfg.dim = 8;
  cfg.vocab_size = vocab_size;
  cfg.max_len = 16;
  cfg.dropout = 0.1f;
  cfg.seed = 7;
  return cfg;
}

/// Probe inputs with one feature row per character, built from its gold label.
inline wordprobe::ProbeData data_from(const std::vector<wordprobe::SegmentedSentence>& sents, auto feature) {
  wordprobe::ProbeData d;
  std::vector<std::vector<float>> rows;
  for (const auto& s : sents) {
    for (wordprobe::Bmes b : wordprobe::derive_bmes(s)) {
      d.labels.push_back(b);
      rows.push_back(feature(b));
    }
    d.offsets.push_back(d.labels.size());
  }
  const std::size_t dim = rows.empty() ? 0 : rows.front().size();
  d.features.resize(rows.size(), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), d.features.row(i).begin());
  return d;
}

inline std::vector<float> one_hot(wordprobe::Bmes b) {
  std::vector<float> v(wordprobe::kBmesCount, 0.0f);
  v[static_cast<std::size_t>(b)] = 1.0f;
  return v;
}

}  // namespace testutil

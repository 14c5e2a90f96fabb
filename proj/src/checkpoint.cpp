#include "wordprobe/checkpoint.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "wordprobe/binary_io.hpp"
#include "wordprobe/error.hpp"

namespace wordprobe {

namespace {

constexpr const char* kManifestName = "model.manifest";
constexpr const char* kParamsName = "model.bin";
constexpr const char* kVocabName = "vocab.tsv";

std::string shortest(float v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

const std::string& require(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw Error(Errc::io_error, "manifest is missing '" + key + "'");
  return it->second;
}

std::uint64_t to_u64(const std::string& text, const std::string& key) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw Error(Errc::io_error, "manifest value for '" + key + "' is not an unsigned integer: " + text);
  }
  return v;
}

}  // namespace

std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(Errc::io_error, path.string() + ": expected key=value, got: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

void write_key_values(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, std::string>>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  for (const auto& [k, v] : entries) out << k << '=' << v << '\n';
  if (!out) throw Error(Errc::io_error, "write failed for " + path.string());
}

void save_checkpoint(const std::filesystem::path& dir, const Model& model, const CharVocab& vocab) {
  const ModelConfig& cfg = model.config();
  if (cfg.vocab_size != vocab.size()) throw Error(Errc::config_mismatch, "model and vocabulary sizes differ");
  std::filesystem::create_directories(dir);
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(vocab.fingerprint()));
  write_key_values(dir / kManifestName, {
                                            {"format", "wordprobe-checkpoint"},
                                            {"version", "1"},
                                            {"layers", std::to_string(cfg.layers)},
                                            {"heads", std::to_string(cfg.heads)},
                                            {"dim", std::to_string(cfg.dim)},
                                            {"vocab_size", std::to_string(cfg.vocab_size)},
                                            {"max_len", std::to_string(cfg.max_len)},
                                            {"dropout", shortest(cfg.dropout)},
                                            {"seed", std::to_string(cfg.seed)},
                                            {"param_count", std::to_string(model.layout().total())},
                                            {"vocab_hash", hash},
                                            {"endianness", "little"},
                                        });
  std::ofstream out(dir / kParamsName, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write " + (dir / kParamsName).string());
  binary::write_f32s(out, model.params());
  if (!out) throw Error(Errc::io_error, "write failed for " + (dir / kParamsName).string());
  vocab.save(dir / kVocabName);
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto kv = read_key_values(dir / kManifestName);
  if (require(kv, "format") != "wordprobe-checkpoint") throw Error(Errc::io_error, "not a wordprobe checkpoint");
  ModelConfig cfg;
  cfg.layers = to_u64(require(kv, "layers"), "layers");
  cfg.heads = to_u64(require(kv, "heads"), "heads");
  cfg.dim = to_u64(require(kv, "dim"), "dim");
  cfg.vocab_size = to_u64(require(kv, "vocab_size"), "vocab_size");
  cfg.max_len = to_u64(require(kv, "max_len"), "max_len");
  cfg.seed = to_u64(require(kv, "seed"), "seed");
  const std::string& dropout = require(kv, "dropout");
  auto [ptr, ec] = std::from_chars(dropout.data(), dropout.data() + dropout.size(), cfg.dropout);
  if (ec != std::errc{}) throw Error(Errc::io_error, "bad dropout value " + dropout);

  CharVocab vocab = CharVocab::load(dir / kVocabName);
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(vocab.fingerprint()));
  if (require(kv, "vocab_hash") != hash) throw Error(Errc::config_mismatch, "vocabulary does not match the manifest");

  Model model(cfg);
  if (to_u64(require(kv, "param_count"), "param_count") != model.layout().total()) {
    throw Error(Errc::config_mismatch, "parameter count does not match the declared dimensions");
  }
  const auto blob = dir / kParamsName;
  std::ifstream in(blob, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + blob.string());
  if (std::filesystem::file_size(blob) != model.layout().total() * sizeof(float)) {
    throw Error(Errc::io_error, "parameter blob has the wrong size");
  }
  binary::read_f32s(in, model.params(), Errc::io_error);
  return {std::move(model), std::move(vocab)};
}

}  // namespace wordprobe

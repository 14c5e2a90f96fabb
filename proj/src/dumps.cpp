#include "wordprobe/dumps.hpp"

#include <charconv>
#include <cmath>

#include "wordprobe/binary_io.hpp"
#include "wordprobe/checkpoint.hpp"
#include "wordprobe/error.hpp"
#include "wordprobe/utf8.hpp"

namespace wordprobe {

namespace {

constexpr const char* kManifestName = "manifest.txt";
constexpr const char* kRecordsName = "records.bin";
constexpr const char* kToolVersion = "wordprobe 0.1.0";

void write_bytes(std::ostream& out, std::string_view bytes) {
  binary::write_u64(out, bytes.size());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_blob(std::ostream& out, std::span<const float> values) {
  binary::write_u64(out, values.size_bytes());
  binary::write_f32s(out, values);
}

std::size_t manifest_size(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw Error(Errc::corrupt_archive, "manifest is missing '" + key + "'");
  std::uint64_t v = 0;
  const std::string& text = it->second;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw Error(Errc::corrupt_archive, "manifest value for '" + key + "' is not an unsigned integer");
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

void write_dump(const std::filesystem::path& dir, std::span<const TracedSentence> traces, const CharVocab& vocab) {
  DumpManifest m;
  m.vocab_size = vocab.size();
  m.sentences = traces.size();
  m.tool_version = kToolVersion;
  if (!traces.empty()) {
    const ForwardTrace& first = traces.front().trace;
    m.layers = first.layers;
    m.heads = first.heads;
    m.dim = first.dim;
    m.has_embed = first.has_embed_out();
  }
  for (const auto& t : traces) {
    const ForwardTrace& tr = t.trace;
    if (tr.layers != m.layers || tr.heads != m.heads || tr.dim != m.dim || tr.has_embed_out() != m.has_embed) {
      throw Error(Errc::config_mismatch, "traces in one archive must share a model shape");
    }
    if (tr.length() != t.sentence.size() + 2) throw Error(Errc::length_mismatch, "trace and sentence lengths differ");
  }

  std::filesystem::create_directories(dir);
  write_key_values(dir / kManifestName, {
                                            {"format", std::string(kDumpFormat)},
                                            {"version", std::to_string(kDumpVersion)},
                                            {"tool_version", m.tool_version},
                                            {"endianness", "little"},
                                            {"layers", std::to_string(m.layers)},
                                            {"heads", std::to_string(m.heads)},
                                            {"dim", std::to_string(m.dim)},
                                            {"vocab_size", std::to_string(m.vocab_size)},
                                            {"sentences", std::to_string(m.sentences)},
                                            {"has_embed", m.has_embed ? "1" : "0"},
                                        });
  std::ofstream out(dir / kRecordsName, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write " + (dir / kRecordsName).string());
  for (const auto& t : traces) {
    const ForwardTrace& tr = t.trace;
    binary::write_u64(out, tr.length());
    for (TokenId id : tr.tokens) {
      const bool reserved = id >= 0 && id < kFirstCharId;
      write_bytes(out, reserved ? std::string(reserved_token_text(id)) : vocab.token_text(id));
    }
    for (TokenId id : tr.tokens) binary::write_u64(out, static_cast<std::uint64_t>(static_cast<std::uint32_t>(id)));
    write_bytes(out, utf8::encode(t.sentence.chars));
    binary::write_u64(out, t.sentence.words.size());
    for (const Span& s : t.sentence.words) {
      binary::write_u64(out, s.start);
      binary::write_u64(out, s.end);
    }
    write_blob(out, tr.attention);
    write_blob(out, tr.hidden);
    write_blob(out, tr.embed_out.values());
  }
  if (!out) throw Error(Errc::io_error, "write failed for " + (dir / kRecordsName).string());
}

DumpReader::DumpReader(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error(Errc::io_error, "no dump directory at " + dir.string());
  const auto kv = read_key_values(dir / kManifestName);
  auto format = kv.find("format");
  if (format == kv.end() || format->second != kDumpFormat) {
    throw Error(Errc::corrupt_archive, dir.string() + " is not a trace archive");
  }
  if (manifest_size(kv, "version") != static_cast<std::size_t>(kDumpVersion)) {
    throw Error(Errc::corrupt_archive, "unsupported archive version");
  }
  auto endian = kv.find("endianness");
  if (endian == kv.end() || endian->second != "little") throw Error(Errc::corrupt_archive, "archive must be little-endian");
  manifest_.layers = manifest_size(kv, "layers");
  manifest_.heads = manifest_size(kv, "heads");
  manifest_.dim = manifest_size(kv, "dim");
  manifest_.vocab_size = manifest_size(kv, "vocab_size");
  manifest_.sentences = manifest_size(kv, "sentences");
  manifest_.has_embed = manifest_size(kv, "has_embed") != 0;
  if (auto tv = kv.find("tool_version"); tv != kv.end()) manifest_.tool_version = tv->second;
  if (manifest_.sentences > 0 && (manifest_.layers == 0 || manifest_.heads == 0 || manifest_.dim == 0)) {
    throw Error(Errc::corrupt_archive, "manifest declares zero dimensions");
  }
  in_.open(dir / kRecordsName, std::ios::binary);
  if (!in_) throw Error(Errc::corrupt_archive, "missing " + (dir / kRecordsName).string());
}

std::optional<DumpRecord> DumpReader::next() {
  constexpr Errc kTrunc = Errc::corrupt_archive;
  if (read_ == manifest_.sentences) {
    if (in_.peek() != std::char_traits<char>::eof()) throw Error(kTrunc, "bytes after the last declared record");
    return std::nullopt;
  }
  // Remaining byte budget bounds every length field before allocating.
  const auto here = in_.tellg();
  in_.seekg(0, std::ios::end);
  const auto remaining = static_cast<std::uint64_t>(in_.tellg() - here);
  in_.seekg(here);
  auto read_len = [&](std::uint64_t unit) {
    const std::uint64_t v = binary::read_u64(in_, kTrunc);
    if (unit != 0 && v > remaining / unit) throw Error(kTrunc, "length field exceeds the archive size");
    return static_cast<std::size_t>(v);
  };
  auto read_text = [&] {
    std::string s(read_len(1), '\0');
    if (!in_.read(s.data(), static_cast<std::streamsize>(s.size()))) throw Error(kTrunc, "unexpected end of data");
    return s;
  };
  auto read_blob = [&](std::size_t expected_elems, std::vector<float>& dst) {
    const std::size_t bytes = read_len(1);
    if (bytes != 4 * expected_elems) throw Error(kTrunc, "blob size does not match the manifest dimensions");
    dst.resize(expected_elems);
    binary::read_f32s(in_, dst, kTrunc);
  };

  DumpRecord rec;
  ForwardTrace& tr = rec.traced.trace;
  SegmentedSentence& sent = rec.traced.sentence;
  const std::size_t n = read_len(8);
  for (std::size_t i = 0; i < n; ++i) rec.token_texts.push_back(read_text());
  tr.tokens.resize(n);
  for (auto& id : tr.tokens) {
    const std::uint64_t raw = binary::read_u64(in_, kTrunc);
    if (raw > 0x7FFFFFFFu) throw Error(kTrunc, "token id out of range");
    id = static_cast<TokenId>(raw);
  }
  try {
    sent.chars = utf8::decode(read_text());
  } catch (const Error& e) {
    if (e.code() == kTrunc) throw;
    throw Error(kTrunc, std::string("sentence text: ") + e.what());
  }
  const std::size_t words = read_len(16);
  for (std::size_t k = 0; k < words; ++k) {
    const auto start = static_cast<std::size_t>(binary::read_u64(in_, kTrunc));
    const auto end = static_cast<std::size_t>(binary::read_u64(in_, kTrunc));
    sent.words.push_back({start, end});
  }
  if (n != sent.size() + 2 || !is_partition(sent.words, sent.size())) {
    throw Error(kTrunc, "record " + std::to_string(read_) + " has inconsistent tokens and spans");
  }
  tr.layers = manifest_.layers;
  tr.heads = manifest_.heads;
  tr.dim = manifest_.dim;
  read_blob(tr.layers * tr.heads * n * n, tr.attention);
  read_blob(tr.layers * n * tr.dim, tr.hidden);
  std::vector<float> embed;
  read_blob(manifest_.has_embed ? n * tr.dim : 0, embed);
  if (manifest_.has_embed) tr.embed_out = Matrix(n, tr.dim, std::move(embed));

  for (std::size_t r = 0; r < tr.layers * tr.heads * n; ++r) {
    float* row = tr.attention.data() + r * n;
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += row[j];
    const double off = std::abs(total - 1.0);
    if (!(off <= 1e-2)) {
      throw Error(Errc::normalization_violation,
                  "record " + std::to_string(read_) + ": attention row sums to " + std::to_string(total));
    }
    if (off > 1e-4) {
      for (std::size_t j = 0; j < n; ++j) row[j] = static_cast<float>(row[j] / total);
    }
  }
  ++read_;
  return rec;
}

std::vector<DumpRecord> read_dump(const std::filesystem::path& dir) {
  DumpReader reader(dir);
  std::vector<DumpRecord> out;
  while (auto rec = reader.next()) out.push_back(std::move(*rec));
  return out;
}

std::vector<TracedSentence> read_dump_traces(const std::filesystem::path& dir) {
  std::vector<TracedSentence> out;
  for (auto& rec : read_dump(dir)) out.push_back(std::move(rec.traced));
  return out;
}

}  // namespace wordprobe

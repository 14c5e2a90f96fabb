#include "wordprobe/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "wordprobe/error.hpp"
#include "wordprobe/utf8.hpp"

namespace wordprobe {

std::string SegmentedSentence::to_line() const {
  std::string line;
  for (std::size_t k = 0; k < words.size(); ++k) {
    if (k > 0) line.push_back(' ');
    line += utf8::encode(word(k));
  }
  return line;
}

bool is_partition(std::span<const Span> spans, std::size_t n) noexcept {
  if (spans.empty()) return n == 0;
  std::size_t expected_start = 0;
  for (const Span& s : spans) {
    if (s.start != expected_start || s.end <= s.start) return false;
    expected_start = s.end;
  }
  return expected_start == n;
}

void validate_sentence(const SegmentedSentence& sent) {
  if (sent.chars.empty()) throw Error(Errc::invalid_argument, "sentence has no characters");
  if (!is_partition(sent.words, sent.chars.size())) {
    throw Error(Errc::invalid_argument, "word spans do not partition the sentence");
  }
  for (char32_t ch : sent.chars) {
    if (utf8::is_whitespace(ch)) throw Error(Errc::invalid_argument, "sentence contains whitespace");
  }
}

SegmentedSentence parse_segmented_line(std::string_view line) {
  const std::u32string text = utf8::decode(line);
  SegmentedSentence sent;
  std::size_t i = 0;
  while (i < text.size()) {
    if (utf8::is_whitespace(text[i])) {
      ++i;
      continue;
    }
    const std::size_t start = sent.chars.size();
    while (i < text.size() && !utf8::is_whitespace(text[i])) {
      if (utf8::is_control(text[i])) {
        throw Error(Errc::invalid_char, "control character U+" + std::to_string(static_cast<std::uint32_t>(text[i])) +
                                            " inside a word");
      }
      sent.chars.push_back(text[i]);
      ++i;
    }
    sent.words.push_back({start, sent.chars.size()});
  }
  if (sent.chars.empty()) throw Error(Errc::empty_line, "line has no words");
  return sent;
}

SegmentedSentence truncate_sentence(const SegmentedSentence& sent, std::size_t max_chars) {
  if (sent.size() <= max_chars) return sent;
  if (max_chars == 0) throw Error(Errc::invalid_argument, "cannot truncate a sentence to zero characters");
  SegmentedSentence out;
  out.chars = sent.chars.substr(0, max_chars);
  for (const Span& w : sent.words) {
    if (w.start >= max_chars) break;
    out.words.push_back({w.start, std::min(w.end, max_chars)});
  }
  return out;
}

std::vector<SegmentedSentence> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open corpus " + path.string());
  std::vector<SegmentedSentence> corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::u32string decoded = utf8::decode(line);
    if (std::all_of(decoded.begin(), decoded.end(), utf8::is_whitespace)) continue;
    try {
      corpus.push_back(parse_segmented_line(line));
    } catch (const Error& e) {
      throw Error(e.code(), path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return corpus;
}

void write_corpus(const std::filesystem::path& path, std::span<const SegmentedSentence> corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write corpus " + path.string());
  for (const auto& sent : corpus) out << sent.to_line() << '\n';
  if (!out) throw Error(Errc::io_error, "write failed for " + path.string());
}

char bmes_char(Bmes label) noexcept {
  static constexpr char kChars[] = {'B', 'M', 'E', 'S'};
  return kChars[static_cast<std::size_t>(label)];
}

std::vector<Bmes> derive_bmes(std::span<const Span> spans, std::size_t n) {
  std::vector<Bmes> labels(n, Bmes::S);
  for (const Span& s : spans) {
    if (s.length() == 1) continue;
    labels[s.start] = Bmes::B;
    for (std::size_t i = s.start + 1; i + 1 < s.end; ++i) labels[i] = Bmes::M;
    labels[s.end - 1] = Bmes::E;
  }
  return labels;
}

std::vector<Bmes> derive_bmes(const SegmentedSentence& sent) { return derive_bmes(sent.words, sent.size()); }

std::string_view reserved_token_text(TokenId id) noexcept {
  switch (id) {
    case kPadId: return "[PAD]";
    case kUnkId: return "[UNK]";
    case kClsId: return "[CLS]";
    case kSepId: return "[SEP]";
    case kMaskId: return "[MASK]";
    default: return {};
  }
}

TokenId CharVocab::id(char32_t ch) const noexcept {
  auto it = ids_.find(ch);
  return it == ids_.end() ? kUnkId : it->second;
}

std::string CharVocab::token_text(TokenId id) const {
  if (id >= 0 && id < kFirstCharId) return std::string(reserved_token_text(id));
  const auto index = static_cast<std::size_t>(id - kFirstCharId);
  if (id < 0 || index >= chars_.size()) throw Error(Errc::id_out_of_range, "token id " + std::to_string(id));
  return utf8::encode(chars_[index]);
}

std::vector<TokenId> CharVocab::encode(std::u32string_view chars) const {
  std::vector<TokenId> ids;
  ids.reserve(chars.size() + 2);
  ids.push_back(kClsId);
  for (char32_t ch : chars) ids.push_back(id(ch));
  ids.push_back(kSepId);
  return ids;
}

std::vector<TokenId> CharVocab::encode(const SegmentedSentence& sent) const { return encode(sent.chars); }

CharVocab CharVocab::from_chars(std::span<const char32_t> ordered_chars) {
  CharVocab vocab;
  for (char32_t ch : ordered_chars) {
    if (utf8::is_whitespace(ch) || utf8::is_control(ch)) {
      throw Error(Errc::invalid_char, "vocabulary cannot hold whitespace or control characters");
    }
    const auto next_id = static_cast<TokenId>(vocab.size());
    if (!vocab.ids_.emplace(ch, next_id).second) {
      throw Error(Errc::invalid_argument, "duplicate vocabulary character");
    }
    vocab.chars_.push_back(ch);
  }
  return vocab;
}

std::string CharVocab::serialize() const {
  std::string out;
  for (TokenId id = 0; id < kFirstCharId; ++id) {
    out += reserved_token_text(id);
    out += '\t' + std::to_string(id) + '\n';
  }
  for (std::size_t i = 0; i < chars_.size(); ++i) {
    out += utf8::encode(chars_[i]);
    out += '\t' + std::to_string(kFirstCharId + static_cast<TokenId>(i)) + '\n';
  }
  return out;
}

std::uint64_t CharVocab::fingerprint() const {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char byte : serialize()) {
    hash ^= byte;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

void CharVocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write vocabulary " + path.string());
  out << serialize();
  if (!out) throw Error(Errc::io_error, "write failed for " + path.string());
}

CharVocab CharVocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open vocabulary " + path.string());
  std::vector<char32_t> chars;
  std::string line;
  TokenId expected = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw Error(Errc::io_error, "vocabulary line without tab: " + line);
    const std::string text = line.substr(0, tab);
    const TokenId id = std::stoi(line.substr(tab + 1));
    if (id != expected) throw Error(Errc::io_error, "vocabulary ids must be consecutive from 0");
    ++expected;
    if (id < kFirstCharId) {
      if (text != reserved_token_text(id)) throw Error(Errc::io_error, "unexpected reserved token " + text);
      continue;
    }
    const std::u32string decoded = utf8::decode(text);
    if (decoded.size() != 1) throw Error(Errc::io_error, "vocabulary entry is not a single character: " + text);
    chars.push_back(decoded.front());
  }
  if (expected < kFirstCharId) throw Error(Errc::io_error, "vocabulary is missing reserved tokens");
  return from_chars(chars);
}

CharVocab build_vocab(std::span<const SegmentedSentence> corpus, std::size_t min_freq) {
  if (corpus.empty()) throw Error(Errc::empty_corpus, "cannot build a vocabulary from an empty corpus");
  if (min_freq == 0) throw Error(Errc::invalid_argument, "min_freq must be positive");
  std::map<char32_t, std::size_t> freq;
  for (const auto& sent : corpus) {
    for (char32_t ch : sent.chars) ++freq[ch];
  }
  std::vector<char32_t> kept;
  for (const auto& [ch, count] : freq) {
    if (count >= min_freq) kept.push_back(ch);
  }
  return CharVocab::from_chars(kept);
}

double CorpusStats::avg_sentence_length() const {
  if (sentence_count == 0) return 0.0;
  return static_cast<double>(char_count) / static_cast<double>(sentence_count);
}

CorpusStats& CorpusStats::operator+=(const CorpusStats& other) {
  sentence_count += other.sentence_count;
  word_count += other.word_count;
  char_count += other.char_count;
  return *this;
}

CorpusStats corpus_stats(std::span<const SegmentedSentence> corpus) {
  if (corpus.empty()) throw Error(Errc::empty_corpus, "no sentences");
  CorpusStats stats;
  for (const auto& sent : corpus) {
    ++stats.sentence_count;
    stats.word_count += sent.words.size();
    stats.char_count += sent.chars.size();
  }
  return stats;
}

double random_baseline(double avg_sentence_length) {
  if (!(avg_sentence_length > 0.0)) throw Error(Errc::invalid_argument, "average length must be positive");
  return 1.0 / avg_sentence_length;
}

double random_baseline(const CorpusStats& stats) { return random_baseline(stats.avg_sentence_length()); }

std::string format_baseline(double baseline) {
  // The small epsilon keeps values like 0.038000000001 from dropping a digit.
  const double thousandths = std::floor(baseline * 1000.0 + 1e-9);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", thousandths / 1000.0);
  return buf;
}

}  // namespace wordprobe

#pragma once

// Segmented-corpus ingestion: sentences with gold word spans, BMES labels,
// the character vocabulary and corpus statistics.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace wordprobe {

/// Half-open character range [start, end).
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const noexcept { return end - start; }
  auto operator<=>(const Span&) const = default;
};

using SpanList = std::vector<Span>;

struct SegmentedSentence {
  std::u32string chars;
  SpanList words;

  std::size_t size() const noexcept { return chars.size(); }
  std::u32string_view word(std::size_t k) const {
    return std::u32string_view(chars).substr(words[k].start, words[k].length());
  }
  std::string to_line() const;  // words joined by a single space

  bool operator==(const SegmentedSentence&) const = default;
};

/// Throws Error(invalid_argument) when spans do not partition [0, n) or
/// the characters contain whitespace.
void validate_sentence(const SegmentedSentence& sent);

/// True when `spans` is an ordered, gap-free partition of [0, n).
bool is_partition(std::span<const Span> spans, std::size_t n) noexcept;

SegmentedSentence parse_segmented_line(std::string_view line);

/// Keeps the first `max_chars` characters; a word cut by the limit is
/// shortened.
SegmentedSentence truncate_sentence(const SegmentedSentence& sent, std::size_t max_chars);

/// Reads a whitespace-segmented corpus file; blank lines are skipped.
std::vector<SegmentedSentence> read_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, std::span<const SegmentedSentence> corpus);

enum class Bmes : std::uint8_t { B = 0, M = 1, E = 2, S = 3 };
inline constexpr std::size_t kBmesCount = 4;
char bmes_char(Bmes label) noexcept;

std::vector<Bmes> derive_bmes(const SegmentedSentence& sent);
std::vector<Bmes> derive_bmes(std::span<const Span> spans, std::size_t n);

using TokenId = std::int32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kClsId = 2;
inline constexpr TokenId kSepId = 3;
inline constexpr TokenId kMaskId = 4;
inline constexpr TokenId kFirstCharId = 5;

class CharVocab {
 public:
  CharVocab() = default;

  std::size_t size() const noexcept { return kFirstCharId + chars_.size(); }
  TokenId id(char32_t ch) const noexcept;
  bool contains(char32_t ch) const noexcept { return ids_.contains(ch); }
  /// Text form of a token id: reserved ids render as "[PAD]", "[CLS]", ...
  std::string token_text(TokenId id) const;

  /// [CLS] c_1 .. c_n [SEP]
  std::vector<TokenId> encode(const SegmentedSentence& sent) const;
  std::vector<TokenId> encode(std::u32string_view chars) const;

  void save(const std::filesystem::path& path) const;
  static CharVocab load(const std::filesystem::path& path);
  std::string serialize() const;
  /// FNV-1a 64 over serialize(); stored in checkpoint manifests.
  std::uint64_t fingerprint() const;

  static CharVocab from_chars(std::span<const char32_t> ordered_chars);

  bool operator==(const CharVocab& other) const { return chars_ == other.chars_; }

 private:
  std::vector<char32_t> chars_;  // chars_[i] has id kFirstCharId + i
  std::map<char32_t, TokenId> ids_;
};

std::string_view reserved_token_text(TokenId id) noexcept;

CharVocab build_vocab(std::span<const SegmentedSentence> corpus, std::size_t min_freq);

struct CorpusStats {
  std::uint64_t sentence_count = 0;
  std::uint64_t word_count = 0;
  std::uint64_t char_count = 0;

  double avg_sentence_length() const;
  CorpusStats& operator+=(const CorpusStats& other);
  friend CorpusStats operator+(CorpusStats a, const CorpusStats& b) { return a += b; }
  bool operator==(const CorpusStats&) const = default;
};

CorpusStats corpus_stats(std::span<const SegmentedSentence> corpus);

/// Chance level for "attend to one specific character": 1 / average length.
double random_baseline(const CorpusStats& stats);
double random_baseline(double avg_sentence_length);
/// Baseline as printed in reports: truncated (not rounded) to 3 decimals,
/// so 1/35.8 = 0.02793 prints as "0.027".
std::string format_baseline(double baseline);

}  // namespace wordprobe

#pragma once

// Desk-scale stand-in for segmented corpora: a random lexicon over a small
// CJK alphabet, chained by a fixed word-bigram successor table. Characters
// are shared between words, so a character alone does not reveal its BMES
// position; context does.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "wordprobe/corpus.hpp"

namespace wordprobe {

struct SyntheticLanguageConfig {
  std::size_t alphabet_size = 30;
  std::size_t lexicon_size = 40;
  std::size_t max_word_length = 4;
  std::size_t successors_per_word = 6;
  std::size_t min_words = 4;
  std::size_t max_words = 10;
  char32_t first_char = U'一';
  std::uint64_t seed = 1;
};

struct SyntheticLanguage {
  SyntheticLanguageConfig config;
  std::vector<std::u32string> lexicon;
  std::vector<std::vector<std::size_t>> successors;  // per word index
};

SyntheticLanguage make_language(const SyntheticLanguageConfig& config);

/// Sentences are walks through the successor table; `seed` selects the walk.
std::vector<SegmentedSentence> sample_corpus(const SyntheticLanguage& lang, std::size_t count, std::uint64_t seed);

/// Coarser segmentation standard over the same text: a word followed by its
/// first listed successor is merged into one word when the result fits in
/// max_word_length characters.
SegmentedSentence coarsen(const SegmentedSentence& sent, const SyntheticLanguage& lang);
std::vector<SegmentedSentence> coarsen(const std::vector<SegmentedSentence>& corpus, const SyntheticLanguage& lang);

}  // namespace wordprobe

#include "wordprobe/synthetic.hpp"

#include <map>
#include <set>

#include "wordprobe/error.hpp"
#include "wordprobe/rng.hpp"

namespace wordprobe {

namespace {

// Rough shape of Chinese word lengths: mostly two characters.
std::size_t sample_word_length(Rng& rng, std::size_t max_len) {
  static constexpr double kCumulative[] = {0.25, 0.70, 0.90, 1.0};
  const double u = rng.uniform();
  std::size_t len = 1;
  while (len < 4 && u >= kCumulative[len - 1]) ++len;
  return len > max_len ? max_len : len;
}

}  // namespace

SyntheticLanguage make_language(const SyntheticLanguageConfig& config) {
  if (config.alphabet_size == 0 || config.lexicon_size == 0 || config.max_word_length == 0 ||
      config.successors_per_word == 0 || config.min_words == 0 || config.max_words < config.min_words) {
    throw Error(Errc::invalid_argument, "degenerate synthetic language configuration");
  }
  Rng rng(mix_seed(config.seed, 0));
  SyntheticLanguage lang;
  lang.config = config;
  std::set<std::u32string> seen;
  std::size_t attempts = 0;
  while (lang.lexicon.size() < config.lexicon_size) {
    if (++attempts > 1000 * config.lexicon_size) {
      throw Error(Errc::invalid_argument, "alphabet too small for the requested lexicon");
    }
    const std::size_t len = sample_word_length(rng, config.max_word_length);
    std::u32string word;
    for (std::size_t i = 0; i < len; ++i) {
      word.push_back(config.first_char + static_cast<char32_t>(rng.uniform_index(config.alphabet_size)));
    }
    if (seen.insert(word).second) lang.lexicon.push_back(word);
  }
  lang.successors.resize(lang.lexicon.size());
  for (auto& next : lang.successors) {
    for (std::size_t k = 0; k < config.successors_per_word; ++k) {
      next.push_back(rng.uniform_index(lang.lexicon.size()));
    }
  }
  return lang;
}

std::vector<SegmentedSentence> sample_corpus(const SyntheticLanguage& lang, std::size_t count, std::uint64_t seed) {
  Rng rng(mix_seed(lang.config.seed, seed + 1));
  const auto& cfg = lang.config;
  std::vector<SegmentedSentence> corpus;
  corpus.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t n_words = cfg.min_words + rng.uniform_index(cfg.max_words - cfg.min_words + 1);
    SegmentedSentence sent;
    std::size_t w = rng.uniform_index(lang.lexicon.size());
    for (std::size_t k = 0; k < n_words; ++k) {
      const std::size_t start = sent.chars.size();
      sent.chars += lang.lexicon[w];
      sent.words.push_back({start, sent.chars.size()});
      const auto& next = lang.successors[w];
      w = next[rng.uniform_index(next.size())];
    }
    corpus.push_back(std::move(sent));
  }
  return corpus;
}

SegmentedSentence coarsen(const SegmentedSentence& sent, const SyntheticLanguage& lang) {
  std::map<std::u32string_view, std::size_t> index;
  for (std::size_t i = 0; i < lang.lexicon.size(); ++i) index.emplace(lang.lexicon[i], i);
  SegmentedSentence out;
  out.chars = sent.chars;
  std::size_t k = 0;
  while (k < sent.words.size()) {
    Span span = sent.words[k];
    if (k + 1 < sent.words.size()) {
      const auto it = index.find(sent.word(k));
      const Span next = sent.words[k + 1];
      if (it != index.end() && next.end - span.start <= lang.config.max_word_length) {
        const std::size_t first_successor = lang.successors[it->second].front();
        if (lang.lexicon[first_successor] == sent.word(k + 1)) {
          span.end = next.end;
          ++k;
        }
      }
    }
    out.words.push_back(span);
    ++k;
  }
  return out;
}

std::vector<SegmentedSentence> coarsen(const std::vector<SegmentedSentence>& corpus, const SyntheticLanguage& lang) {
  std::vector<SegmentedSentence> out;
  out.reserve(corpus.size());
  for (const auto& sent : corpus) out.push_back(coarsen(sent, lang));
  return out;
}

}  // namespace wordprobe

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "wordprobe/attn_stats.hpp"
#include "wordprobe/corpus.hpp"
#include "wordprobe/encoder.hpp"

namespace wordprobe {

/// A forward trace paired with the gold segmentation of its characters.
/// The trace covers [CLS] + sentence + [SEP].
struct TracedSentence {
  ForwardTrace trace;
  SegmentedSentence sentence;

  bool operator==(const TracedSentence&) const = default;
};

/// Evaluation-mode traces for a corpus. Sentences longer than max_len - 2
/// characters are truncated first. Forward passes are spread over `threads`
/// workers; the result does not depend on the thread count.
std::vector<TracedSentence> trace_corpus(const Model& model, const CharVocab& vocab,
                                         std::span<const SegmentedSentence> corpus, std::size_t threads = 1);

/// Head statistics over traced sentences; empty input gives an empty table.
HeadStatTable aggregate(std::span<const TracedSentence> traced);

}  // namespace wordprobe

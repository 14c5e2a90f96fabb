#include "wordprobe/traces.hpp"

#include "wordprobe/error.hpp"
#include "wordprobe/parallel.hpp"

namespace wordprobe {

std::vector<TracedSentence> trace_corpus(const Model& model, const CharVocab& vocab,
                                         std::span<const SegmentedSentence> corpus, std::size_t threads) {
  if (model.config().vocab_size != vocab.size()) {
    throw Error(Errc::config_mismatch, "model vocabulary size differs from the vocabulary");
  }
  std::vector<TracedSentence> out(corpus.size());
  const std::size_t max_chars = model.config().max_len - 2;
  parallel_for(corpus.size(), threads, [&](std::size_t i) {
    out[i].sentence = truncate_sentence(corpus[i], max_chars);
    out[i].trace = encoder_forward(model, vocab.encode(out[i].sentence));
  });
  return out;
}

HeadStatTable aggregate(std::span<const TracedSentence> traced) {
  if (traced.empty()) return {};
  HeadStatTable table(traced.front().trace.layers, traced.front().trace.heads);
  for (const auto& t : traced) table.add(t.trace, t.sentence);
  return table;
}

}  // namespace wordprobe

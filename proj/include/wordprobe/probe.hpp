#pragma once

// Layer-wise segmentation probing: a linear softmax classifier over BMES
// trained on frozen per-character hidden states, scored by span F1.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "wordprobe/corpus.hpp"
#include "wordprobe/tensor.hpp"
#include "wordprobe/traces.hpp"

namespace wordprobe {

struct ProbeModel {
  Matrix weight;  // 4 x d
  std::array<float, kBmesCount> bias{};

  explicit ProbeModel(std::size_t dim = 0) : weight(kBmesCount, dim) {}
  std::size_t dim() const noexcept { return weight.cols(); }
  bool operator==(const ProbeModel&) const = default;
};

/// softmax(W h + b). Throws Error(shape_mismatch) when h has the wrong width.
std::array<double, kBmesCount> probe_probabilities(std::span<const float> h, const ProbeModel& model);

struct ProbeConfig {
  double lr = 2e-5;
  double dropout = 0.1;  // on probe inputs
  std::size_t epochs = 3;
  std::size_t batch_size = 8;  // characters per Adam step
  std::uint64_t seed = 42;

  void validate() const;
};

/// Character-level probe inputs for one layer. Row k of `features` belongs
/// to character k of the concatenated corpus; `offsets` delimit sentences.
struct ProbeData {
  Matrix features;
  std::vector<Bmes> labels;
  std::vector<std::size_t> offsets{0};

  std::size_t sentences() const noexcept { return offsets.size() - 1; }
  /// Throws Error(length_mismatch) when rows, labels and offsets disagree.
  void validate() const;
};

/// Layer 0 is the embedding output e_i, layer l >= 1 is h^l. Only content
/// characters are used; [CLS]/[SEP] rows are skipped.
ProbeData layer_features(std::span<const TracedSentence> traces, std::size_t layer);

struct ProbeTrainLog {
  std::vector<double> train_loss;  // eval-mode cross-entropy after each epoch
  std::vector<double> dev_f1;      // empty without dev data
  std::size_t selected_epoch = 0;  // 1-based; 0 means the initial weights
};

/// Adam on mean cross-entropy with inverted input dropout. When `dev` holds
/// sentences, the initial weights and every epoch compete on dev F1 (earliest
/// on ties); otherwise the last epoch is kept.
ProbeModel train_probe(const ProbeData& train, const ProbeConfig& config, const ProbeData* dev = nullptr,
                       ProbeTrainLog* log = nullptr);

std::vector<Bmes> predict_labels(const ProbeModel& model, const Matrix& features);

/// Repairs any label sequence into a partition: a word starts at position 0,
/// at every B or S, and right after every E or S.
SpanList decode_spans(std::span<const Bmes> labels);

struct SegScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct SegCounts {
  std::uint64_t correct = 0;
  std::uint64_t gold = 0;
  std::uint64_t predicted = 0;

  SegCounts& operator+=(const SegCounts& o) {
    correct += o.correct;
    gold += o.gold;
    predicted += o.predicted;
    return *this;
  }
  SegScore score() const;
  bool operator==(const SegCounts&) const = default;
};

/// Exact (start, end) matches. Throws Error(length_mismatch) when the two
/// span lists cover different lengths.
SegCounts match_spans(std::span<const Span> gold, std::span<const Span> pred);
SegScore seg_f1(std::span<const Span> gold, std::span<const Span> pred);

/// Micro counts over all sentences of `data`.
SegCounts evaluate_labels(const ProbeData& data, std::span<const Bmes> predicted);
SegCounts evaluate_probe(const ProbeModel& model, const ProbeData& data);
/// Every character its own word.
SegCounts all_single_counts(const ProbeData& data);

struct LayerScore {
  std::size_t layer = 0;  // 1-based
  SegScore score;
};

struct ProbeResult {
  std::vector<LayerScore> layers;
  std::optional<SegScore> embedding;  // probe on embed_out when traces carry it
  SegScore baseline_all_s;

  /// Argmax F1 over layers, lowest layer on ties.
  std::size_t best_layer() const;
};

/// One probe per layer trained on `train`, epoch chosen on `dev`, scored on
/// `test`. Probe l is seeded with mix_seed(config.seed, l).
ProbeResult layer_sweep(std::span<const TracedSentence> train, std::span<const TracedSentence> dev,
                        std::span<const TracedSentence> test, const ProbeConfig& config, std::size_t threads = 1);
ProbeResult layer_sweep(const Model& model, const CharVocab& vocab, std::span<const SegmentedSentence> train,
                        std::span<const SegmentedSentence> dev, std::span<const SegmentedSentence> test,
                        const ProbeConfig& config, std::size_t threads = 1);

/// layer,precision,recall,f1 with an `embedding` row (when present) and a
/// `baseline_all_s` footer; fractions with 6 decimals.
void write_probe_csv(std::ostream& out, const ProbeResult& result);

}  // namespace wordprobe

#pragma once

// Masked-language-model pre-training: BERT-style masking and a seeded Adam
// training loop over a segmented corpus.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "wordprobe/corpus.hpp"
#include "wordprobe/encoder.hpp"
#include "wordprobe/rng.hpp"

namespace wordprobe {

struct MaskedSequence {
  std::vector<TokenId> corrupted;           // [CLS] ... [SEP] with replacements applied
  std::vector<std::size_t> positions;       // token indices, ascending
  std::vector<TokenId> originals;           // ids before corruption, aligned with positions
};

/// Selects each content token with probability `mask_ratio` (at least one per
/// sequence; [CLS]/[SEP] never), then replaces 80% with [MASK], 10% with a
/// random character id and leaves 10% unchanged.
MaskedSequence mask_sequence(std::span<const TokenId> tokens, std::size_t vocab_size, double mask_ratio, Rng& rng);

std::vector<MaskedSequence> mask_batch(std::span<const SegmentedSentence> sentences, const CharVocab& vocab,
                                       double mask_ratio, Rng& rng);

struct MlmHyper {
  double lr = 1e-3;
  std::size_t epochs = 5;
  std::size_t batch_size = 16;  // sentences per optimizer step
  double mask_ratio = 0.15;
  /// Linear warmup over this fraction of all steps, then linear decay to 0.
  /// Zero keeps lr constant.
  double warmup_fraction = 0.1;
};

/// Learning rate for 1-based `step` out of `total_steps` under the schedule.
double scheduled_lr(const MlmHyper& hyper, std::size_t step, std::size_t total_steps);

struct MlmTrainResult {
  Model model;
  double initial_loss = 0.0;
  /// Per epoch: eval-mode loss on a fixed masking of the training corpus
  /// (drawn once from the seed), so lr = 0 leaves it bit-identical.
  std::vector<double> epoch_loss;
  /// Per epoch: mean training-batch loss (dropout, fresh masks).
  std::vector<double> epoch_train_loss;
};

/// Corpus-level mean masked-token loss in evaluation mode.
double evaluate_mlm_loss(const Model& model, std::span<const std::vector<TokenId>> sequences,
                         std::span<const MaskedSequence> masks);

/// Fraction of masked positions whose argmax prediction is the original id.
double masked_accuracy(const Model& model, std::span<const MaskedSequence> masks);

/// Sentences longer than max_len - 2 characters are truncated.
std::vector<std::vector<TokenId>> encode_corpus(std::span<const SegmentedSentence> corpus, const CharVocab& vocab,
                                                std::size_t max_len);

MlmTrainResult train_mlm(std::span<const SegmentedSentence> corpus, const CharVocab& vocab, const ModelConfig& config,
                         const MlmHyper& hyper);

}  // namespace wordprobe

#include "wordprobe/mlm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "wordprobe/adam.hpp"
#include "wordprobe/error.hpp"

namespace wordprobe {

MaskedSequence mask_sequence(std::span<const TokenId> tokens, std::size_t vocab_size, double mask_ratio, Rng& rng) {
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw Error(Errc::invalid_argument, "mask_ratio must be in (0, 1)");
  if (tokens.size() < 3) throw Error(Errc::invalid_argument, "sequence has no content tokens");
  MaskedSequence out;
  out.corrupted.assign(tokens.begin(), tokens.end());
  const std::size_t first = 1;
  const std::size_t last = tokens.size() - 1;  // exclusive; [SEP]
  for (std::size_t i = first; i < last; ++i) {
    if (rng.bernoulli(mask_ratio)) out.positions.push_back(i);
  }
  if (out.positions.empty()) out.positions.push_back(first + rng.uniform_index(last - first));
  const std::size_t char_ids = vocab_size > static_cast<std::size_t>(kFirstCharId)
                                   ? vocab_size - static_cast<std::size_t>(kFirstCharId)
                                   : 0;
  for (std::size_t pos : out.positions) {
    out.originals.push_back(tokens[pos]);
    const double u = rng.uniform();
    if (u < 0.8) {
      out.corrupted[pos] = kMaskId;
    } else if (u < 0.9 && char_ids > 0) {
      out.corrupted[pos] = kFirstCharId + static_cast<TokenId>(rng.uniform_index(char_ids));
    }
  }
  return out;
}

std::vector<std::vector<TokenId>> encode_corpus(std::span<const SegmentedSentence> corpus, const CharVocab& vocab,
                                                std::size_t max_len) {
  std::vector<std::vector<TokenId>> out;
  out.reserve(corpus.size());
  const std::size_t max_chars = max_len - 2;
  for (const auto& sent : corpus) {
    std::u32string_view chars = sent.chars;
    out.push_back(vocab.encode(chars.substr(0, std::min(chars.size(), max_chars))));
  }
  return out;
}

std::vector<MaskedSequence> mask_batch(std::span<const SegmentedSentence> sentences, const CharVocab& vocab,
                                       double mask_ratio, Rng& rng) {
  std::vector<MaskedSequence> out;
  out.reserve(sentences.size());
  for (const auto& sent : sentences) out.push_back(mask_sequence(vocab.encode(sent), vocab.size(), mask_ratio, rng));
  return out;
}

double evaluate_mlm_loss(const Model& model, std::span<const std::vector<TokenId>> sequences,
                         std::span<const MaskedSequence> masks) {
  if (sequences.size() != masks.size()) throw Error(Errc::length_mismatch, "sequences and masks differ in count");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t s = 0; s < masks.size(); ++s) {
    const auto& m = masks[s];
    const float loss = mlm_loss(model, m.corrupted, m.positions, m.originals);
    total += static_cast<double>(loss) * static_cast<double>(m.positions.size());
    count += m.positions.size();
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

double masked_accuracy(const Model& model, std::span<const MaskedSequence> masks) {
  const std::size_t d = model.config().dim;
  const std::size_t vocab = model.config().vocab_size;
  const auto params = model.params();
  const float* table = params.data() + model.layout().token_embedding();
  const float* bias = params.data() + model.layout().mlm_bias();
  std::size_t correct = 0;
  std::size_t total = 0;
  for (const auto& m : masks) {
    const ForwardTrace trace = encoder_forward(model, m.corrupted);
    for (std::size_t r = 0; r < m.positions.size(); ++r) {
      const auto h = trace.hidden_row(trace.layers - 1, m.positions[r]);
      std::size_t best = 0;
      float best_score = 0.0f;
      for (std::size_t v = 0; v < vocab; ++v) {
        float score = bias[v];
        for (std::size_t j = 0; j < d; ++j) score += h[j] * table[v * d + j];
        if (v == 0 || score > best_score) {
          best = v;
          best_score = score;
        }
      }
      if (static_cast<TokenId>(best) == m.originals[r]) ++correct;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

double scheduled_lr(const MlmHyper& hyper, std::size_t step, std::size_t total_steps) {
  if (hyper.warmup_fraction <= 0.0 || total_steps == 0) return hyper.lr;
  const double warmup = std::max(1.0, std::floor(hyper.warmup_fraction * static_cast<double>(total_steps)));
  const auto s = static_cast<double>(step);
  const auto total = static_cast<double>(total_steps);
  if (s <= warmup) return hyper.lr * s / warmup;
  if (total <= warmup) return hyper.lr;
  return hyper.lr * std::max(0.0, (total - s + 1.0) / (total - warmup));
}

MlmTrainResult train_mlm(std::span<const SegmentedSentence> corpus, const CharVocab& vocab, const ModelConfig& config,
                         const MlmHyper& hyper) {
  if (corpus.empty()) throw Error(Errc::empty_corpus, "cannot train on an empty corpus");
  if (config.vocab_size != vocab.size()) {
    throw Error(Errc::config_mismatch, "config vocab_size " + std::to_string(config.vocab_size) +
                                           " differs from vocabulary size " + std::to_string(vocab.size()));
  }
  if (hyper.batch_size == 0) throw Error(Errc::invalid_argument, "batch_size must be positive");
  if (hyper.lr < 0.0) throw Error(Errc::invalid_argument, "lr must be non-negative");
  if (!(hyper.warmup_fraction >= 0.0 && hyper.warmup_fraction < 1.0)) {
    throw Error(Errc::invalid_argument, "warmup_fraction must be in [0, 1)");
  }

  MlmTrainResult result{Model::initialize(config), 0.0, {}, {}};
  Model& model = result.model;
  const auto sequences = encode_corpus(corpus, vocab, config.max_len);

  Rng eval_rng(mix_seed(config.seed, 1));
  std::vector<MaskedSequence> eval_masks;
  eval_masks.reserve(sequences.size());
  for (const auto& seq : sequences) eval_masks.push_back(mask_sequence(seq, vocab.size(), hyper.mask_ratio, eval_rng));
  result.initial_loss = evaluate_mlm_loss(model, sequences, eval_masks);

  Adam adam(model.layout().total(), AdamConfig{hyper.lr});
  Rng order_rng(mix_seed(config.seed, 2));
  Rng mask_rng(mix_seed(config.seed, 3));
  Rng dropout_rng(mix_seed(config.seed, 4));
  std::vector<float> grad(model.layout().total());
  std::vector<std::size_t> order(sequences.size());
  const std::size_t steps_per_epoch = (sequences.size() + hyper.batch_size - 1) / hyper.batch_size;
  const std::size_t total_steps = steps_per_epoch * hyper.epochs;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    order_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += hyper.batch_size) {
      const std::size_t end = std::min(order.size(), begin + hyper.batch_size);
      std::vector<MaskedSequence> batch;
      std::size_t masked_total = 0;
      for (std::size_t b = begin; b < end; ++b) {
        batch.push_back(mask_sequence(sequences[order[b]], vocab.size(), hyper.mask_ratio, mask_rng));
        masked_total += batch.back().positions.size();
      }
      std::fill(grad.begin(), grad.end(), 0.0f);
      double batch_loss = 0.0;
      for (const auto& m : batch) {
        const float weight = static_cast<float>(m.positions.size()) / static_cast<float>(masked_total);
        const float loss = mlm_loss_and_grad(model, m.corrupted, {}, m.positions, m.originals, grad, weight,
                                             &dropout_rng);
        batch_loss += static_cast<double>(loss) * weight;
      }
      adam.set_lr(scheduled_lr(hyper, ++step, total_steps));
      adam.step(model.params(), grad);
      loss_sum += batch_loss;
      ++batches;
    }
    result.epoch_train_loss.push_back(batches == 0 ? 0.0 : loss_sum / static_cast<double>(batches));
    result.epoch_loss.push_back(evaluate_mlm_loss(model, sequences, eval_masks));
  }
  return result;
}

}  // namespace wordprobe

#include "wordprobe/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "wordprobe/adam.hpp"
#include "wordprobe/csv.hpp"
#include "wordprobe/error.hpp"
#include "wordprobe/parallel.hpp"
#include "wordprobe/rng.hpp"

namespace wordprobe {

namespace {

// Logits for one input row; `x` may be a dropped-out copy.
std::array<double, kBmesCount> logits(std::span<const float> x, const Matrix& w, std::span<const float> b) {
  std::array<double, kBmesCount> z{};
  for (std::size_t k = 0; k < kBmesCount; ++k) {
    double acc = b[k];
    const auto row = w.row(k);
    for (std::size_t j = 0; j < x.size(); ++j) acc += static_cast<double>(row[j]) * x[j];
    z[k] = acc;
  }
  return z;
}

void softmax(std::array<double, kBmesCount>& z) {
  const double top = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (double& v : z) {
    v = std::exp(v - top);
    total += v;
  }
  for (double& v : z) v /= total;
}

// Flat [W | b] view used by the optimizer.
struct FlatProbe {
  std::size_t dim;
  std::vector<float> values;

  explicit FlatProbe(const ProbeModel& m) : dim(m.dim()), values(m.weight.storage()) {
    values.insert(values.end(), m.bias.begin(), m.bias.end());
  }
  ProbeModel unpack() const {
    ProbeModel m(dim);
    std::copy_n(values.begin(), kBmesCount * dim, m.weight.data());
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(kBmesCount * dim), kBmesCount, m.bias.begin());
    return m;
  }
};

double mean_cross_entropy(const ProbeModel& model, const ProbeData& data) {
  if (data.labels.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    const auto p = probe_probabilities(data.features.row(i), model);
    total -= std::log(std::max(p[static_cast<std::size_t>(data.labels[i])], 1e-300));
  }
  return total / static_cast<double>(data.labels.size());
}

}  // namespace

std::array<double, kBmesCount> probe_probabilities(std::span<const float> h, const ProbeModel& model) {
  if (h.size() != model.dim()) throw Error(Errc::shape_mismatch, "probe input width differs from the probe");
  auto z = logits(h, model.weight, model.bias);
  softmax(z);
  return z;
}

void ProbeConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw Error(Errc::invalid_argument, "probe lr must be non-negative");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(Errc::invalid_argument, "probe dropout must be in [0, 1)");
  if (epochs == 0) throw Error(Errc::invalid_argument, "probe epochs must be at least 1");
  if (batch_size == 0) throw Error(Errc::invalid_argument, "probe batch size must be at least 1");
}

void ProbeData::validate() const {
  if (features.rows() != labels.size()) throw Error(Errc::length_mismatch, "probe features and labels differ in length");
  if (offsets.empty() || offsets.front() != 0 || offsets.back() != labels.size() ||
      !std::is_sorted(offsets.begin(), offsets.end())) {
    throw Error(Errc::length_mismatch, "probe sentence offsets do not cover the labels");
  }
}

ProbeData layer_features(std::span<const TracedSentence> traces, std::size_t layer) {
  ProbeData data;
  std::size_t dim = 0;
  std::size_t total = 0;
  for (const auto& t : traces) {
    if (layer > t.trace.layers) throw Error(Errc::index_out_of_range, "probe layer " + std::to_string(layer));
    if (layer == 0 && !t.trace.has_embed_out()) throw Error(Errc::index_out_of_range, "trace has no embedding output");
    if (t.trace.length() != t.sentence.size() + 2) throw Error(Errc::length_mismatch, "trace and sentence lengths differ");
    if (dim != 0 && t.trace.dim != dim) throw Error(Errc::config_mismatch, "traces differ in hidden width");
    dim = t.trace.dim;
    total += t.sentence.size();
  }
  data.features.resize(total, dim);
  data.labels.reserve(total);
  std::size_t row = 0;
  for (const auto& t : traces) {
    const auto labels = derive_bmes(t.sentence);
    for (std::size_t i = 0; i < t.sentence.size(); ++i) {
      const std::span<const float> src = layer == 0 ? t.trace.embed_out.row(i + 1) : t.trace.hidden_row(layer - 1, i + 1);
      std::copy(src.begin(), src.end(), data.features.row(row++).begin());
    }
    data.labels.insert(data.labels.end(), labels.begin(), labels.end());
    data.offsets.push_back(data.labels.size());
  }
  return data;
}

ProbeModel train_probe(const ProbeData& train, const ProbeConfig& config, const ProbeData* dev, ProbeTrainLog* log) {
  config.validate();
  train.validate();
  if (dev != nullptr) {
    dev->validate();
    if (dev->sentences() > 0 && dev->features.cols() != train.features.cols()) {
      throw Error(Errc::shape_mismatch, "dev features differ in width from train features");
    }
  }
  const std::size_t dim = train.features.cols();
  FlatProbe flat{ProbeModel(dim)};
  Adam adam(flat.values.size(), AdamConfig{.lr = config.lr});
  Rng rng(config.seed);
  std::vector<std::size_t> order(train.labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<float> grad(flat.values.size());
  std::vector<float> x(dim);
  const double keep = 1.0 - config.dropout;
  const bool use_dev = dev != nullptr && dev->sentences() > 0;

  ProbeTrainLog local;
  ProbeModel best = flat.unpack();
  // The untrained probe is a candidate too: on features that carry nothing it
  // predicts one label everywhere, which is the all-S segmentation.
  double best_f1 = use_dev ? evaluate_probe(best, *dev).score().f1 : -1.0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(start + config.batch_size, order.size());
      std::fill(grad.begin(), grad.end(), 0.0f);
      const ProbeModel current = flat.unpack();
      const double inv_batch = 1.0 / static_cast<double>(stop - start);
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t i = order[b];
        const auto row = train.features.row(i);
        for (std::size_t j = 0; j < dim; ++j) {
          x[j] = config.dropout > 0.0 ? (rng.bernoulli(keep) ? static_cast<float>(row[j] / keep) : 0.0f) : row[j];
        }
        auto p = logits(x, current.weight, current.bias);
        softmax(p);
        p[static_cast<std::size_t>(train.labels[i])] -= 1.0;
        for (std::size_t k = 0; k < kBmesCount; ++k) {
          const double g = p[k] * inv_batch;
          float* gw = grad.data() + k * dim;
          for (std::size_t j = 0; j < dim; ++j) gw[j] += static_cast<float>(g * x[j]);
          grad[kBmesCount * dim + k] += static_cast<float>(g);
        }
      }
      adam.step(flat.values, grad);
    }
    const ProbeModel after = flat.unpack();
    local.train_loss.push_back(mean_cross_entropy(after, train));
    if (use_dev) {
      const double f1 = evaluate_probe(after, *dev).score().f1;
      local.dev_f1.push_back(f1);
      if (f1 > best_f1) {
        best_f1 = f1;
        best = after;
        local.selected_epoch = epoch;
      }
    } else {
      best = after;
      local.selected_epoch = epoch;
    }
  }
  if (log != nullptr) *log = std::move(local);
  return best;
}

std::vector<Bmes> predict_labels(const ProbeModel& model, const Matrix& features) {
  if (features.rows() > 0 && features.cols() != model.dim()) {
    throw Error(Errc::shape_mismatch, "features differ in width from the probe");
  }
  std::vector<Bmes> out(features.rows());
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const auto z = logits(features.row(i), model.weight, model.bias);
    out[i] = static_cast<Bmes>(std::max_element(z.begin(), z.end()) - z.begin());
  }
  return out;
}

SpanList decode_spans(std::span<const Bmes> labels) {
  SpanList spans;
  std::size_t start = 0;
  for (std::size_t i = 1; i <= labels.size(); ++i) {
    const bool boundary = i == labels.size() || labels[i] == Bmes::B || labels[i] == Bmes::S ||
                          labels[i - 1] == Bmes::E || labels[i - 1] == Bmes::S;
    if (boundary) {
      spans.push_back({start, i});
      start = i;
    }
  }
  return spans;
}

SegScore SegCounts::score() const {
  SegScore s;
  if (predicted > 0) s.precision = static_cast<double>(correct) / static_cast<double>(predicted);
  if (gold > 0) s.recall = static_cast<double>(correct) / static_cast<double>(gold);
  if (s.precision + s.recall > 0.0) s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

SegCounts match_spans(std::span<const Span> gold, std::span<const Span> pred) {
  const std::size_t gold_len = gold.empty() ? 0 : gold.back().end;
  const std::size_t pred_len = pred.empty() ? 0 : pred.back().end;
  if (gold_len != pred_len) throw Error(Errc::length_mismatch, "gold and predicted spans cover different lengths");
  // Both lists are ordered partitions, so a merge walk finds exact matches.
  SegCounts c{0, gold.size(), pred.size()};
  std::size_t g = 0;
  std::size_t p = 0;
  while (g < gold.size() && p < pred.size()) {
    if (gold[g] == pred[p]) {
      ++c.correct;
      ++g;
      ++p;
    } else if (gold[g].start < pred[p].start || (gold[g].start == pred[p].start && gold[g].end < pred[p].end)) {
      ++g;
    } else {
      ++p;
    }
  }
  return c;
}

SegScore seg_f1(std::span<const Span> gold, std::span<const Span> pred) { return match_spans(gold, pred).score(); }

SegCounts evaluate_labels(const ProbeData& data, std::span<const Bmes> predicted) {
  if (predicted.size() != data.labels.size()) throw Error(Errc::length_mismatch, "prediction count differs from labels");
  SegCounts total;
  for (std::size_t s = 0; s < data.sentences(); ++s) {
    const std::size_t a = data.offsets[s];
    const std::size_t n = data.offsets[s + 1] - a;
    const std::span<const Bmes> gold_labels(data.labels.data() + a, n);
    const auto gold = decode_spans(gold_labels);
    const auto pred = decode_spans(predicted.subspan(a, n));
    total += match_spans(gold, pred);
  }
  return total;
}

SegCounts evaluate_probe(const ProbeModel& model, const ProbeData& data) {
  return evaluate_labels(data, predict_labels(model, data.features));
}

SegCounts all_single_counts(const ProbeData& data) {
  const std::vector<Bmes> all_s(data.labels.size(), Bmes::S);
  return evaluate_labels(data, all_s);
}

std::size_t ProbeResult::best_layer() const {
  if (layers.empty()) throw Error(Errc::empty_table, "probe result has no layers");
  std::size_t best = 0;
  for (std::size_t i = 1; i < layers.size(); ++i) {
    if (layers[i].score.f1 > layers[best].score.f1) best = i;
  }
  return layers[best].layer;
}

ProbeResult layer_sweep(std::span<const TracedSentence> train, std::span<const TracedSentence> dev,
                        std::span<const TracedSentence> test, const ProbeConfig& config, std::size_t threads) {
  config.validate();
  if (train.empty() || test.empty()) throw Error(Errc::empty_corpus, "probe sweep needs train and test sentences");
  const std::size_t layers = train.front().trace.layers;
  auto check = [&](std::span<const TracedSentence> set) {
    for (const auto& t : set) {
      if (t.trace.layers != layers || t.trace.dim != train.front().trace.dim) {
        throw Error(Errc::config_mismatch, "traces come from differently shaped models");
      }
    }
  };
  check(train);
  check(dev);
  check(test);
  const auto has_embed = [](std::span<const TracedSentence> set) {
    return std::all_of(set.begin(), set.end(), [](const TracedSentence& t) { return t.trace.has_embed_out(); });
  };
  const bool with_embedding = has_embed(train) && has_embed(dev) && has_embed(test);

  // Index 0 is the embedding probe; it is skipped when the traces lack it.
  std::vector<std::optional<SegScore>> scores(layers + 1);
  parallel_for(layers + 1, threads, [&](std::size_t l) {
    if (l == 0 && !with_embedding) return;
    const ProbeData train_data = layer_features(train, l);
    const ProbeData dev_data = layer_features(dev, l);
    const ProbeData test_data = layer_features(test, l);
    ProbeConfig cfg = config;
    cfg.seed = mix_seed(config.seed, l);
    const ProbeModel probe = train_probe(train_data, cfg, &dev_data);
    scores[l] = evaluate_probe(probe, test_data).score();
  });

  ProbeResult result;
  for (std::size_t l = 1; l <= layers; ++l) result.layers.push_back({l, *scores[l]});
  result.embedding = scores[0];
  result.baseline_all_s = all_single_counts(layer_features(test, layers)).score();
  return result;
}

ProbeResult layer_sweep(const Model& model, const CharVocab& vocab, std::span<const SegmentedSentence> train,
                        std::span<const SegmentedSentence> dev, std::span<const SegmentedSentence> test,
                        const ProbeConfig& config, std::size_t threads) {
  const auto tr = trace_corpus(model, vocab, train, threads);
  const auto dv = trace_corpus(model, vocab, dev, threads);
  const auto te = trace_corpus(model, vocab, test, threads);
  return layer_sweep(tr, dv, te, config, threads);
}

void write_probe_csv(std::ostream& out, const ProbeResult& result) {
  auto row = [&](const std::string& name, const SegScore& s) {
    csv::write_row(out, {name, csv::format_fixed(s.precision, 6), csv::format_fixed(s.recall, 6),
                         csv::format_fixed(s.f1, 6)});
  };
  csv::write_row(out, {"layer", "precision", "recall", "f1"});
  for (const auto& l : result.layers) row(std::to_string(l.layer), l.score);
  if (result.embedding) row("embedding", *result.embedding);
  row("baseline_all_s", result.baseline_all_s);
}

}  // namespace wordprobe

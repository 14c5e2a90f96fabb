#include "wordprobe/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "wordprobe/adam.hpp"
#include "wordprobe/csv.hpp"
#include "wordprobe/error.hpp"
#include "wordprobe/rng.hpp"

namespace wordprobe {

namespace {

constexpr std::uint64_t kHeadInitStream = 0x4EAD;
constexpr std::uint64_t kOrderStream = 1;
constexpr std::uint64_t kDropoutStream = 2;

void check_example(const TaskSpec& spec, const TaskExample& ex) {
  const auto k = static_cast<int>(spec.labels.size());
  if (!ex.segments.empty() && ex.segments.size() != ex.tokens.size()) {
    throw Error(Errc::length_mismatch, "segment ids differ in length from tokens");
  }
  if (spec.kind == TaskKind::token_tagging) {
    if (ex.labels.size() != ex.tokens.size()) throw Error(Errc::length_mismatch, "tagging labels differ from tokens");
    for (int y : ex.labels) {
      if (y != kIgnoreLabel && (y < 0 || y >= k)) throw Error(Errc::label_out_of_range, "label " + std::to_string(y));
    }
  } else {
    if (ex.labels.size() != 1) throw Error(Errc::length_mismatch, "classification examples carry exactly one label");
    if (ex.labels[0] < 0 || ex.labels[0] >= k) {
      throw Error(Errc::label_out_of_range, "label " + std::to_string(ex.labels[0]));
    }
  }
}

// (position, label) pairs that carry loss for one example.
std::vector<std::pair<std::size_t, int>> targets(const TaskSpec& spec, const TaskExample& ex) {
  std::vector<std::pair<std::size_t, int>> out;
  if (spec.kind == TaskKind::token_tagging) {
    for (std::size_t i = 0; i < ex.labels.size(); ++i) {
      if (ex.labels[i] != kIgnoreLabel) out.emplace_back(i, ex.labels[i]);
    }
  } else {
    out.emplace_back(0, ex.labels[0]);  // [CLS]
  }
  return out;
}

std::vector<double> head_probabilities(const TaskHead& head, std::span<const float> h) {
  std::vector<double> z(head.bias.size());
  for (std::size_t k = 0; k < z.size(); ++k) {
    double acc = head.bias[k];
    const auto w = head.weight.row(k);
    for (std::size_t j = 0; j < h.size(); ++j) acc += static_cast<double>(w[j]) * h[j];
    z[k] = acc;
  }
  const double top = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (double& v : z) {
    v = std::exp(v - top);
    total += v;
  }
  for (double& v : z) v /= total;
  return z;
}

std::size_t argmax(const std::vector<double>& p) {
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

std::vector<TokenId> truncated_tokens(const SegmentedSentence& sent, const CharVocab& vocab, std::size_t max_chars) {
  return vocab.encode(truncate_sentence(sent, max_chars));
}

std::size_t content_limit(std::size_t max_len, std::size_t specials) {
  if (max_len <= specials) throw Error(Errc::invalid_argument, "max_len leaves no room for characters");
  return max_len - specials;
}

}  // namespace

std::string task_kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::token_tagging: return "token_tagging";
    case TaskKind::sentence_classification: return "sentence_classification";
    case TaskKind::sentence_pair_classification: return "sentence_pair_classification";
  }
  return "unknown";
}

void TaskSpec::validate() const {
  if (labels.empty()) throw Error(Errc::invalid_argument, "task " + name + " has no labels");
}

TaskEval evaluate_task(const Model& model, const TaskHead& head, const TaskData& data) {
  TaskEval ev;
  std::size_t examples = 0;
  std::size_t hits = 0;
  std::size_t total = 0;
  const std::size_t last = model.config().layers - 1;
  for (const auto& ex : data.examples) {
    const auto t = targets(data.spec, ex);
    if (t.empty()) continue;
    const ForwardTrace trace = encoder_forward(model, ex.tokens, ex.segments);
    double loss = 0.0;
    for (const auto& [pos, y] : t) {
      const auto p = head_probabilities(head, trace.hidden_row(last, pos));
      loss -= std::log(std::max(p[static_cast<std::size_t>(y)], 1e-300));
      hits += argmax(p) == static_cast<std::size_t>(y) ? 1 : 0;
    }
    ev.loss += loss / static_cast<double>(t.size());
    total += t.size();
    ++examples;
  }
  if (examples > 0) ev.loss /= static_cast<double>(examples);
  if (total > 0) ev.accuracy = static_cast<double>(hits) / static_cast<double>(total);
  return ev;
}

FinetuneResult finetune(const Model& base, const TaskData& data, const FinetuneHyper& hyper) {
  data.spec.validate();
  if (hyper.batch_size == 0) throw Error(Errc::invalid_argument, "fine-tune batch size must be at least 1");
  if (!(hyper.lr >= 0.0)) throw Error(Errc::invalid_argument, "fine-tune lr must be non-negative");
  for (const auto& ex : data.examples) check_example(data.spec, ex);

  const std::size_t dim = base.config().dim;
  const std::size_t classes = data.spec.labels.size();
  FinetuneResult result{base, TaskHead{Matrix(classes, dim), std::vector<float>(classes, 0.0f)}, {}, 0.0, 0.0, 0.0};
  Rng init(mix_seed(hyper.seed, kHeadInitStream));
  for (float& w : result.head.weight.values()) w = static_cast<float>(0.02 * init.normal());

  const TaskEval before = evaluate_task(result.model, result.head, data);
  result.initial_loss = before.loss;
  if (hyper.epochs == 0 || data.examples.empty()) {
    result.final_loss = before.loss;
    result.accuracy = before.accuracy;
    return result;
  }

  Model& model = result.model;
  TaskHead& head = result.head;
  Adam encoder_adam(model.params().size(), AdamConfig{.lr = hyper.lr});
  Adam head_adam(classes * dim + classes, AdamConfig{.lr = hyper.lr});
  std::vector<float> encoder_grad(model.params().size());
  std::vector<float> head_grad(classes * dim + classes);
  std::vector<float> head_params(classes * dim + classes);
  Rng order_rng(mix_seed(hyper.seed, kOrderStream));
  Rng dropout_rng(mix_seed(hyper.seed, kDropoutStream));
  std::vector<std::size_t> order(data.examples.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    order_rng.shuffle(std::span<std::size_t>(order));
    double epoch_total = 0.0;
    std::size_t epoch_count = 0;
    for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
      const std::size_t stop = std::min(start + hyper.batch_size, order.size());
      std::fill(encoder_grad.begin(), encoder_grad.end(), 0.0f);
      std::fill(head_grad.begin(), head_grad.end(), 0.0f);
      const double scale = 1.0 / static_cast<double>(stop - start);
      for (std::size_t b = start; b < stop; ++b) {
        const TaskExample& ex = data.examples[order[b]];
        const auto t = targets(data.spec, ex);
        if (t.empty()) continue;
        TrainingPass pass(model, ex.tokens, ex.segments, &dropout_rng);
        const Matrix& h = pass.last_hidden();
        Matrix d_last(h.rows(), h.cols());
        const double per_target = scale / static_cast<double>(t.size());
        double loss = 0.0;
        for (const auto& [pos, y] : t) {
          auto p = head_probabilities(head, h.row(pos));
          loss -= std::log(std::max(p[static_cast<std::size_t>(y)], 1e-300));
          p[static_cast<std::size_t>(y)] -= 1.0;
          auto d_row = d_last.row(pos);
          const auto h_row = h.row(pos);
          for (std::size_t k = 0; k < classes; ++k) {
            const double g = p[k] * per_target;
            const auto w = head.weight.row(k);
            float* gw = head_grad.data() + k * dim;
            for (std::size_t j = 0; j < dim; ++j) {
              d_row[j] += static_cast<float>(g * w[j]);
              gw[j] += static_cast<float>(g * h_row[j]);
            }
            head_grad[classes * dim + k] += static_cast<float>(g);
          }
        }
        pass.backward(d_last, encoder_grad);
        epoch_total += loss / static_cast<double>(t.size());
        ++epoch_count;
      }
      encoder_adam.step(model.params(), encoder_grad);
      std::copy(head.weight.values().begin(), head.weight.values().end(), head_params.begin());
      std::copy(head.bias.begin(), head.bias.end(), head_params.begin() + static_cast<std::ptrdiff_t>(classes * dim));
      head_adam.step(head_params, head_grad);
      std::copy_n(head_params.begin(), classes * dim, head.weight.data());
      std::copy_n(head_params.begin() + static_cast<std::ptrdiff_t>(classes * dim), classes, head.bias.begin());
    }
    result.epoch_loss.push_back(epoch_count > 0 ? epoch_total / static_cast<double>(epoch_count) : 0.0);
  }
  const TaskEval after = evaluate_task(model, head, data);
  result.final_loss = after.loss;
  result.accuracy = after.accuracy;
  return result;
}

TaskData boundary_tagging_task(std::span<const SegmentedSentence> corpus, const CharVocab& vocab, std::size_t max_len) {
  TaskData data{{"boundary_tagging", TaskKind::token_tagging, {"B", "M", "E", "S"}}, {}};
  const std::size_t limit = content_limit(max_len, 2);
  for (const auto& full : corpus) {
    const SegmentedSentence sent = truncate_sentence(full, limit);
    TaskExample ex;
    ex.tokens = vocab.encode(sent);
    ex.labels.push_back(kIgnoreLabel);
    for (Bmes b : derive_bmes(sent)) ex.labels.push_back(static_cast<int>(b));
    ex.labels.push_back(kIgnoreLabel);
    data.examples.push_back(std::move(ex));
  }
  return data;
}

TaskData bag_of_chars_task(std::span<const SegmentedSentence> corpus, const CharVocab& vocab, std::size_t max_len,
                           std::size_t groups) {
  if (groups < 2) throw Error(Errc::invalid_argument, "bag-of-characters task needs at least 2 groups");
  TaskData data{{"bag_of_chars", TaskKind::sentence_classification, {}}, {}};
  for (std::size_t g = 0; g < groups; ++g) data.spec.labels.push_back("group" + std::to_string(g));
  const std::size_t limit = content_limit(max_len, 2);
  for (const auto& sent : corpus) {
    TaskExample ex;
    ex.tokens = truncated_tokens(sent, vocab, limit);
    std::vector<std::size_t> counts(groups, 0);
    for (std::size_t i = 1; i + 1 < ex.tokens.size(); ++i) ++counts[static_cast<std::size_t>(ex.tokens[i]) % groups];
    ex.labels.push_back(static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin()));
    data.examples.push_back(std::move(ex));
  }
  return data;
}

TaskData random_label_task(std::span<const SegmentedSentence> corpus, const CharVocab& vocab, std::size_t max_len,
                           std::size_t classes, std::uint64_t seed) {
  if (classes < 2) throw Error(Errc::invalid_argument, "random-label task needs at least 2 classes");
  TaskData data{{"random_labels", TaskKind::sentence_classification, {}}, {}};
  for (std::size_t c = 0; c < classes; ++c) data.spec.labels.push_back("class" + std::to_string(c));
  const std::size_t limit = content_limit(max_len, 2);
  Rng rng(seed);
  for (const auto& sent : corpus) {
    TaskExample ex;
    ex.tokens = truncated_tokens(sent, vocab, limit);
    ex.labels.push_back(static_cast<int>(rng.uniform_index(classes)));
    data.examples.push_back(std::move(ex));
  }
  return data;
}

TaskData sentence_pair_task(std::span<const SegmentedSentence> corpus, const CharVocab& vocab, std::size_t max_len,
                            std::uint64_t seed) {
  TaskData data{{"sentence_pair", TaskKind::sentence_pair_classification, {"random", "next"}}, {}};
  if (corpus.size() < 3) return data;
  const std::size_t half = content_limit(max_len, 3) / 2;
  if (half == 0) throw Error(Errc::invalid_argument, "max_len too small for sentence pairs");
  Rng rng(seed);
  for (std::size_t i = 0; i + 1 < corpus.size(); ++i) {
    const bool is_next = rng.bernoulli(0.5);
    std::size_t j = i + 1;
    if (!is_next) {
      do {
        j = rng.uniform_index(corpus.size());
      } while (j == i + 1 || j == i);
    }
    const SegmentedSentence a = truncate_sentence(corpus[i], half);
    const SegmentedSentence b = truncate_sentence(corpus[j], half);
    TaskExample ex;
    ex.tokens = vocab.encode(a);
    for (char32_t ch : b.chars) ex.tokens.push_back(vocab.id(ch));
    ex.tokens.push_back(kSepId);
    ex.segments.assign(ex.tokens.size(), 0);
    std::fill(ex.segments.begin() + static_cast<std::ptrdiff_t>(a.size() + 2), ex.segments.end(), 1);
    ex.labels.push_back(is_next ? 1 : 0);
    data.examples.push_back(std::move(ex));
  }
  return data;
}

std::string direction_name(Direction d) {
  switch (d) {
    case Direction::improved: return "improved";
    case Direction::unchanged: return "unchanged";
    case Direction::degraded: return "degraded";
  }
  return "unknown";
}

namespace {

struct SweepSummary {
  std::vector<double> best_f1;
  std::vector<LayerCurvePoint> curve;
};

SweepSummary sweep_model(const std::string& name, const Model& model, const CharVocab& vocab,
                         std::span<const ProbeDataset> datasets, const ProbeConfig& config, std::size_t threads) {
  SweepSummary s;
  for (const auto& ds : datasets) {
    const ProbeResult r = layer_sweep(model, vocab, ds.train, ds.dev, ds.test, config, threads);
    s.best_f1.push_back(r.layers[r.best_layer() - 1].score.f1);
    if (r.embedding) s.curve.push_back({name, ds.name, 0, r.embedding->f1});
    for (const auto& l : r.layers) s.curve.push_back({name, ds.name, l.layer, l.score.f1});
  }
  return s;
}

}  // namespace

DeltaReport probe_after_finetune(const Model& base, std::span<const NamedModel> finetuned, const CharVocab& vocab,
                                 std::span<const ProbeDataset> datasets, const ProbeConfig& config,
                                 std::size_t threads) {
  for (const auto& m : finetuned) {
    ModelConfig a = base.config();
    ModelConfig b = m.model.config();
    a.seed = b.seed = 0;
    a.dropout = b.dropout = 0.0f;
    if (!(a == b)) throw Error(Errc::config_mismatch, "model " + m.name + " differs in shape from the base model");
  }
  if (datasets.empty()) throw Error(Errc::empty_corpus, "no probe datasets");

  DeltaReport report;
  for (const auto& ds : datasets) report.datasets.push_back(ds.name);
  SweepSummary base_run = sweep_model("base", base, vocab, datasets, config, threads);
  report.base_f1 = base_run.best_f1;
  report.curves = std::move(base_run.curve);
  for (const auto& m : finetuned) {
    SweepSummary run = sweep_model(m.name, m.model, vocab, datasets, config, threads);
    TaskDelta td;
    td.task = m.name;
    td.dataset_f1 = run.best_f1;
    for (std::size_t i = 0; i < datasets.size(); ++i) td.delta.push_back(run.best_f1[i] - report.base_f1[i]);
    td.average_delta = std::accumulate(td.delta.begin(), td.delta.end(), 0.0) / static_cast<double>(td.delta.size());
    td.direction = td.average_delta > 0.0   ? Direction::improved
                   : td.average_delta < 0.0 ? Direction::degraded
                                            : Direction::unchanged;
    report.tasks.push_back(std::move(td));
    report.curves.insert(report.curves.end(), run.curve.begin(), run.curve.end());
  }
  return report;
}

void write_delta_csv(std::ostream& out, const DeltaReport& report) {
  std::vector<std::string> header{"task"};
  header.insert(header.end(), report.datasets.begin(), report.datasets.end());
  header.push_back("avg_delta");
  header.push_back("direction");
  csv::write_row(out, header);

  std::vector<std::string> base{"base"};
  for (double f : report.base_f1) base.push_back(csv::format_fixed(100.0 * f, 2));
  base.push_back("");
  base.push_back("");
  csv::write_row(out, base);

  auto signed_points = [](double v) {
    const std::string s = csv::format_fixed(100.0 * v, 2);
    return (v >= 0.0 && s.front() != '-') ? "+" + s : s;
  };
  for (const auto& t : report.tasks) {
    std::vector<std::string> row{t.task};
    for (std::size_t i = 0; i < t.dataset_f1.size(); ++i) {
      row.push_back(csv::format_fixed(100.0 * t.dataset_f1[i], 2) + " (" + signed_points(t.delta[i]) + ")");
    }
    row.push_back(signed_points(t.average_delta));
    row.push_back(direction_name(t.direction));
    csv::write_row(out, row);
  }
}

void write_layer_curves_csv(std::ostream& out, const DeltaReport& report) {
  csv::write_row(out, {"model", "dataset", "layer", "f1"});
  for (const auto& p : report.curves) {
    csv::write_row(out, {p.model, p.dataset, p.layer == 0 ? "embedding" : std::to_string(p.layer),
                         csv::format_fixed(p.f1, 6)});
  }
}

}  // namespace wordprobe

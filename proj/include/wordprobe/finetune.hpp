#pragma once

// Whole-encoder fine-tuning on small task heads, followed by re-probing and
// a per-task report of how segmentation F1 moved.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "wordprobe/corpus.hpp"
#include "wordprobe/encoder.hpp"
#include "wordprobe/probe.hpp"
#include "wordprobe/synthetic.hpp"

namespace wordprobe {

enum class TaskKind { token_tagging, sentence_classification, sentence_pair_classification };

std::string task_kind_name(TaskKind kind);

inline constexpr int kIgnoreLabel = -1;

struct TaskExample {
  std::vector<TokenId> tokens;
  std::vector<TokenId> segments;  // empty means all 0
  /// token_tagging: one label per token, kIgnoreLabel for [CLS]/[SEP].
  /// Classification: a single label read from the [CLS] position.
  std::vector<int> labels;
};

struct TaskSpec {
  std::string name;
  TaskKind kind = TaskKind::token_tagging;
  std::vector<std::string> labels;

  void validate() const;
};

struct TaskData {
  TaskSpec spec;
  std::vector<TaskExample> examples;
};

/// Linear map d -> |labels|.
struct TaskHead {
  Matrix weight;  // |labels| x d
  std::vector<float> bias;
};

struct FinetuneHyper {
  double lr = 2e-5;
  std::size_t epochs = 3;
  std::size_t batch_size = 8;  // examples per Adam step
  std::uint64_t seed = 42;
};

struct FinetuneResult {
  Model model;
  TaskHead head;
  std::vector<double> epoch_loss;  // mean training loss per epoch
  double initial_loss = 0.0;       // eval-mode loss before any update
  double final_loss = 0.0;         // eval-mode loss after the last epoch
  double accuracy = 0.0;           // eval-mode accuracy on the training data
};

/// Trains encoder and head jointly with Adam; `base` is copied, never
/// modified. Zero epochs returns the base parameters unchanged. Throws
/// Error(label_out_of_range) for labels outside the task's label set.
FinetuneResult finetune(const Model& base, const TaskData& data, const FinetuneHyper& hyper);

/// Eval-mode mean loss and accuracy of a fine-tuned (model, head) pair.
struct TaskEval {
  double loss = 0.0;
  double accuracy = 0.0;
};
TaskEval evaluate_task(const Model& model, const TaskHead& head, const TaskData& data);

// Desk-scale task builders. Sentences are truncated to max_len - 2 chars
// (pairs share max_len - 3).

/// BMES tags of the given segmentation, one per character.
TaskData boundary_tagging_task(std::span<const SegmentedSentence> corpus, const CharVocab& vocab, std::size_t max_len);
/// Characters fall into `groups` classes by id; the label is the class with
/// the most characters in the sentence (lowest class on ties). The label does
/// not depend on character order.
TaskData bag_of_chars_task(std::span<const SegmentedSentence> corpus, const CharVocab& vocab, std::size_t max_len,
                           std::size_t groups = 3);
/// Labels drawn independently of the input.
TaskData random_label_task(std::span<const SegmentedSentence> corpus, const CharVocab& vocab, std::size_t max_len,
                           std::size_t classes, std::uint64_t seed);
/// [CLS] a [SEP] b [SEP] with segments 0/1; label 1 when b is the sentence
/// that follows a in the corpus, 0 when b is drawn at random.
TaskData sentence_pair_task(std::span<const SegmentedSentence> corpus, const CharVocab& vocab, std::size_t max_len,
                            std::uint64_t seed);

struct ProbeDataset {
  std::string name;
  std::vector<SegmentedSentence> train;
  std::vector<SegmentedSentence> dev;
  std::vector<SegmentedSentence> test;
};

struct NamedModel {
  std::string name;
  Model model;
};

struct LayerCurvePoint {
  std::string model;
  std::string dataset;
  std::size_t layer = 0;  // 0 is the embedding probe
  double f1 = 0.0;
};

enum class Direction { improved, unchanged, degraded };
std::string direction_name(Direction d);

struct TaskDelta {
  std::string task;
  std::vector<double> dataset_f1;  // best-layer test F1 per dataset
  std::vector<double> delta;       // dataset_f1 - base
  double average_delta = 0.0;
  Direction direction = Direction::unchanged;
};

struct DeltaReport {
  std::vector<std::string> datasets;
  std::vector<double> base_f1;
  std::vector<TaskDelta> tasks;
  std::vector<LayerCurvePoint> curves;  // base first, then each task
};

/// Runs the same layer sweep (same corpora, config and seeds) on the base and
/// every fine-tuned model. Throws Error(config_mismatch) when a fine-tuned
/// model differs in shape from the base.
DeltaReport probe_after_finetune(const Model& base, std::span<const NamedModel> finetuned, const CharVocab& vocab,
                                 std::span<const ProbeDataset> datasets, const ProbeConfig& config,
                                 std::size_t threads = 1);

/// task,<dataset...>,avg_delta,direction with a leading `base` row; F1 in
/// percentage points with 2 decimals, deltas signed.
void write_delta_csv(std::ostream& out, const DeltaReport& report);
/// model,dataset,layer,f1
void write_layer_curves_csv(std::ostream& out, const DeltaReport& report);

}  // namespace wordprobe

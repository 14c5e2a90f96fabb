#pragma once

// Attention-distribution statistics over word structure:
//  * specific characters: current, previous, next, [CLS], [SEP]
//  * word boundaries: first->last and last->first within a word, first->first
//    of the next word, last->last of the previous word
//  * word windows: mean attention from a character to the members of the
//    word at offset k in [-5, 5] from its own word
// Only content characters are attention sources; [CLS]/[SEP] rows are never
// counted.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wordprobe/corpus.hpp"
#include "wordprobe/encoder.hpp"

namespace wordprobe {

enum class PatternKind : std::uint8_t {
  curr,
  next,
  prev,
  to_cls,
  to_sep,
  first_to_last,
  last_to_first,
  first_to_next_first,
  last_to_prev_last,
  word_offset,
};

inline constexpr int kMaxWordOffset = 5;
inline constexpr std::size_t kFixedPatternCount = 9;
inline constexpr std::size_t kPatternCount = kFixedPatternCount + 2 * kMaxWordOffset + 1;

struct Pattern {
  PatternKind kind = PatternKind::curr;
  int offset = 0;  // only for word_offset

  static constexpr Pattern word(int k) { return {PatternKind::word_offset, k}; }
  std::size_t index() const;
  static Pattern at(std::size_t index);
  std::string name() const;
  bool operator==(const Pattern&) const = default;
};

/// Where each content character sits in the token sequence.
struct TokenLayout {
  std::vector<std::size_t> char_token;
  std::size_t cls = 0;
  std::size_t sep = 0;
  std::size_t n_tokens = 0;

  /// [CLS] c_1 .. c_n [SEP]
  static TokenLayout standard(std::size_t n_chars);
};

/// Row-major n x n attention for one head.
struct AttentionView {
  std::span<const float> values;
  std::size_t n = 0;

  float operator()(std::size_t from, std::size_t to) const { return values[from * n + to]; }
};

struct PatternSum {
  double sum = 0.0;
  std::uint64_t count = 0;

  std::optional<double> mean() const {
    if (count == 0) return std::nullopt;
    return sum / static_cast<double>(count);
  }
  void add(double v) {
    sum += v;
    ++count;
  }
  PatternSum& operator+=(const PatternSum& o) {
    sum += o.sum;
    count += o.count;
    return *this;
  }
};

using PatternSums = std::array<PatternSum, kPatternCount>;

// Each of these adds one head's per-sentence contributions into `sums`.
// Throws Error(shape_mismatch) when the layout does not fit alpha.
void specific_char_stats(const AttentionView& alpha, const SegmentedSentence& sent, const TokenLayout& layout,
                         PatternSums& sums);
void boundary_stats(const AttentionView& alpha, const SegmentedSentence& sent, const TokenLayout& layout,
                    PatternSums& sums);
void word_window_stats(const AttentionView& alpha, const SegmentedSentence& sent, const TokenLayout& layout,
                       PatternSums& sums);
PatternSums sentence_stats(const AttentionView& alpha, const SegmentedSentence& sent, const TokenLayout& layout);

/// Micro-averaged (layer, head, pattern) sums. Layers and heads are 0-based.
class HeadStatTable {
 public:
  HeadStatTable() = default;
  HeadStatTable(std::size_t layers, std::size_t heads) : layers_(layers), heads_(heads), cells_(layers * heads) {}

  std::size_t layers() const noexcept { return layers_; }
  std::size_t heads() const noexcept { return heads_; }
  bool empty() const noexcept { return cells_.empty(); }

  PatternSums& cell(std::size_t layer, std::size_t head) { return cells_.at(layer * heads_ + head); }
  const PatternSums& cell(std::size_t layer, std::size_t head) const { return cells_.at(layer * heads_ + head); }
  std::optional<double> mean(std::size_t layer, std::size_t head, Pattern p) const {
    return cell(layer, head)[p.index()].mean();
  }
  std::uint64_t count(std::size_t layer, std::size_t head, Pattern p) const { return cell(layer, head)[p.index()].count; }

  /// Adds every statistic of one trace. Throws Error(config_mismatch) when the
  /// trace dimensions differ from the table.
  void add(const ForwardTrace& trace, const SegmentedSentence& sent);
  /// Fold of two partial tables over disjoint sentence sets.
  void merge(const HeadStatTable& other);

 private:
  std::size_t layers_ = 0;
  std::size_t heads_ = 0;
  std::vector<PatternSums> cells_;
};

/// Empty input gives a layers x heads table with all counts 0.
HeadStatTable aggregate(std::span<const ForwardTrace> traces, std::span<const SegmentedSentence> sentences,
                        std::size_t layers, std::size_t heads);
HeadStatTable aggregate(std::span<const ForwardTrace> traces, std::span<const SegmentedSentence> sentences);

struct BestHead {
  std::size_t head = 0;
  double value = 0.0;
  bool defined = false;
};

struct BestHeadReport {
  std::size_t layers = 0;
  std::vector<std::array<BestHead, kPatternCount>> per_layer;
  /// Layer holding the global maximum for each pattern (first on ties).
  std::array<std::optional<std::size_t>, kPatternCount> global_best_layer{};
};

/// Per (layer, pattern) argmax over heads, lowest head on ties.
/// Throws Error(empty_table) for a table without cells.
BestHeadReport best_heads(const HeadStatTable& table);

struct WindowPoint {
  int offset = 0;
  std::size_t layer = 0;
  std::size_t head = 0;
  std::optional<double> value;
};

/// Best head (over all layers) for each word offset -5..5.
std::vector<WindowPoint> window_curve(const HeadStatTable& table);

/// Value x 100 with one decimal, e.g. 0.9194 -> "91.9".
std::string format_percent(double fraction);

void write_head_table_csv(std::ostream& out, const HeadStatTable& table);
/// Table-1 layout: one row per layer, one column per pattern, cells
/// "value(head)" with a trailing '*' on the global maximum of the column.
void write_best_heads_csv(std::ostream& out, const BestHeadReport& report);
void write_window_curve_csv(std::ostream& out, const std::vector<WindowPoint>& curve);

struct AttentionMatrix {
  std::size_t layer = 0;  // 0-based
  std::size_t head = 0;
  std::vector<std::string> tokens;
  Matrix values;                      // n_tokens x n_tokens
  std::vector<std::size_t> boundaries;  // word start indices (character positions)
};

/// Throws Error(index_out_of_range) for a bad layer/head.
AttentionMatrix export_matrix(const ForwardTrace& trace, std::size_t layer, std::size_t head,
                              const SegmentedSentence& sent);
void write_matrix_csv(std::ostream& out, const AttentionMatrix& matrix);
AttentionMatrix read_matrix_csv(std::istream& in);
void write_matrix_svg(std::ostream& out, const AttentionMatrix& matrix);

}  // namespace wordprobe

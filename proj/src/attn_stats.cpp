#include "wordprobe/attn_stats.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "wordprobe/csv.hpp"
#include "wordprobe/error.hpp"
#include "wordprobe/utf8.hpp"

namespace wordprobe {

std::size_t Pattern::index() const {
  if (kind != PatternKind::word_offset) return static_cast<std::size_t>(kind);
  if (offset < -kMaxWordOffset || offset > kMaxWordOffset) {
    throw Error(Errc::index_out_of_range, "word offset " + std::to_string(offset));
  }
  return kFixedPatternCount + static_cast<std::size_t>(offset + kMaxWordOffset);
}

Pattern Pattern::at(std::size_t index) {
  if (index >= kPatternCount) throw Error(Errc::index_out_of_range, "pattern index " + std::to_string(index));
  if (index < kFixedPatternCount) return {static_cast<PatternKind>(index), 0};
  return word(static_cast<int>(index - kFixedPatternCount) - kMaxWordOffset);
}

std::string Pattern::name() const {
  switch (kind) {
    case PatternKind::curr: return "curr";
    case PatternKind::next: return "next";
    case PatternKind::prev: return "prev";
    case PatternKind::to_cls: return "cls";
    case PatternKind::to_sep: return "sep";
    case PatternKind::first_to_last: return "first_to_last";
    case PatternKind::last_to_first: return "last_to_first";
    case PatternKind::first_to_next_first: return "first_to_next_first";
    case PatternKind::last_to_prev_last: return "last_to_prev_last";
    case PatternKind::word_offset: break;
  }
  return offset > 0 ? "word_+" + std::to_string(offset) : "word_" + std::to_string(offset);
}

TokenLayout TokenLayout::standard(std::size_t n_chars) {
  TokenLayout layout;
  layout.char_token.resize(n_chars);
  for (std::size_t i = 0; i < n_chars; ++i) layout.char_token[i] = i + 1;
  layout.cls = 0;
  layout.sep = n_chars + 1;
  layout.n_tokens = n_chars + 2;
  return layout;
}

namespace {

void check_shapes(const AttentionView& alpha, const SegmentedSentence& sent, const TokenLayout& layout) {
  if (alpha.values.size() != alpha.n * alpha.n || layout.n_tokens != alpha.n) {
    throw Error(Errc::shape_mismatch, "attention matrix does not match the token layout");
  }
  if (layout.char_token.size() != sent.size()) {
    throw Error(Errc::shape_mismatch, "token layout does not match the sentence length");
  }
  if (layout.cls >= alpha.n || layout.sep >= alpha.n) throw Error(Errc::shape_mismatch, "special token index");
  for (std::size_t t : layout.char_token) {
    if (t >= alpha.n) throw Error(Errc::shape_mismatch, "character token index");
  }
}

PatternSum& slot(PatternSums& sums, PatternKind kind) { return sums[static_cast<std::size_t>(kind)]; }

}  // namespace

void specific_char_stats(const AttentionView& alpha, const SegmentedSentence& sent, const TokenLayout& layout,
                         PatternSums& sums) {
  check_shapes(alpha, sent, layout);
  const std::size_t n = sent.size();
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = layout.char_token[j];
    slot(sums, PatternKind::curr).add(alpha(src, src));
    if (j > 0) slot(sums, PatternKind::prev).add(alpha(src, layout.char_token[j - 1]));
    if (j + 1 < n) slot(sums, PatternKind::next).add(alpha(src, layout.char_token[j + 1]));
    slot(sums, PatternKind::to_cls).add(alpha(src, layout.cls));
    slot(sums, PatternKind::to_sep).add(alpha(src, layout.sep));
  }
}

void boundary_stats(const AttentionView& alpha, const SegmentedSentence& sent, const TokenLayout& layout,
                    PatternSums& sums) {
  check_shapes(alpha, sent, layout);
  const auto& words = sent.words;
  for (std::size_t k = 0; k < words.size(); ++k) {
    const std::size_t first = layout.char_token[words[k].start];
    const std::size_t last = layout.char_token[words[k].end - 1];
    if (words[k].length() >= 2) {
      slot(sums, PatternKind::first_to_last).add(alpha(first, last));
      slot(sums, PatternKind::last_to_first).add(alpha(last, first));
    }
    if (k + 1 < words.size()) {
      slot(sums, PatternKind::first_to_next_first).add(alpha(first, layout.char_token[words[k + 1].start]));
    }
    if (k > 0) {
      slot(sums, PatternKind::last_to_prev_last).add(alpha(last, layout.char_token[words[k - 1].end - 1]));
    }
  }
}

void word_window_stats(const AttentionView& alpha, const SegmentedSentence& sent, const TokenLayout& layout,
                       PatternSums& sums) {
  check_shapes(alpha, sent, layout);
  const auto& words = sent.words;
  const auto word_count = static_cast<long>(words.size());
  for (long k = 0; k < word_count; ++k) {
    for (std::size_t j = words[static_cast<std::size_t>(k)].start; j < words[static_cast<std::size_t>(k)].end; ++j) {
      const std::size_t src = layout.char_token[j];
      for (int o = -kMaxWordOffset; o <= kMaxWordOffset; ++o) {
        const long target = k + o;
        if (target < 0 || target >= word_count) continue;
        const Span w = words[static_cast<std::size_t>(target)];
        double acc = 0.0;
        for (std::size_t i = w.start; i < w.end; ++i) acc += alpha(src, layout.char_token[i]);
        sums[Pattern::word(o).index()].add(acc / static_cast<double>(w.length()));
      }
    }
  }
}

PatternSums sentence_stats(const AttentionView& alpha, const SegmentedSentence& sent, const TokenLayout& layout) {
  PatternSums sums{};
  specific_char_stats(alpha, sent, layout, sums);
  boundary_stats(alpha, sent, layout, sums);
  word_window_stats(alpha, sent, layout, sums);
  return sums;
}

void HeadStatTable::add(const ForwardTrace& trace, const SegmentedSentence& sent) {
  if (trace.layers != layers_ || trace.heads != heads_) {
    throw Error(Errc::config_mismatch, "trace has " + std::to_string(trace.layers) + "x" + std::to_string(trace.heads) +
                                           " layers x heads, table has " + std::to_string(layers_) + "x" +
                                           std::to_string(heads_));
  }
  const TokenLayout layout = TokenLayout::standard(sent.size());
  if (trace.length() != layout.n_tokens) {
    throw Error(Errc::shape_mismatch, "trace length " + std::to_string(trace.length()) +
                                          " does not match sentence length + 2");
  }
  for (std::size_t l = 0; l < layers_; ++l) {
    for (std::size_t m = 0; m < heads_; ++m) {
      const AttentionView alpha{trace.attention_matrix(l, m), trace.length()};
      const PatternSums sums = sentence_stats(alpha, sent, layout);
      PatternSums& target = cell(l, m);
      for (std::size_t p = 0; p < kPatternCount; ++p) target[p] += sums[p];
    }
  }
}

void HeadStatTable::merge(const HeadStatTable& other) {
  if (other.layers_ != layers_ || other.heads_ != heads_) throw Error(Errc::config_mismatch, "table shapes differ");
  for (std::size_t c = 0; c < cells_.size(); ++c) {
    for (std::size_t p = 0; p < kPatternCount; ++p) cells_[c][p] += other.cells_[c][p];
  }
}

HeadStatTable aggregate(std::span<const ForwardTrace> traces, std::span<const SegmentedSentence> sentences,
                        std::size_t layers, std::size_t heads) {
  if (traces.size() != sentences.size()) throw Error(Errc::length_mismatch, "traces and sentences differ in count");
  HeadStatTable table(layers, heads);
  for (std::size_t i = 0; i < traces.size(); ++i) table.add(traces[i], sentences[i]);
  return table;
}

HeadStatTable aggregate(std::span<const ForwardTrace> traces, std::span<const SegmentedSentence> sentences) {
  if (traces.empty()) return HeadStatTable{};
  return aggregate(traces, sentences, traces.front().layers, traces.front().heads);
}

BestHeadReport best_heads(const HeadStatTable& table) {
  if (table.empty()) throw Error(Errc::empty_table, "head statistics table has no cells");
  BestHeadReport report;
  report.layers = table.layers();
  report.per_layer.resize(table.layers());
  std::array<double, kPatternCount> global{};
  for (std::size_t l = 0; l < table.layers(); ++l) {
    for (std::size_t p = 0; p < kPatternCount; ++p) {
      BestHead best;
      for (std::size_t m = 0; m < table.heads(); ++m) {
        const auto mean = table.cell(l, m)[p].mean();
        if (!mean) continue;
        if (!best.defined || *mean > best.value) best = {m, *mean, true};
      }
      report.per_layer[l][p] = best;
      if (best.defined && (!report.global_best_layer[p] || best.value > global[p])) {
        report.global_best_layer[p] = l;
        global[p] = best.value;
      }
    }
  }
  return report;
}

std::vector<WindowPoint> window_curve(const HeadStatTable& table) {
  std::vector<WindowPoint> curve;
  for (int o = -kMaxWordOffset; o <= kMaxWordOffset; ++o) {
    WindowPoint point{o, 0, 0, std::nullopt};
    const std::size_t p = Pattern::word(o).index();
    for (std::size_t l = 0; l < table.layers(); ++l) {
      for (std::size_t m = 0; m < table.heads(); ++m) {
        const auto mean = table.cell(l, m)[p].mean();
        if (mean && (!point.value || *mean > *point.value)) {
          point.layer = l;
          point.head = m;
          point.value = mean;
        }
      }
    }
    curve.push_back(point);
  }
  return curve;
}

std::string format_percent(double fraction) { return csv::format_fixed(fraction * 100.0, 1); }

void write_head_table_csv(std::ostream& out, const HeadStatTable& table) {
  csv::write_row(out, {"layer", "head", "pattern", "mean_pct", "count"});
  for (std::size_t l = 0; l < table.layers(); ++l) {
    for (std::size_t m = 0; m < table.heads(); ++m) {
      for (std::size_t p = 0; p < kPatternCount; ++p) {
        const PatternSum& s = table.cell(l, m)[p];
        const auto mean = s.mean();
        csv::write_row(out, {std::to_string(l + 1), std::to_string(m + 1), Pattern::at(p).name(),
                             mean ? csv::format_fixed(*mean * 100.0, 4) : "", std::to_string(s.count)});
      }
    }
  }
}

void write_best_heads_csv(std::ostream& out, const BestHeadReport& report) {
  std::vector<std::string> header{"layer"};
  for (std::size_t p = 0; p < kPatternCount; ++p) header.push_back(Pattern::at(p).name());
  csv::write_row(out, header);
  for (std::size_t l = 0; l < report.layers; ++l) {
    std::vector<std::string> row{std::to_string(l + 1)};
    for (std::size_t p = 0; p < kPatternCount; ++p) {
      const BestHead& b = report.per_layer[l][p];
      if (!b.defined) {
        row.emplace_back();
        continue;
      }
      std::string cell = format_percent(b.value) + "(" + std::to_string(b.head + 1) + ")";
      if (report.global_best_layer[p] == l) cell += "*";
      row.push_back(cell);
    }
    csv::write_row(out, row);
  }
}

void write_window_curve_csv(std::ostream& out, const std::vector<WindowPoint>& curve) {
  csv::write_row(out, {"offset", "layer", "head", "mean_pct"});
  for (const auto& point : curve) {
    csv::write_row(out, {std::to_string(point.offset), point.value ? std::to_string(point.layer + 1) : "",
                         point.value ? std::to_string(point.head + 1) : "",
                         point.value ? csv::format_fixed(*point.value * 100.0, 4) : ""});
  }
}

AttentionMatrix export_matrix(const ForwardTrace& trace, std::size_t layer, std::size_t head,
                              const SegmentedSentence& sent) {
  if (layer >= trace.layers) {
    throw Error(Errc::index_out_of_range, "layer " + std::to_string(layer + 1) + " of " + std::to_string(trace.layers));
  }
  if (head >= trace.heads) {
    throw Error(Errc::index_out_of_range, "head " + std::to_string(head + 1) + " of " + std::to_string(trace.heads));
  }
  const std::size_t n = trace.length();
  if (n != sent.size() + 2) throw Error(Errc::shape_mismatch, "trace does not belong to this sentence");
  AttentionMatrix out;
  out.layer = layer;
  out.head = head;
  out.tokens.push_back("[CLS]");
  for (char32_t ch : sent.chars) out.tokens.push_back(utf8::encode(ch));
  out.tokens.push_back("[SEP]");
  const auto alpha = trace.attention_matrix(layer, head);
  out.values = Matrix(n, n, std::vector<float>(alpha.begin(), alpha.end()));
  for (const Span& w : sent.words) out.boundaries.push_back(w.start);
  return out;
}

void write_matrix_csv(std::ostream& out, const AttentionMatrix& matrix) {
  out << "# layer: " << matrix.layer + 1 << '\n';
  out << "# head: " << matrix.head + 1 << '\n';
  out << "# boundaries:";
  for (std::size_t b : matrix.boundaries) out << ' ' << b;
  out << '\n';
  std::vector<std::string> header{""};
  header.insert(header.end(), matrix.tokens.begin(), matrix.tokens.end());
  csv::write_row(out, header);
  for (std::size_t i = 0; i < matrix.values.rows(); ++i) {
    std::vector<std::string> row{matrix.tokens[i]};
    for (float v : matrix.values.row(i)) row.push_back(csv::format_float(v));
    csv::write_row(out, row);
  }
}

AttentionMatrix read_matrix_csv(std::istream& in) {
  AttentionMatrix matrix;
  std::string line;
  std::vector<std::vector<float>> rows;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.front() == '#') {
      std::istringstream comment(line.substr(1));
      std::string key;
      comment >> key;
      std::size_t value = 0;
      if (key == "layer:" && comment >> value) matrix.layer = value - 1;
      if (key == "head:" && comment >> value) matrix.head = value - 1;
      if (key == "boundaries:") {
        while (comment >> value) matrix.boundaries.push_back(value);
      }
      continue;
    }
    auto fields = csv::parse_line(line);
    if (!header_seen) {
      matrix.tokens.assign(fields.begin() + 1, fields.end());
      header_seen = true;
      continue;
    }
    if (fields.size() != matrix.tokens.size() + 1) throw Error(Errc::shape_mismatch, "matrix row width");
    std::vector<float> row;
    for (std::size_t j = 1; j < fields.size(); ++j) {
      float v = 0.0f;
      const auto& f = fields[j];
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc{}) throw Error(Errc::io_error, "bad matrix value " + f);
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  const std::size_t n = matrix.tokens.size();
  if (rows.size() != n) throw Error(Errc::shape_mismatch, "matrix is not square");
  std::vector<float> flat;
  for (auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  matrix.values = Matrix(n, n, std::move(flat));
  return matrix;
}

void write_matrix_svg(std::ostream& out, const AttentionMatrix& matrix) {
  constexpr int kCell = 18;
  constexpr int kMargin = 60;
  const int n = static_cast<int>(matrix.values.rows());
  const int size = kMargin + n * kCell + 10;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<title>layer " << matrix.layer + 1 << " head " << matrix.head + 1 << "</title>\n";
  auto escape_xml = [](const std::string& s) {
    std::string r;
    for (char c : s) {
      switch (c) {
        case '<': r += "&lt;"; break;
        case '>': r += "&gt;"; break;
        case '&': r += "&amp;"; break;
        case '"': r += "&quot;"; break;
        default: r.push_back(c);
      }
    }
    return r;
  };
  for (int i = 0; i < n; ++i) {
    const std::string label = escape_xml(matrix.tokens[static_cast<std::size_t>(i)]);
    out << "<text x=\"" << kMargin - 4 << "\" y=\"" << kMargin + i * kCell + 13 << "\" text-anchor=\"end\">" << label
        << "</text>\n";
    out << "<text x=\"" << kMargin + i * kCell + 9 << "\" y=\"" << kMargin - 6 << "\" text-anchor=\"middle\">" << label
        << "</text>\n";
    for (int j = 0; j < n; ++j) {
      const float v = matrix.values(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
      const int shade = 255 - static_cast<int>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
      char color[8];
      std::snprintf(color, sizeof color, "#%02x%02xff", shade, shade);
      out << "<rect x=\"" << kMargin + j * kCell << "\" y=\"" << kMargin + i * kCell << "\" width=\"" << kCell
          << "\" height=\"" << kCell << "\" fill=\"" << color << "\"/>\n";
    }
  }
  // Word boundaries sit before each word-initial character (token index + 1).
  for (std::size_t b : matrix.boundaries) {
    const int pos = kMargin + static_cast<int>(b + 1) * kCell;
    out << "<line x1=\"" << pos << "\" y1=\"" << kMargin << "\" x2=\"" << pos << "\" y2=\"" << kMargin + n * kCell
        << "\" stroke=\"red\"/>\n";
    out << "<line x1=\"" << kMargin << "\" y1=\"" << pos << "\" x2=\"" << kMargin + n * kCell << "\" y2=\"" << pos
        << "\" stroke=\"red\"/>\n";
  }
  out << "</svg>\n";
}

}  // namespace wordprobe

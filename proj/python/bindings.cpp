#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "wordprobe/attn_stats.hpp"
#include "wordprobe/checkpoint.hpp"
#include "wordprobe/cli.hpp"
#include "wordprobe/corpus.hpp"
#include "wordprobe/dumps.hpp"
#include "wordprobe/error.hpp"
#include "wordprobe/probe.hpp"
#include "wordprobe/utf8.hpp"

namespace py = pybind11;
using namespace wordprobe;

namespace {

using SpanTuples = std::vector<std::pair<std::size_t, std::size_t>>;

SpanTuples to_tuples(const SpanList& spans) {
  SpanTuples out;
  for (const Span& s : spans) out.emplace_back(s.start, s.end);
  return out;
}

SpanList from_tuples(const SpanTuples& spans) {
  SpanList out;
  for (auto [a, b] : spans) out.push_back({a, b});
  return out;
}

std::vector<Bmes> labels_from(const std::string& text) {
  std::vector<Bmes> out;
  for (char c : text) {
    switch (c) {
      case 'B': out.push_back(Bmes::B); break;
      case 'M': out.push_back(Bmes::M); break;
      case 'E': out.push_back(Bmes::E); break;
      case 'S': out.push_back(Bmes::S); break;
      default: throw Error(Errc::invalid_argument, std::string("not a BMES label: '") + c + "'");
    }
  }
  return out;
}

py::array_t<float> array(const float* data, std::vector<py::ssize_t> shape) {
  py::array_t<float> out(shape);
  std::copy(data, data + out.size(), out.mutable_data());
  return out;
}

py::dict trace_dict(const ForwardTrace& t, const std::vector<std::string>& token_texts) {
  const auto n = static_cast<py::ssize_t>(t.length());
  const auto L = static_cast<py::ssize_t>(t.layers), M = static_cast<py::ssize_t>(t.heads),
             d = static_cast<py::ssize_t>(t.dim);
  py::dict out;
  out["tokens"] = token_texts;
  out["attention"] = array(t.attention.data(), {L, M, n, n});
  out["hidden"] = array(t.hidden.data(), {L, n, d});
  if (t.has_embed_out()) out["embed"] = array(t.embed_out.values().data(), {n, d});
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Core routines of the wordprobe toolkit";
  py::register_exception<Error>(m, "WordprobeError", PyExc_ValueError);

  m.def("random_baseline", py::overload_cast<double>(&random_baseline), py::arg("avg_sentence_length"));
  m.def("format_baseline", &format_baseline, py::arg("baseline"));

  m.def(
      "parse_line",
      [](const std::string& line) {
        const SegmentedSentence s = parse_segmented_line(line);
        return py::make_tuple(utf8::encode(s.chars), to_tuples(s.words));
      },
      py::arg("line"), "Characters and (start, end) word spans of a space-segmented line.");
  m.def(
      "bmes",
      [](const std::string& line) {
        std::string out;
        for (Bmes b : derive_bmes(parse_segmented_line(line))) out.push_back(bmes_char(b));
        return out;
      },
      py::arg("line"));
  m.def(
      "decode_spans", [](const std::string& labels) { return to_tuples(decode_spans(labels_from(labels))); },
      py::arg("labels"));
  m.def(
      "seg_f1",
      [](const SpanTuples& gold, const SpanTuples& pred) {
        const SegScore s = seg_f1(from_tuples(gold), from_tuples(pred));
        return py::make_tuple(s.precision, s.recall, s.f1);
      },
      py::arg("gold"), py::arg("pred"), "(precision, recall, f1) over exact span matches.");

  m.def("pattern_names", [] {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < kPatternCount; ++i) out.push_back(Pattern::at(i).name());
    return out;
  });
  m.def(
      "sentence_stats",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> alpha, const std::string& line) {
        const SegmentedSentence s = parse_segmented_line(line);
        if (alpha.ndim() != 2 || alpha.shape(0) != alpha.shape(1)) {
          throw Error(Errc::shape_mismatch, "alpha must be a square matrix");
        }
        const auto n = static_cast<std::size_t>(alpha.shape(0));
        const PatternSums sums =
            sentence_stats({std::span(alpha.data(), n * n), n}, s, TokenLayout::standard(s.size()));
        py::dict out;
        for (std::size_t i = 0; i < kPatternCount; ++i) {
          const auto mean = sums[i].mean();
          out[py::str(Pattern::at(i).name())] = mean ? py::object(py::float_(*mean)) : py::none();
        }
        return out;
      },
      py::arg("alpha"), py::arg("line"),
      "Per-pattern mean attention of one head over [CLS] + line + [SEP]; None where a pattern has no pairs.");

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "wordprobe");
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs one subcommand; returns (exit_code, stdout, stderr).");

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_static("load", &load_checkpoint, py::arg("path"))
      .def_property_readonly("layers", [](const Checkpoint& c) { return c.model.config().layers; })
      .def_property_readonly("heads", [](const Checkpoint& c) { return c.model.config().heads; })
      .def_property_readonly("dim", [](const Checkpoint& c) { return c.model.config().dim; })
      .def_property_readonly("max_len", [](const Checkpoint& c) { return c.model.config().max_len; })
      .def_property_readonly("vocab_size", [](const Checkpoint& c) { return c.vocab.size(); })
      .def(
          "trace",
          [](const Checkpoint& c, const std::string& text) {
            const std::vector<TokenId> ids = c.vocab.encode(utf8::decode(text));
            const ForwardTrace t = encoder_forward(c.model, ids);
            std::vector<std::string> texts;
            for (TokenId id : ids) texts.push_back(c.vocab.token_text(id));
            return trace_dict(t, texts);
          },
          py::arg("text"), "Evaluation-mode attention and hidden states for unsegmented text.");

  m.def(
      "read_dump",
      [](const std::string& dir) {
        py::list out;
        for (const DumpRecord& r : read_dump(dir)) {
          py::dict d = trace_dict(r.traced.trace, r.token_texts);
          d["text"] = utf8::encode(r.traced.sentence.chars);
          d["words"] = to_tuples(r.traced.sentence.words);
          out.append(d);
        }
        return out;
      },
      py::arg("path"));
}

#include <cmath>
#include <cstring>
#include <filesystem>

#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"
#include "wordprobe/checkpoint.hpp"
#include "wordprobe/dumps.hpp"
#include "wordprobe/error.hpp"
#include "wordprobe/probe.hpp"
#include "wordprobe/synthetic.hpp"

using namespace wordprobe;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  SyntheticLanguage lang = make_language({});
  std::vector<SegmentedSentence> corpus = sample_corpus(lang, 3, 51);
  CharVocab vocab = build_vocab(corpus, 1);
  Model model = [&] {
    ModelConfig c = testutil::tiny_config(vocab.size());
    c.max_len = 48;
    return Model::initialize(c);
  }();
  std::vector<TracedSentence> traces = trace_corpus(model, vocab, corpus);
};

Errc read_error(const fs::path& dir) {
  try {
    read_dump(dir);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::invalid_argument;
}

bool same_bits(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size_bytes()) == 0;
}

}  // namespace

TEST_CASE("write then read is bit-identical") {
  Fixture f;
  testutil::TempDir dir("dump");
  write_dump(dir / "d", f.traces, f.vocab);
  DumpReader reader(dir / "d");
  CHECK(reader.manifest().sentences == 3);
  CHECK(reader.manifest().layers == 2);
  CHECK(reader.manifest().has_embed);
  CHECK(reader.manifest().vocab_size == f.vocab.size());
  const auto records = read_dump(dir / "d");
  REQUIRE(records.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& got = records[i].traced;
    CHECK(got == f.traces[i]);
    CHECK(same_bits(got.trace.attention, f.traces[i].trace.attention));
    CHECK(same_bits(got.trace.hidden, f.traces[i].trace.hidden));
    CHECK(same_bits(got.trace.embed_out.values(), f.traces[i].trace.embed_out.values()));
    CHECK(records[i].token_texts.front() == "[CLS]");
    CHECK(records[i].token_texts.size() == got.trace.length());
  }
  const std::string manifest = testutil::slurp(dir / "d" / "manifest.txt");
  CHECK(manifest.find("endianness=little") != std::string::npos);
  CHECK(manifest.find("format=wordprobe-dump") != std::string::npos);
}

TEST_CASE("traces without embedding output") {
  Fixture f;
  for (auto& t : f.traces) t.trace.embed_out = Matrix{};
  testutil::TempDir dir("dump_noembed");
  write_dump(dir / "d", f.traces, f.vocab);
  const auto back = read_dump_traces(dir / "d");
  CHECK(back == f.traces);
  f.traces[0].trace.embed_out = Matrix(f.traces[0].trace.length(), 8);
  CHECK_THROWS_AS(write_dump(dir / "e", f.traces, f.vocab), Error);
}

TEST_CASE("empty archive") {
  Fixture f;
  testutil::TempDir dir("dump_empty");
  write_dump(dir / "d", {}, f.vocab);
  CHECK(read_dump(dir / "d").empty());
  CHECK(read_error(dir / "missing") == Errc::io_error);
}

TEST_CASE("corruption is detected") {
  Fixture f;
  testutil::TempDir dir("dump_bad");
  write_dump(dir / "d", f.traces, f.vocab);
  const std::string records = testutil::slurp(dir / "d" / "records.bin");
  const std::string manifest = testutil::slurp(dir / "d" / "manifest.txt");
  auto reset = [&] {
    testutil::spit(dir / "d" / "records.bin", records);
    testutil::spit(dir / "d" / "manifest.txt", manifest);
  };

  SUBCASE("truncation at many cut points") {
    for (std::size_t cut = 0; cut < records.size(); cut += records.size() / 37 + 1) {
      testutil::spit(dir / "d" / "records.bin", records.substr(0, cut));
      CHECK(read_error(dir / "d") == Errc::corrupt_archive);
    }
  }
  SUBCASE("trailing bytes") {
    testutil::spit(dir / "d" / "records.bin", records + "x");
    CHECK(read_error(dir / "d") == Errc::corrupt_archive);
  }
  SUBCASE("manifest dimensions disagree with the blobs") {
    std::string m = manifest;
    m.replace(m.find("heads=2"), 7, "heads=1");
    testutil::spit(dir / "d" / "manifest.txt", m);
    CHECK(read_error(dir / "d") == Errc::corrupt_archive);
    reset();
    m = manifest;
    m.replace(m.find("sentences=3"), 11, "sentences=4");
    testutil::spit(dir / "d" / "manifest.txt", m);
    CHECK(read_error(dir / "d") == Errc::corrupt_archive);
  }
  SUBCASE("huge length field") {
    std::string r = records;
    const std::uint64_t huge = 1ull << 60;
    std::memcpy(r.data(), &huge, 8);
    testutil::spit(dir / "d" / "records.bin", r);
    CHECK(read_error(dir / "d") == Errc::corrupt_archive);
  }
  SUBCASE("wrong format tag") {
    std::string m = manifest;
    m.replace(m.find("wordprobe-dump"), 14, "something-else");
    testutil::spit(dir / "d" / "manifest.txt", m);
    CHECK(read_error(dir / "d") == Errc::corrupt_archive);
  }
}

TEST_CASE("attention rows are renormalized or rejected") {
  Fixture f;
  testutil::TempDir dir("dump_norm");
  auto slightly = f.traces;
  for (float& v : std::span(slightly[0].trace.attention).first(slightly[0].trace.length())) v *= 1.005f;
  write_dump(dir / "a", slightly, f.vocab);
  const auto back = read_dump_traces(dir / "a");
  const auto row = std::span(back[0].trace.attention).first(back[0].trace.length());
  double total = 0.0;
  for (float v : row) total += v;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(back[1] == f.traces[1]);

  auto badly = f.traces;
  for (float& v : std::span(badly[2].trace.attention).first(badly[2].trace.length())) v *= 1.05f;
  write_dump(dir / "b", badly, f.vocab);
  CHECK(read_error(dir / "b") == Errc::normalization_violation);
}

TEST_CASE("hand-built archive with uniform attention") {
  const auto sent = parse_segmented_line("ab c");
  const auto vocab = build_vocab(std::vector{sent}, 1);
  TracedSentence t;
  t.sentence = sent;
  t.trace.tokens = vocab.encode(sent);
  t.trace.layers = 1;
  t.trace.heads = 1;
  t.trace.dim = 2;
  t.trace.attention.assign(25, 0.2f);
  t.trace.hidden.assign(10, 0.0f);
  testutil::TempDir dir("dump_hand");
  write_dump(dir / "d", std::vector{t}, vocab);
  const auto table = aggregate(read_dump_traces(dir / "d"));
  for (std::size_t p = 0; p < 5; ++p) CHECK(*table.mean(0, 0, Pattern::at(p)) == doctest::Approx(0.2));
}

TEST_CASE("statistics and probes agree between the dump and memory paths") {
  const auto lang = make_language({});
  const auto train = sample_corpus(lang, 30, 61), dev = sample_corpus(lang, 8, 62), test = sample_corpus(lang, 8, 63);
  const auto vocab = build_vocab(train, 1);
  ModelConfig c = testutil::tiny_config(vocab.size());
  c.max_len = 48;
  const Model model = Model::initialize(c);
  const auto tr = trace_corpus(model, vocab, train), dv = trace_corpus(model, vocab, dev),
             te = trace_corpus(model, vocab, test);
  testutil::TempDir dir("dump_dual");
  write_dump(dir / "train", tr, vocab);
  write_dump(dir / "dev", dv, vocab);
  write_dump(dir / "test", te, vocab);
  const auto tr2 = read_dump_traces(dir / "train"), dv2 = read_dump_traces(dir / "dev"),
             te2 = read_dump_traces(dir / "test");

  const auto a = aggregate(tr), b = aggregate(tr2);
  for (std::size_t l = 0; l < a.layers(); ++l) {
    for (std::size_t m = 0; m < a.heads(); ++m) {
      for (std::size_t p = 0; p < kPatternCount; ++p) {
        const auto x = a.mean(l, m, Pattern::at(p)), y = b.mean(l, m, Pattern::at(p));
        REQUIRE(x.has_value() == y.has_value());
        if (x) CHECK(std::abs(*x - *y) < 1e-6);
      }
    }
  }
  ProbeConfig pc;
  pc.lr = 1e-2;
  const auto p1 = layer_sweep(tr, dv, te, pc), p2 = layer_sweep(tr2, dv2, te2, pc);
  for (std::size_t l = 0; l < p1.layers.size(); ++l) CHECK(std::abs(p1.layers[l].score.f1 - p2.layers[l].score.f1) < 1e-6);
  CHECK(std::abs(p1.embedding->f1 - p2.embedding->f1) < 1e-6);
}

#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"
#include "wordprobe/error.hpp"
#include "wordprobe/probe.hpp"
#include "wordprobe/synthetic.hpp"

using namespace wordprobe;

namespace {

std::vector<Bmes> labels_of(const std::string& text) {
  std::vector<Bmes> out;
  for (char c : text) out.push_back(c == 'B' ? Bmes::B : c == 'M' ? Bmes::M : c == 'E' ? Bmes::E : Bmes::S);
  return out;
}

using testutil::data_from;
using testutil::one_hot;

}  // namespace

TEST_CASE("probe probabilities") {
  ProbeModel m(2);
  auto p = probe_probabilities(std::vector<float>{0.3f, -1.0f}, m);
  for (double v : p) CHECK(v == doctest::Approx(0.25));
  m.weight(0, 0) = 1.0f;
  m.weight(1, 1) = 1.0f;
  p = probe_probabilities(std::vector<float>{static_cast<float>(std::log(2.0)), 0.0f}, m);
  CHECK(p[0] == doctest::Approx(0.4));
  CHECK(p[1] == doctest::Approx(0.2));
  CHECK(p[3] == doctest::Approx(0.2));
  m.bias[2] = 30.0f;
  p = probe_probabilities(std::vector<float>{0.0f, 0.0f}, m);
  CHECK(p[2] > 1 - 1e-9);
  CHECK_THROWS_AS(probe_probabilities(std::vector<float>{1.0f}, m), Error);
}

TEST_CASE("decoding valid and invalid label sequences") {
  CHECK(decode_spans(labels_of("BES")) == SpanList{{0, 2}, {2, 3}});
  CHECK(decode_spans(labels_of("BME")) == SpanList{{0, 3}});
  // Repair rule: E closes a word, M after E opens one, B opens one.
  CHECK(decode_spans(labels_of("EMB")) == SpanList{{0, 1}, {1, 2}, {2, 3}});
  CHECK(decode_spans(labels_of("MMM")) == SpanList{{0, 3}});
  CHECK(decode_spans(labels_of("BB")) == SpanList{{0, 1}, {1, 2}});
}

TEST_CASE("decoding is a partition and matches the reference for every sequence up to length 8") {
  for (std::size_t n = 1; n <= 8; ++n) {
    std::vector<Bmes> labels(n, Bmes::B);
    std::size_t total = 1;
    for (std::size_t i = 0; i < n; ++i) total *= 4;
    for (std::size_t code = 0; code < total; ++code) {
      std::size_t c = code;
      for (std::size_t i = 0; i < n; ++i, c /= 4) labels[i] = static_cast<Bmes>(c % 4);
      const auto spans = decode_spans(labels);
      REQUIRE(is_partition(spans, n));
      REQUIRE(oracle::as_set(spans) == oracle::decode(labels));
    }
  }
}

TEST_CASE("span F1") {
  const SpanList gold{{0, 2}, {2, 3}};
  const SpanList pred{{0, 1}, {1, 2}, {2, 3}};
  const auto s = seg_f1(gold, pred);
  CHECK(s.precision == doctest::Approx(1.0 / 3));
  CHECK(s.recall == doctest::Approx(0.5));
  CHECK(s.f1 == doctest::Approx(0.4));
  const auto same = seg_f1(gold, gold);
  CHECK(same.f1 == 1.0);
  CHECK(same.precision == 1.0);
  CHECK_THROWS_AS(seg_f1(gold, SpanList{{0, 4}}), Error);
  CHECK(SegCounts{}.score().f1 == 0.0);
}

TEST_CASE("span F1 agrees with the brute-force recount") {
  Rng rng(21);
  SegCounts pooled;
  oracle::Counts pooled_ref;
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = 1 + rng.uniform_index(20);
    const auto gold_labels = oracle::random_labels(rng, n);
    const auto pred_labels = oracle::random_labels(rng, n);
    const auto gold = decode_spans(gold_labels);
    const auto pred = decode_spans(pred_labels);
    const auto got = match_spans(gold, pred);
    const auto want = oracle::count_matches(oracle::decode(gold_labels), oracle::decode(pred_labels));
    REQUIRE(got.correct == want.correct);
    REQUIRE(got.gold == want.gold);
    REQUIRE(got.predicted == want.pred);
    CHECK(got.score().f1 == oracle::f1(want));
    // Swapping gold and prediction swaps precision and recall.
    const auto swapped = seg_f1(pred, gold);
    CHECK(swapped.precision == got.score().recall);
    CHECK(swapped.recall == got.score().precision);
    CHECK(swapped.f1 == doctest::Approx(got.score().f1));
    pooled += got;
    pooled_ref.correct += want.correct;
    pooled_ref.gold += want.gold;
    pooled_ref.pred += want.pred;
  }
  CHECK(pooled.score().f1 == doctest::Approx(oracle::f1(pooled_ref)));
}

TEST_CASE("trading a wrong predicted span for a correct one never lowers F1") {
  const SpanList gold{{0, 2}, {2, 3}, {3, 5}};
  const SpanList before{{0, 1}, {1, 3}, {3, 5}};
  const SpanList after{{0, 2}, {2, 3}, {3, 5}};
  CHECK(seg_f1(gold, after).f1 >= seg_f1(gold, before).f1);
  Rng rng(22);
  for (int t = 0; t < 1000; ++t) {
    const std::uint64_t g = 1 + rng.uniform_index(30);
    const std::uint64_t p = 1 + rng.uniform_index(30);
    const std::uint64_t c = rng.uniform_index(std::min(g, p));
    CHECK(SegCounts{c + 1, g, p}.score().f1 >= SegCounts{c, g, p}.score().f1);
  }
}

TEST_CASE("probe learns one-hot oracle features at the default learning rate") {
  const auto lang = make_language({});
  const auto sents = sample_corpus(lang, 100, 5);
  const ProbeData d = data_from(sents, one_hot);
  const ProbeModel m = train_probe(d, ProbeConfig{});
  CHECK(evaluate_probe(m, d).score().f1 >= 0.99);
}

TEST_CASE("probe on noise with shuffled labels stays near the all-S baseline") {
  const auto lang = make_language({});
  Rng rng(7);
  auto noise_split = [&](std::uint64_t seed) {
    ProbeData d = data_from(sample_corpus(lang, 200, seed), [&](Bmes) {
      std::vector<float> v(16);
      for (auto& x : v) x = static_cast<float>(rng.normal());
      return v;
    });
    rng.shuffle(std::span(d.labels));
    return d;
  };
  const ProbeData train = noise_split(6), dev = noise_split(16), test = noise_split(26);
  for (double lr : {2e-5, 1e-3}) {
    CAPTURE(lr);
    ProbeConfig cfg;
    cfg.lr = lr;
    const ProbeModel m = train_probe(train, cfg, &dev);
    const double f1 = evaluate_probe(m, test).score().f1;
    const double base = all_single_counts(test).score().f1;
    CHECK(std::abs(f1 - base) <= 0.05);
  }
}

TEST_CASE("probe training details") {
  const auto lang = make_language({});
  const auto sents = sample_corpus(lang, 60, 8);
  Rng rng(9);
  const ProbeData d = data_from(sents, [&](Bmes b) {
    auto v = one_hot(b);
    for (auto& x : v) x += 0.8f * static_cast<float>(rng.normal());
    return v;
  });

  ProbeConfig cfg;
  cfg.lr = 0.0;
  CHECK(train_probe(d, cfg) == ProbeModel(4));

  cfg.lr = 5e-3;
  cfg.epochs = 4;
  ProbeTrainLog log;
  const ProbeModel a = train_probe(d, cfg, &d, &log);
  CHECK(a == train_probe(d, cfg, &d));
  CHECK(log.train_loss.size() == 4);
  CHECK(log.dev_f1.size() == 4);
  REQUIRE(log.selected_epoch >= 1);
  const double best = *std::max_element(log.dev_f1.begin(), log.dev_f1.end());
  CHECK(log.dev_f1[log.selected_epoch - 1] == best);
  CHECK(std::find(log.dev_f1.begin(), log.dev_f1.end(), best) - log.dev_f1.begin() == long(log.selected_epoch - 1));
  CHECK(log.train_loss.back() < std::log(4.0));

  cfg.epochs = 0;
  CHECK_THROWS_AS(train_probe(d, cfg), Error);
  ProbeData broken = d;
  broken.labels.pop_back();
  try {
    train_probe(broken, ProbeConfig{});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::length_mismatch);
  }
}

TEST_CASE("layer sweep on a small encoder") {
  const auto lang = make_language({});
  const auto train = sample_corpus(lang, 40, 1);
  const auto dev = sample_corpus(lang, 10, 2);
  const auto test = sample_corpus(lang, 10, 3);
  const auto vocab = build_vocab(train, 1);
  ModelConfig cfg = testutil::tiny_config(vocab.size(), 3);
  cfg.max_len = 48;
  const Model model = Model::initialize(cfg);
  const auto before = model.checksum();

  ProbeConfig pc;
  pc.lr = 1e-2;
  const ProbeResult r = layer_sweep(model, vocab, train, dev, test, pc, 1);
  CHECK(model.checksum() == before);
  REQUIRE(r.layers.size() == 3);
  CHECK(r.layers[0].layer == 1);
  CHECK(r.embedding.has_value());
  for (const auto& l : r.layers) CHECK(l.score.f1 >= 0.0);

  // Thread count does not change results.
  const ProbeResult r2 = layer_sweep(model, vocab, train, dev, test, pc, 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(r2.layers[i].score.f1 == r.layers[i].score.f1);

  std::ostringstream csv;
  write_probe_csv(csv, r);
  const std::string text = csv.str();
  CHECK(text.rfind("layer,precision,recall,f1\n1,", 0) == 0);
  CHECK(text.find("\nembedding,") != std::string::npos);
  CHECK(text.find("\nbaseline_all_s,") != std::string::npos);
  CHECK(std::count(text.begin(), text.end(), '\n') == 6);

  ModelConfig one = cfg;
  one.layers = 1;
  CHECK(layer_sweep(Model::initialize(one), vocab, train, dev, test, pc).layers.size() == 1);
}

TEST_CASE("best layer picks the lowest layer on ties") {
  ProbeResult r;
  r.layers = {{1, {0, 0, 0.5}}, {2, {0, 0, 0.7}}, {3, {0, 0, 0.7}}};
  CHECK(r.best_layer() == 2);
  CHECK_THROWS_AS(ProbeResult{}.best_layer(), Error);
}

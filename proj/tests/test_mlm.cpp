#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "test_util.hpp"
#include "wordprobe/error.hpp"
#include "wordprobe/mlm.hpp"
#include "wordprobe/synthetic.hpp"

using namespace wordprobe;

TEST_CASE("masking never touches [CLS]/[SEP] and always masks something") {
  Rng rng(1);
  std::size_t selected = 0, content = 0, masked = 0, kept = 0;
  for (int t = 0; t < 2000; ++t) {
    std::vector<TokenId> toks{kClsId};
    const std::size_t n = 1 + rng.uniform_index(12);
    for (std::size_t i = 0; i < n; ++i) toks.push_back(kFirstCharId + static_cast<TokenId>(rng.uniform_index(20)));
    toks.push_back(kSepId);
    const auto m = mask_sequence(toks, kFirstCharId + 20, 0.15, rng);
    REQUIRE_FALSE(m.positions.empty());
    CHECK(std::is_sorted(m.positions.begin(), m.positions.end()));
    CHECK(m.positions.front() >= 1);
    CHECK(m.positions.back() <= n);
    CHECK(m.corrupted.front() == kClsId);
    CHECK(m.corrupted.back() == kSepId);
    for (std::size_t k = 0; k < m.positions.size(); ++k) {
      CHECK(m.originals[k] == toks[m.positions[k]]);
      masked += m.corrupted[m.positions[k]] == kMaskId;
      kept += m.corrupted[m.positions[k]] == toks[m.positions[k]];
    }
    for (std::size_t i = 0; i < toks.size(); ++i) {
      if (!std::binary_search(m.positions.begin(), m.positions.end(), i)) CHECK(m.corrupted[i] == toks[i]);
    }
    selected += m.positions.size();
    content += n;
  }
  // At least one position per sequence pushes the rate a little above 0.15.
  CHECK(double(selected) / double(content) == doctest::Approx(0.18).epsilon(0.2));
  CHECK(double(masked) / double(selected) == doctest::Approx(0.8).epsilon(0.05));
  // 10% unchanged plus random replacements that hit the original id.
  CHECK(double(kept) / double(selected) == doctest::Approx(0.105).epsilon(0.25));
  std::vector<TokenId> empty{kClsId, kSepId};
  CHECK_THROWS_AS(mask_sequence(empty, 30, 0.15, rng), Error);
  std::vector<TokenId> one{kClsId, 7, kSepId};
  CHECK_THROWS_AS(mask_sequence(one, 30, 0.0, rng), Error);
}

TEST_CASE("selection rate over 10k characters") {
  Rng rng(4);
  std::size_t selected = 0;
  for (int t = 0; t < 200; ++t) {
    std::vector<TokenId> toks{kClsId};
    for (int i = 0; i < 50; ++i) toks.push_back(kFirstCharId + static_cast<TokenId>(rng.uniform_index(20)));
    toks.push_back(kSepId);
    selected += mask_sequence(toks, kFirstCharId + 20, 0.15, rng).positions.size();
  }
  CHECK(std::abs(double(selected) / 10000.0 - 0.15) <= 0.01);

  std::vector<TokenId> single{kClsId, 9, kSepId};
  for (int t = 0; t < 100; ++t) CHECK(mask_sequence(single, 30, 0.15, rng).positions.size() == 1);
}

TEST_CASE("learning-rate schedule") {
  MlmHyper h;
  h.lr = 1.0;
  h.warmup_fraction = 0.1;
  CHECK(scheduled_lr(h, 1, 100) == doctest::Approx(0.1));
  CHECK(scheduled_lr(h, 10, 100) == doctest::Approx(1.0));
  CHECK(scheduled_lr(h, 11, 100) == doctest::Approx(1.0));
  CHECK(scheduled_lr(h, 100, 100) == doctest::Approx(1.0 / 90));
  for (std::size_t s = 11; s < 100; ++s) CHECK(scheduled_lr(h, s + 1, 100) < scheduled_lr(h, s, 100));
  h.warmup_fraction = 0.0;
  CHECK(scheduled_lr(h, 1, 100) == 1.0);
  CHECK(scheduled_lr(h, 100, 100) == 1.0);
}

TEST_CASE("encode_corpus truncates to max_len") {
  std::vector<SegmentedSentence> corpus{parse_segmented_line("一二三 四五六七")};
  const auto vocab = build_vocab(corpus, 1);
  const auto seqs = encode_corpus(corpus, vocab, 5);
  REQUIRE(seqs.size() == 1);
  CHECK(seqs[0].size() == 5);
  CHECK(seqs[0].back() == kSepId);
}

TEST_CASE("MLM training") {
  const auto lang = make_language({});
  const auto corpus = sample_corpus(lang, 60, 3);
  const auto vocab = build_vocab(corpus, 1);
  ModelConfig cfg = testutil::tiny_config(vocab.size());
  cfg.max_len = 48;
  MlmHyper h;
  h.epochs = 4;
  h.batch_size = 8;
  h.lr = 3e-3;

  SUBCASE("is deterministic and lowers the loss") {
    const auto a = train_mlm(corpus, vocab, cfg, h);
    const auto b = train_mlm(corpus, vocab, cfg, h);
    CHECK(a.model == b.model);
    CHECK(a.epoch_loss == b.epoch_loss);
    CHECK(a.epoch_loss.size() == 4);
    CHECK(a.epoch_train_loss.size() == 4);
    CHECK(a.epoch_loss.back() < a.initial_loss);
    CHECK(a.initial_loss == doctest::Approx(std::log(double(vocab.size()))).epsilon(0.1));
  }
  SUBCASE("lr = 0 leaves parameters unchanged") {
    h.lr = 0.0;
    const auto r = train_mlm(corpus, vocab, cfg, h);
    CHECK(r.model == Model::initialize(cfg));
    for (double l : r.epoch_loss) CHECK(l == r.initial_loss);
  }
  SUBCASE("rejects bad inputs") {
    CHECK_THROWS_AS(train_mlm({}, vocab, cfg, h), Error);
    ModelConfig wrong = cfg;
    wrong.vocab_size += 1;
    CHECK_THROWS_AS(train_mlm(corpus, vocab, wrong, h), Error);
    h.warmup_fraction = 1.0;
    CHECK_THROWS_AS(train_mlm(corpus, vocab, cfg, h), Error);
  }
}

TEST_CASE("masked accuracy is a deterministic fraction") {
  const auto lang = make_language({});
  const auto corpus = sample_corpus(lang, 20, 5);
  const auto vocab = build_vocab(corpus, 1);
  ModelConfig cfg = testutil::tiny_config(vocab.size());
  cfg.max_len = 48;
  const Model m = Model::initialize(cfg);
  Rng rng(2);
  const auto masks = mask_batch(corpus, vocab, 0.15, rng);
  const double acc = masked_accuracy(m, masks);
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  CHECK(acc == masked_accuracy(m, masks));
}

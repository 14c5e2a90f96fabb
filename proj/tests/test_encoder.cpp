#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "test_util.hpp"
#include "wordprobe/checkpoint.hpp"
#include "wordprobe/encoder.hpp"
#include "wordprobe/error.hpp"

using namespace wordprobe;

namespace {

Model perturbed_model(const ModelConfig& cfg, std::uint64_t seed) {
  Model m = Model::initialize(cfg);
  // Away from the init point so layer norms and softmaxes see varied inputs.
  Rng r(seed);
  for (auto& p : m.params()) p += 0.3f * static_cast<float>(r.normal());
  return m;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig cfg = testutil::tiny_config(12);
  CHECK_NOTHROW(cfg.validate());
  cfg.heads = 3;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = testutil::tiny_config(0);
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = testutil::tiny_config(12);
  cfg.dropout = 1.0f;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("parameter layout covers the flat vector without gaps") {
  const ModelConfig cfg = testutil::tiny_config(12);
  const ParamLayout layout(cfg);
  std::vector<TensorSlot> slots = layout.slots();
  std::sort(slots.begin(), slots.end(), [](const auto& a, const auto& b) { return a.offset < b.offset; });
  std::size_t at = 0;
  for (const auto& s : slots) {
    CHECK(s.offset == at);
    at += s.rows * s.cols;
  }
  CHECK(at == layout.total());
  const std::size_t d = cfg.dim;
  const std::size_t per_layer = 4 * (d * d + d) + 2 * (2 * d) + (d * 4 * d + 4 * d) + (4 * d * d + d);
  CHECK(layout.total() == 12 * d + 2 * d + cfg.max_len * d + 2 * d + cfg.layers * per_layer + 12);
}

TEST_CASE("initialization is seeded") {
  const ModelConfig cfg = testutil::tiny_config(12);
  const Model a = Model::initialize(cfg);
  CHECK(a == Model::initialize(cfg));
  CHECK(a.checksum() == Model::initialize(cfg).checksum());
  ModelConfig other = cfg;
  other.seed = 8;
  CHECK(a.checksum() != Model::initialize(other).checksum());
  const auto gamma = a.params().subspan(a.layout().layer(0).attn_norm_gamma, cfg.dim);
  CHECK(std::all_of(gamma.begin(), gamma.end(), [](float g) { return g == 1.0f; }));
}

TEST_CASE("embedding is the sum of three lookups") {
  const ModelConfig cfg = testutil::tiny_config(12);
  const Model m = Model::initialize(cfg);
  const auto t = m.embeddings();
  const std::vector<TokenId> toks{kClsId, 7, kSepId};
  const std::vector<TokenId> segs{0, 1, 1};
  const Matrix e = embed(toks, segs, t);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t c = 0; c < cfg.dim; ++c) {
      const float want = t.token[toks[i] * cfg.dim + c] + t.segment[segs[i] * cfg.dim + c] + t.position[i * cfg.dim + c];
      CHECK(e(i, c) == want);
    }
  }
  const std::vector<TokenId> bad{kClsId, 12, kSepId};
  CHECK_THROWS_AS(embed(bad, {}, t), Error);
}

TEST_CASE("attention head on a hand case") {
  const Matrix q(2, 1, std::vector<float>{1, 0});
  const Matrix v(2, 1, std::vector<float>{1, 3});
  const auto out = attention_head(q, q, v);
  const double e = std::exp(1.0);
  CHECK(out.alpha(0, 0) == doctest::Approx(e / (e + 1)));
  CHECK(out.alpha(1, 0) == doctest::Approx(0.5));
  CHECK(out.context(0, 0) == doctest::Approx((e + 3) / (e + 1)));
  CHECK(out.context(1, 0) == doctest::Approx(2.0));
}

TEST_CASE("forward trace shapes and row-stochastic attention") {
  const ModelConfig cfg = testutil::tiny_config(12);
  const Model m = perturbed_model(cfg, 1);
  const std::vector<TokenId> toks{kClsId, 5, 9, 6, 11, kSepId};
  const ForwardTrace tr = encoder_forward(m, toks);
  CHECK(tr.attention.size() == cfg.layers * cfg.heads * 36);
  CHECK(tr.hidden.size() == cfg.layers * 6 * cfg.dim);
  CHECK(tr.embed_out.rows() == 6);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const auto a = tr.attention_matrix(l, h);
      for (std::size_t r = 0; r < 6; ++r) {
        CHECK(std::accumulate(a.begin() + r * 6, a.begin() + r * 6 + 6, 0.0) == doctest::Approx(1.0).epsilon(1e-5));
      }
    }
  }
  CHECK(tr == encoder_forward(m, toks));
  CHECK_THROWS_AS(tr.attention_matrix(cfg.layers, 0), Error);

  std::vector<TokenId> too_long(cfg.max_len + 1, 5);
  try {
    encoder_forward(m, too_long);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::sequence_too_long);
  }
}

TEST_CASE("training pass without dropout reproduces the evaluation forward") {
  const ModelConfig cfg = testutil::tiny_config(12);
  const Model m = perturbed_model(cfg, 2);
  const std::vector<TokenId> toks{kClsId, 5, 9, 6, kSepId};
  const ForwardTrace tr = encoder_forward(m, toks);
  TrainingPass pass(m, toks, {}, nullptr);
  const Matrix& h = pass.last_hidden();
  for (std::size_t i = 0; i < toks.size(); ++i) {
    const auto row = tr.hidden_row(cfg.layers - 1, i);
    for (std::size_t c = 0; c < cfg.dim; ++c) CHECK(h(i, c) == doctest::Approx(row[c]).epsilon(1e-6));
  }
  Rng rng(4);
  TrainingPass noisy(m, toks, {}, &rng);
  CHECK_FALSE(noisy.last_hidden() == h);
}

TEST_CASE("analytic MLM gradient matches central differences on every parameter") {
  ModelConfig cfg = testutil::tiny_config(12);
  cfg.dropout = 0.0f;
  Model m = perturbed_model(cfg, 5);
  const std::vector<TokenId> toks{kClsId, 5, kMaskId, 7, 10, kSepId};
  const std::vector<std::size_t> pos{2, 4};
  const std::vector<TokenId> orig{9, 10};
  std::vector<double> grad(m.layout().total(), 0.0);
  const double loss = mlm_loss_and_grad_f64(m, toks, pos, orig, grad);
  CHECK(loss == doctest::Approx(mlm_loss_f64(m, toks, pos, orig)));

  // Perturbed weights make the loss curved enough that a 1e-3 step shows
  // truncation error on the smallest components; 1e-4 does not.
  double worst = 0.0;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const float p0 = m.params()[i];
    const float hi = p0 + 1e-4f;
    const float lo = p0 - 1e-4f;
    m.params()[i] = hi;
    const double up = mlm_loss_f64(m, toks, pos, orig);
    m.params()[i] = lo;
    const double down = mlm_loss_f64(m, toks, pos, orig);
    m.params()[i] = p0;
    const double numeric = (up - down) / (double(hi) - double(lo));
    worst = std::max(worst, std::abs(numeric - grad[i]) / std::max({std::abs(numeric), std::abs(grad[i]), 1e-7}));
  }
  CHECK(worst < 1e-3);

  std::vector<float> grad_f(grad.size(), 0.0f);
  const float loss_f = mlm_loss_and_grad(m, toks, {}, pos, orig, grad_f, 1.0f, nullptr);
  CHECK(loss_f == doctest::Approx(loss).epsilon(1e-5));
  for (std::size_t i = 0; i < grad.size(); ++i) CHECK(std::abs(grad_f[i] - grad[i]) < 1e-4);
}

TEST_CASE("gradient accumulation is linear in the scale") {
  ModelConfig cfg = testutil::tiny_config(12);
  const Model m = perturbed_model(cfg, 6);
  const std::vector<TokenId> toks{kClsId, 5, kMaskId, 7, kSepId};
  const std::vector<std::size_t> pos{2};
  const std::vector<TokenId> orig{8};
  std::vector<float> once(m.layout().total(), 0.0f), twice(m.layout().total(), 0.0f);
  mlm_loss_and_grad(m, toks, {}, pos, orig, once, 1.0f, nullptr);
  mlm_loss_and_grad(m, toks, {}, pos, orig, twice, 0.5f, nullptr);
  mlm_loss_and_grad(m, toks, {}, pos, orig, twice, 0.5f, nullptr);
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(twice[i] == doctest::Approx(once[i]).epsilon(1e-5));
  CHECK_THROWS_AS(mlm_loss(m, toks, {}, {}), Error);
}

TEST_CASE("checkpoints round-trip and reject mismatches") {
  std::vector<SegmentedSentence> corpus{parse_segmented_line("一二 三 四五六 七")};
  const CharVocab vocab = build_vocab(corpus, 1);
  ModelConfig cfg = testutil::tiny_config(vocab.size());
  const Model m = perturbed_model(cfg, 9);
  testutil::TempDir dir("ckpt");
  save_checkpoint(dir / "c", m, vocab);
  const Checkpoint back = load_checkpoint(dir / "c");
  CHECK(back.model == m);
  CHECK(back.vocab == vocab);

  testutil::spit(dir / "c" / "vocab.tsv", testutil::slurp(dir / "c" / "vocab.tsv") + "八\t12\n");
  try {
    load_checkpoint(dir / "c");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::config_mismatch);
  }

  ModelConfig wrong = testutil::tiny_config(vocab.size() + 1);
  CHECK_THROWS_AS(save_checkpoint(dir / "d", Model::initialize(wrong), vocab), Error);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing"), Error);
}

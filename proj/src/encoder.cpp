#include "wordprobe/encoder.hpp"

#include <cmath>
#include <cstring>

#include "encoder_kernels.hpp"
#include "wordprobe/error.hpp"

namespace wordprobe {

namespace {
constexpr double kEmbeddingInitStd = 0.02;
constexpr double kWeightInitStd = 0.02;
}  // namespace

void ModelConfig::validate() const {
  if (layers == 0 || heads == 0 || dim == 0 || vocab_size == 0) {
    throw Error(Errc::invalid_argument, "layers, heads, dim and vocab_size must be positive");
  }
  if (dim % heads != 0) {
    throw Error(Errc::invalid_argument, "dim " + std::to_string(dim) + " is not divisible by heads " +
                                            std::to_string(heads));
  }
  if (max_len < 3) throw Error(Errc::invalid_argument, "max_len must be at least 3");
  if (!(dropout >= 0.0f && dropout < 1.0f)) throw Error(Errc::invalid_argument, "dropout must be in [0, 1)");
}

ParamLayout::ParamLayout(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.dim;
  const std::size_t ff = config.ffn_dim();
  auto add = [this](std::string name, std::size_t rows, std::size_t cols) {
    const std::size_t offset = total_;
    slots_.push_back({std::move(name), offset, rows, cols});
    total_ += rows * cols;
    return offset;
  };
  token_embedding_ = add("token_embedding", config.vocab_size, d);
  segment_embedding_ = add("segment_embedding", kSegmentCount, d);
  position_embedding_ = add("position_embedding", config.max_len, d);
  embed_norm_gamma_ = add("embed_norm_gamma", 1, d);
  embed_norm_beta_ = add("embed_norm_beta", 1, d);
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = "layer" + std::to_string(l + 1) + ".";
    LayerOffsets off{};
    off.query_weight = add(p + "query_weight", d, d);
    off.query_bias = add(p + "query_bias", 1, d);
    off.key_weight = add(p + "key_weight", d, d);
    off.key_bias = add(p + "key_bias", 1, d);
    off.value_weight = add(p + "value_weight", d, d);
    off.value_bias = add(p + "value_bias", 1, d);
    off.output_weight = add(p + "output_weight", d, d);
    off.output_bias = add(p + "output_bias", 1, d);
    off.attn_norm_gamma = add(p + "attn_norm_gamma", 1, d);
    off.attn_norm_beta = add(p + "attn_norm_beta", 1, d);
    off.ffn_in_weight = add(p + "ffn_in_weight", d, ff);
    off.ffn_in_bias = add(p + "ffn_in_bias", 1, ff);
    off.ffn_out_weight = add(p + "ffn_out_weight", ff, d);
    off.ffn_out_bias = add(p + "ffn_out_bias", 1, d);
    off.ffn_norm_gamma = add(p + "ffn_norm_gamma", 1, d);
    off.ffn_norm_beta = add(p + "ffn_norm_beta", 1, d);
    layers_.push_back(off);
  }
  mlm_bias_ = add("mlm_bias", 1, config.vocab_size);
}

Model::Model(ModelConfig config) : config_(config), layout_(config_), params_(layout_.total(), 0.0f) {
  for (const auto& slot : layout_.slots()) {
    if (slot.name.ends_with("_gamma")) {
      std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(slot.offset), slot.rows * slot.cols, 1.0f);
    }
  }
}

Model Model::initialize(const ModelConfig& config) {
  Model model(config);
  Rng rng(mix_seed(config.seed, 0x1417));
  for (const auto& slot : model.layout_.slots()) {
    double std_dev = 0.0;
    if (slot.name.ends_with("_embedding")) std_dev = kEmbeddingInitStd;
    if (slot.name.ends_with("_weight")) std_dev = kWeightInitStd;
    if (std_dev == 0.0) continue;
    for (std::size_t i = 0; i < slot.rows * slot.cols; ++i) {
      model.params_[slot.offset + i] = static_cast<float>(std_dev * rng.normal());
    }
  }
  return model;
}

EmbeddingTables Model::embeddings() const {
  const std::size_t d = config_.dim;
  std::span<const float> all = params_;
  return {all.subspan(layout_.token_embedding(), config_.vocab_size * d),
          all.subspan(layout_.segment_embedding(), kSegmentCount * d),
          all.subspan(layout_.position_embedding(), config_.max_len * d), d};
}

std::uint64_t Model::checksum() const {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(params_.data());
  for (std::size_t i = 0; i < params_.size() * sizeof(float); ++i) {
    hash ^= bytes[i];
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

Matrix embed(std::span<const TokenId> tokens, std::span<const TokenId> segments, const EmbeddingTables& tables) {
  const std::size_t d = tables.dim;
  const std::size_t n = tokens.size();
  if (d == 0) throw Error(Errc::shape_mismatch, "embedding width is zero");
  const std::size_t vocab = tables.token.size() / d;
  const std::size_t max_len = tables.position.size() / d;
  if (n > max_len) {
    throw Error(Errc::sequence_too_long, std::to_string(n) + " tokens exceed max_len " + std::to_string(max_len));
  }
  if (!segments.empty() && segments.size() != n) throw Error(Errc::shape_mismatch, "segment ids length");
  Matrix out(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const TokenId t = tokens[i];
    const TokenId s = segments.empty() ? 0 : segments[i];
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) throw Error(Errc::id_out_of_range, "token id " + std::to_string(t));
    if (s < 0 || static_cast<std::size_t>(s) >= kSegmentCount) {
      throw Error(Errc::id_out_of_range, "segment id " + std::to_string(s));
    }
    for (std::size_t j = 0; j < d; ++j) {
      out(i, j) = tables.token[static_cast<std::size_t>(t) * d + j] + tables.segment[static_cast<std::size_t>(s) * d + j] +
                  tables.position[i * d + j];
    }
  }
  return out;
}

AttentionHeadOutput attention_head(const Matrix& queries, const Matrix& keys, const Matrix& values) {
  const std::size_t n = queries.rows();
  const std::size_t dk = queries.cols();
  if (dk == 0 || keys.rows() != n || values.rows() != n || keys.cols() != dk || values.cols() != dk) {
    throw Error(Errc::shape_mismatch, "queries, keys and values must all be n x d_k");
  }
  AttentionHeadOutput out{Matrix(n, n), Matrix(n, dk)};
  const float scale = 1.0f / std::sqrt(static_cast<float>(dk));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      float dot = 0.0f;
      for (std::size_t t = 0; t < dk; ++t) dot += queries(i, t) * keys(j, t);
      out.alpha(i, j) = dot * scale;
    }
    detail::softmax_inplace(out.alpha.row(i).data(), n);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t t = 0; t < dk; ++t) out.context(i, t) += out.alpha(i, j) * values(j, t);
    }
  }
  return out;
}

std::span<const float> ForwardTrace::attention_matrix(std::size_t layer, std::size_t head) const {
  const std::size_t n = length();
  if (layer >= layers || head >= heads) throw Error(Errc::index_out_of_range, "layer/head outside the trace");
  return std::span<const float>(attention).subspan((layer * heads + head) * n * n, n * n);
}

std::span<const float> ForwardTrace::hidden_row(std::size_t layer, std::size_t position) const {
  if (layer >= layers || position >= length()) throw Error(Errc::index_out_of_range, "layer/position outside the trace");
  return std::span<const float>(hidden).subspan((layer * length() + position) * dim, dim);
}

ForwardTrace encoder_forward(const Model& model, std::span<const TokenId> tokens, std::span<const TokenId> segments) {
  const ModelConfig& cfg = model.config();
  detail::Pass<float> pass(cfg, model.layout(), model.params(), tokens, segments, nullptr);
  const std::size_t n = tokens.size();
  ForwardTrace trace;
  trace.tokens.assign(tokens.begin(), tokens.end());
  trace.layers = cfg.layers;
  trace.heads = cfg.heads;
  trace.dim = cfg.dim;
  trace.attention.reserve(cfg.layers * cfg.heads * n * n);
  trace.hidden.reserve(cfg.layers * n * cfg.dim);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto& c = pass.cache(l);
    trace.attention.insert(trace.attention.end(), c.attn.begin(), c.attn.end());
    trace.hidden.insert(trace.hidden.end(), c.output.begin(), c.output.end());
  }
  trace.embed_out = Matrix(n, cfg.dim, pass.embed_out());
  return trace;
}

struct TrainingPass::Impl {
  const Model* model;
  detail::Pass<float> pass;
  Matrix last;

  Impl(const Model& m, std::span<const TokenId> tokens, std::span<const TokenId> segments, Rng* rng)
      : model(&m), pass(m.config(), m.layout(), m.params(), tokens, segments, rng) {
    last = Matrix(pass.length(), m.config().dim, pass.last_hidden());
  }
};

TrainingPass::TrainingPass(const Model& model, std::span<const TokenId> tokens, std::span<const TokenId> segments,
                           Rng* dropout_rng)
    : impl_(std::make_unique<Impl>(model, tokens, segments, dropout_rng)) {}
TrainingPass::~TrainingPass() = default;
TrainingPass::TrainingPass(TrainingPass&&) noexcept = default;
TrainingPass& TrainingPass::operator=(TrainingPass&&) noexcept = default;

const Matrix& TrainingPass::last_hidden() const { return impl_->last; }

void TrainingPass::backward(const Matrix& d_last_hidden, std::span<float> grad) {
  if (d_last_hidden.rows() != impl_->last.rows() || d_last_hidden.cols() != impl_->last.cols()) {
    throw Error(Errc::shape_mismatch, "gradient does not match h^L");
  }
  if (grad.size() != impl_->model->layout().total()) throw Error(Errc::shape_mismatch, "gradient buffer size");
  impl_->pass.backward(d_last_hidden.storage(), grad);
}

float mlm_loss(const Model& model, std::span<const TokenId> tokens, std::span<const std::size_t> masked_positions,
               std::span<const TokenId> original_ids) {
  if (masked_positions.empty()) throw Error(Errc::no_masked_positions, "no masked positions");
  detail::Pass<float> pass(model.config(), model.layout(), model.params(), tokens, {}, nullptr);
  return detail::mlm_head<float>(model.config(), model.layout(), model.params(), pass.last_hidden(), masked_positions,
                                 original_ids, tokens.size(), nullptr, {}, 1.0f);
}

float mlm_loss_and_grad(const Model& model, std::span<const TokenId> tokens, std::span<const TokenId> segments,
                        std::span<const std::size_t> masked_positions, std::span<const TokenId> original_ids,
                        std::span<float> grad, float scale, Rng* dropout_rng) {
  if (masked_positions.empty()) throw Error(Errc::no_masked_positions, "no masked positions");
  if (grad.size() != model.layout().total()) throw Error(Errc::shape_mismatch, "gradient buffer size");
  detail::Pass<float> pass(model.config(), model.layout(), model.params(), tokens, segments, dropout_rng);
  std::vector<float> d_last(tokens.size() * model.config().dim, 0.0f);
  const float loss = detail::mlm_head<float>(model.config(), model.layout(), model.params(), pass.last_hidden(),
                                             masked_positions, original_ids, tokens.size(), &d_last, grad, scale);
  pass.backward(std::move(d_last), grad);
  return loss;
}

double mlm_loss_f64(const Model& model, std::span<const TokenId> tokens, std::span<const std::size_t> masked_positions,
                    std::span<const TokenId> original_ids) {
  if (masked_positions.empty()) throw Error(Errc::no_masked_positions, "no masked positions");
  const std::vector<double> params(model.params().begin(), model.params().end());
  detail::Pass<double> pass(model.config(), model.layout(), params, tokens, {}, nullptr);
  return detail::mlm_head<double>(model.config(), model.layout(), params, pass.last_hidden(), masked_positions,
                                  original_ids, tokens.size(), nullptr, {}, 1.0);
}

double mlm_loss_and_grad_f64(const Model& model, std::span<const TokenId> tokens,
                             std::span<const std::size_t> masked_positions, std::span<const TokenId> original_ids,
                             std::span<double> grad) {
  if (masked_positions.empty()) throw Error(Errc::no_masked_positions, "no masked positions");
  if (grad.size() != model.layout().total()) throw Error(Errc::shape_mismatch, "gradient buffer size");
  const std::vector<double> params(model.params().begin(), model.params().end());
  detail::Pass<double> pass(model.config(), model.layout(), params, tokens, {}, nullptr);
  std::vector<double> d_last(tokens.size() * model.config().dim, 0.0);
  const double loss = detail::mlm_head<double>(model.config(), model.layout(), params, pass.last_hidden(),
                                               masked_positions, original_ids, tokens.size(), &d_last, grad, 1.0);
  pass.backward(std::move(d_last), grad);
  return loss;
}

}  // namespace wordprobe

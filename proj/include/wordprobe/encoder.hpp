#pragma once

// Character-level transformer encoder: learned token/segment/position
// embeddings, post-layer-norm multi-head self-attention blocks, and an MLM
// head tied to the token embedding table.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "wordprobe/corpus.hpp"
#include "wordprobe/rng.hpp"
#include "wordprobe/tensor.hpp"

namespace wordprobe {

struct ModelConfig {
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t dim = 128;
  std::size_t vocab_size = 0;
  std::size_t max_len = 64;  // includes [CLS] and [SEP]
  float dropout = 0.1f;
  std::uint64_t seed = 42;

  std::size_t head_dim() const noexcept { return dim / heads; }
  std::size_t ffn_dim() const noexcept { return 4 * dim; }
  /// Throws Error(invalid_argument) on inconsistent dimensions.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Offsets (in floats) of one layer's tensors inside the flat parameter
/// vector. Projection weights are stored input-major (d x out); head m owns
/// columns [m*d_k, (m+1)*d_k) of the query/key/value weights.
struct LayerOffsets {
  std::size_t query_weight, query_bias;
  std::size_t key_weight, key_bias;
  std::size_t value_weight, value_bias;
  std::size_t output_weight, output_bias;
  std::size_t attn_norm_gamma, attn_norm_beta;
  std::size_t ffn_in_weight, ffn_in_bias;
  std::size_t ffn_out_weight, ffn_out_bias;
  std::size_t ffn_norm_gamma, ffn_norm_beta;
};

struct TensorSlot {
  std::string name;
  std::size_t offset;
  std::size_t rows;
  std::size_t cols;
};

/// Fixed parameter order: token, segment and position embeddings, the
/// embedding layer norm, then each layer in LayerOffsets field order, then
/// the MLM output bias.
class ParamLayout {
 public:
  explicit ParamLayout(const ModelConfig& config);

  std::size_t total() const noexcept { return total_; }
  std::size_t token_embedding() const noexcept { return token_embedding_; }
  std::size_t segment_embedding() const noexcept { return segment_embedding_; }
  std::size_t position_embedding() const noexcept { return position_embedding_; }
  std::size_t embed_norm_gamma() const noexcept { return embed_norm_gamma_; }
  std::size_t embed_norm_beta() const noexcept { return embed_norm_beta_; }
  std::size_t mlm_bias() const noexcept { return mlm_bias_; }
  const LayerOffsets& layer(std::size_t l) const { return layers_.at(l); }
  const std::vector<TensorSlot>& slots() const noexcept { return slots_; }

 private:
  std::size_t total_ = 0;
  std::size_t token_embedding_ = 0;
  std::size_t segment_embedding_ = 0;
  std::size_t position_embedding_ = 0;
  std::size_t embed_norm_gamma_ = 0;
  std::size_t embed_norm_beta_ = 0;
  std::size_t mlm_bias_ = 0;
  std::vector<LayerOffsets> layers_;
  std::vector<TensorSlot> slots_;
};

inline constexpr std::size_t kSegmentCount = 2;

struct EmbeddingTables {
  std::span<const float> token;     // V x d
  std::span<const float> segment;   // 2 x d
  std::span<const float> position;  // max_len x d
  std::size_t dim = 0;
};

class Model {
 public:
  /// All-zero parameters except layer-norm gains (1).
  explicit Model(ModelConfig config);

  /// N(0, 0.02) weights and embeddings, zero biases, unit norm gains; the
  /// draw is fully determined by config.seed.
  static Model initialize(const ModelConfig& config);

  const ModelConfig& config() const noexcept { return config_; }
  const ParamLayout& layout() const noexcept { return layout_; }
  std::span<float> params() noexcept { return params_; }
  std::span<const float> params() const noexcept { return params_; }

  EmbeddingTables embeddings() const;
  /// FNV-1a over the raw parameter bytes.
  std::uint64_t checksum() const;

  bool operator==(const Model& other) const {
    return config_ == other.config_ && params_ == other.params_;
  }

 private:
  ModelConfig config_;
  ParamLayout layout_;
  std::vector<float> params_;
};

/// Row i = E[token_i] + SE[segment_i] + PE[i].
Matrix embed(std::span<const TokenId> tokens, std::span<const TokenId> segments, const EmbeddingTables& tables);

struct AttentionHeadOutput {
  Matrix alpha;    // n x n, row-stochastic
  Matrix context;  // n x d_k
};

/// softmax(Q K^T / sqrt(d_k)) and its product with V.
AttentionHeadOutput attention_head(const Matrix& queries, const Matrix& keys, const Matrix& values);

/// Per-layer attention and hidden states for one sequence. Layers are
/// 0-based here (index l holds h^{l+1}).
struct ForwardTrace {
  std::vector<TokenId> tokens;
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::size_t dim = 0;
  std::vector<float> attention;  // layers x heads x n x n
  std::vector<float> hidden;     // layers x n x dim
  Matrix embed_out;              // n x dim; empty when not recorded

  std::size_t length() const noexcept { return tokens.size(); }
  std::span<const float> attention_matrix(std::size_t layer, std::size_t head) const;
  std::span<const float> hidden_row(std::size_t layer, std::size_t position) const;
  bool has_embed_out() const noexcept { return embed_out.size() != 0; }

  bool operator==(const ForwardTrace&) const = default;
};

/// Evaluation-mode forward pass (no dropout). Empty `segments` means all 0.
ForwardTrace encoder_forward(const Model& model, std::span<const TokenId> tokens,
                             std::span<const TokenId> segments = {});

/// Train-mode forward pass that keeps what backpropagation needs. Dropout is
/// applied when `dropout_rng` is non-null and config.dropout > 0.
class TrainingPass {
 public:
  TrainingPass(const Model& model, std::span<const TokenId> tokens, std::span<const TokenId> segments,
               Rng* dropout_rng);
  ~TrainingPass();
  TrainingPass(TrainingPass&&) noexcept;
  TrainingPass& operator=(TrainingPass&&) noexcept;

  /// h^L, n x d.
  const Matrix& last_hidden() const;
  /// Accumulates dLoss/dparams into `grad` given dLoss/dh^L.
  void backward(const Matrix& d_last_hidden, std::span<float> grad);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Mean over masked positions of -log p(original | h^L), with logits
/// h^L E^T + b. Throws Error(no_masked_positions) for an empty mask.
float mlm_loss(const Model& model, std::span<const TokenId> tokens, std::span<const std::size_t> masked_positions,
               std::span<const TokenId> original_ids);

/// Same loss; adds `scale` * gradient into `grad` and returns the loss.
float mlm_loss_and_grad(const Model& model, std::span<const TokenId> tokens, std::span<const TokenId> segments,
                        std::span<const std::size_t> masked_positions, std::span<const TokenId> original_ids,
                        std::span<float> grad, float scale, Rng* dropout_rng);

/// Double-precision evaluations of the same network from the same float
/// parameters, used by gradient checking.
double mlm_loss_f64(const Model& model, std::span<const TokenId> tokens, std::span<const std::size_t> masked_positions,
                    std::span<const TokenId> original_ids);
double mlm_loss_and_grad_f64(const Model& model, std::span<const TokenId> tokens,
                             std::span<const std::size_t> masked_positions, std::span<const TokenId> original_ids,
                             std::span<double> grad);

}  // namespace wordprobe

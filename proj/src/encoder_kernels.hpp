#pragma once

// Private forward/backward kernels shared by the float training path and the
// double-precision gradient-checking path.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "wordprobe/encoder.hpp"
#include "wordprobe/error.hpp"
#include "wordprobe/rng.hpp"

namespace wordprobe::detail {

inline constexpr double kLayerNormEps = 1e-5;

// out (n x cols_out) = x (n x cols_in) * w (cols_in x cols_out) + b
template <typename T>
void linear(const T* x, std::size_t n, std::size_t cols_in, const T* w, const T* b, std::size_t cols_out, T* out) {
  for (std::size_t i = 0; i < n; ++i) {
    T* out_row = out + i * cols_out;
    for (std::size_t j = 0; j < cols_out; ++j) out_row[j] = b ? b[j] : T{};
    const T* x_row = x + i * cols_in;
    for (std::size_t p = 0; p < cols_in; ++p) {
      const T xv = x_row[p];
      const T* w_row = w + p * cols_out;
      for (std::size_t j = 0; j < cols_out; ++j) out_row[j] += xv * w_row[j];
    }
  }
}

// Given d_out, accumulates dW += x^T d_out, db += colsum(d_out) and
// dx += d_out w^T (dx may be null).
template <typename T>
void linear_backward(const T* x, std::size_t n, std::size_t cols_in, const T* w, std::size_t cols_out,
                     const T* d_out, T* dx, T* dw, T* db) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* d_row = d_out + i * cols_out;
    const T* x_row = x + i * cols_in;
    if (db) {
      for (std::size_t j = 0; j < cols_out; ++j) db[j] += d_row[j];
    }
    for (std::size_t p = 0; p < cols_in; ++p) {
      const T* w_row = w + p * cols_out;
      T* dw_row = dw + p * cols_out;
      const T xv = x_row[p];
      T acc{};
      for (std::size_t j = 0; j < cols_out; ++j) {
        dw_row[j] += xv * d_row[j];
        acc += d_row[j] * w_row[j];
      }
      if (dx) dx[i * cols_in + p] += acc;
    }
  }
}

template <typename T>
void softmax_inplace(T* row, std::size_t n) {
  T max_v = row[0];
  for (std::size_t j = 1; j < n; ++j) max_v = std::max(max_v, row[j]);
  T sum{};
  for (std::size_t j = 0; j < n; ++j) {
    row[j] = std::exp(row[j] - max_v);
    sum += row[j];
  }
  const T inv = T(1) / sum;
  for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
}

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return cdf + x * pdf;
}

template <typename T>
struct LayerCache {
  std::vector<T> input;       // n x d
  std::vector<T> q, k, v;     // n x d
  std::vector<T> attn;        // heads x n x n
  std::vector<T> context;     // n x d
  std::vector<T> attn_mask;   // n x d dropout scale (empty when no dropout)
  std::vector<T> norm1_xhat;  // n x d
  std::vector<T> norm1_inv;   // n
  std::vector<T> mid;         // n x d, output of the first norm
  std::vector<T> ffn_pre;     // n x ff
  std::vector<T> ffn_act;     // n x ff
  std::vector<T> ffn_mask;    // n x d
  std::vector<T> norm2_xhat;  // n x d
  std::vector<T> norm2_inv;   // n
  std::vector<T> output;      // n x d
};

// One sequence through the encoder, keeping every activation. `params` is
// the flat vector in ParamLayout order.
template <typename T>
class Pass {
 public:
  Pass(const ModelConfig& config, const ParamLayout& layout, std::span<const T> params,
       std::span<const TokenId> tokens, std::span<const TokenId> segments, Rng* dropout_rng)
      : config_(config), layout_(layout), params_(params), tokens_(tokens.begin(), tokens.end()) {
    const std::size_t n = tokens.size();
    const std::size_t d = config.dim;
    if (n == 0) throw Error(Errc::invalid_argument, "empty token sequence");
    if (n > config.max_len) {
      throw Error(Errc::sequence_too_long,
                  "sequence of " + std::to_string(n) + " tokens exceeds max_len " + std::to_string(config.max_len));
    }
    if (!segments.empty() && segments.size() != n) {
      throw Error(Errc::shape_mismatch, "segment ids do not match token count");
    }
    segments_.assign(n, 0);
    if (!segments.empty()) std::copy(segments.begin(), segments.end(), segments_.begin());
    for (std::size_t i = 0; i < n; ++i) {
      if (tokens_[i] < 0 || static_cast<std::size_t>(tokens_[i]) >= config.vocab_size) {
        throw Error(Errc::id_out_of_range, "token id " + std::to_string(tokens_[i]) + " at position " +
                                               std::to_string(i));
      }
      if (segments_[i] < 0 || static_cast<std::size_t>(segments_[i]) >= kSegmentCount) {
        throw Error(Errc::id_out_of_range, "segment id " + std::to_string(segments_[i]));
      }
    }
    const float p = config.dropout;
    dropout_ = (dropout_rng != nullptr && p > 0.0f) ? dropout_rng : nullptr;

    embed_out_.assign(n * d, T{});
    const T* tok = params_.data() + layout_.token_embedding();
    const T* seg = params_.data() + layout_.segment_embedding();
    const T* pos = params_.data() + layout_.position_embedding();
    for (std::size_t i = 0; i < n; ++i) {
      T* row = embed_out_.data() + i * d;
      const T* e = tok + static_cast<std::size_t>(tokens_[i]) * d;
      const T* s = seg + static_cast<std::size_t>(segments_[i]) * d;
      const T* pe = pos + i * d;
      for (std::size_t j = 0; j < d; ++j) row[j] = e[j] + s[j] + pe[j];
    }
    // e_i is kept as the plain sum; the first layer sees its layer norm.
    std::vector<T> x;
    layer_norm(embed_out_, n, d, param(layout_.embed_norm_gamma()), param(layout_.embed_norm_beta()), embed_xhat_,
               embed_inv_, x);
    if (dropout_) {
      embed_mask_ = make_mask(n * d);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] *= embed_mask_[i];
    }
    caches_.resize(config.layers);
    for (std::size_t l = 0; l < config.layers; ++l) {
      forward_layer(l, x);
      x = caches_[l].output;
    }
  }

  std::size_t length() const noexcept { return tokens_.size(); }
  const std::vector<T>& embed_out() const noexcept { return embed_out_; }
  const LayerCache<T>& cache(std::size_t l) const { return caches_[l]; }
  const std::vector<T>& last_hidden() const { return caches_.back().output; }

  // grad is in ParamLayout order; d_last is n x d and is consumed.
  void backward(std::vector<T> d_last, std::span<T> grad) const {
    const std::size_t n = length();
    const std::size_t d = config_.dim;
    std::vector<T> d_x = std::move(d_last);
    for (std::size_t l = config_.layers; l-- > 0;) d_x = backward_layer(l, d_x, grad);
    if (dropout_) {
      for (std::size_t i = 0; i < d_x.size(); ++i) d_x[i] *= embed_mask_[i];
    }
    d_x = layer_norm_backward(d_x, n, d, embed_xhat_, embed_inv_, param(layout_.embed_norm_gamma()),
                              grad.data() + layout_.embed_norm_gamma(), grad.data() + layout_.embed_norm_beta());
    T* g_tok = grad.data() + layout_.token_embedding();
    T* g_seg = grad.data() + layout_.segment_embedding();
    T* g_pos = grad.data() + layout_.position_embedding();
    for (std::size_t i = 0; i < n; ++i) {
      const T* row = d_x.data() + i * d;
      T* e = g_tok + static_cast<std::size_t>(tokens_[i]) * d;
      T* s = g_seg + static_cast<std::size_t>(segments_[i]) * d;
      T* pe = g_pos + i * d;
      for (std::size_t j = 0; j < d; ++j) {
        e[j] += row[j];
        s[j] += row[j];
        pe[j] += row[j];
      }
    }
  }

 private:
  const T* param(std::size_t offset) const { return params_.data() + offset; }

  std::vector<T> make_mask(std::size_t count) {
    const double keep = 1.0 - static_cast<double>(config_.dropout);
    const T scale = T(1.0 / keep);
    std::vector<T> mask(count);
    for (auto& m : mask) m = dropout_->bernoulli(keep) ? scale : T{};
    return mask;
  }

  static void layer_norm(const std::vector<T>& in, std::size_t n, std::size_t d, const T* gamma, const T* beta,
                         std::vector<T>& xhat, std::vector<T>& inv_std, std::vector<T>& out) {
    xhat.resize(n * d);
    inv_std.resize(n);
    out.resize(n * d);
    for (std::size_t i = 0; i < n; ++i) {
      const T* row = in.data() + i * d;
      T mean{};
      for (std::size_t j = 0; j < d; ++j) mean += row[j];
      mean /= T(d);
      T var{};
      for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
      var /= T(d);
      const T inv = T(1) / std::sqrt(var + T(kLayerNormEps));
      inv_std[i] = inv;
      for (std::size_t j = 0; j < d; ++j) {
        const T h = (row[j] - mean) * inv;
        xhat[i * d + j] = h;
        out[i * d + j] = h * gamma[j] + beta[j];
      }
    }
  }

  static std::vector<T> layer_norm_backward(const std::vector<T>& d_out, std::size_t n, std::size_t d,
                                            const std::vector<T>& xhat, const std::vector<T>& inv_std,
                                            const T* gamma, T* d_gamma, T* d_beta) {
    std::vector<T> d_in(n * d);
    std::vector<T> d_xhat(d);
    for (std::size_t i = 0; i < n; ++i) {
      const T* dy = d_out.data() + i * d;
      const T* xh = xhat.data() + i * d;
      T sum_dxhat{};
      T sum_dxhat_xhat{};
      for (std::size_t j = 0; j < d; ++j) {
        d_gamma[j] += dy[j] * xh[j];
        d_beta[j] += dy[j];
        d_xhat[j] = dy[j] * gamma[j];
        sum_dxhat += d_xhat[j];
        sum_dxhat_xhat += d_xhat[j] * xh[j];
      }
      const T scale = inv_std[i] / T(d);
      for (std::size_t j = 0; j < d; ++j) {
        d_in[i * d + j] = scale * (T(d) * d_xhat[j] - sum_dxhat - xh[j] * sum_dxhat_xhat);
      }
    }
    return d_in;
  }

  void forward_layer(std::size_t l, const std::vector<T>& x) {
    const LayerOffsets& off = layout_.layer(l);
    LayerCache<T>& c = caches_[l];
    const std::size_t n = length();
    const std::size_t d = config_.dim;
    const std::size_t heads = config_.heads;
    const std::size_t dk = config_.head_dim();
    const std::size_t ff = config_.ffn_dim();
    c.input = x;
    c.q.resize(n * d);
    c.k.resize(n * d);
    c.v.resize(n * d);
    linear(x.data(), n, d, param(off.query_weight), param(off.query_bias), d, c.q.data());
    linear(x.data(), n, d, param(off.key_weight), param(off.key_bias), d, c.k.data());
    linear(x.data(), n, d, param(off.value_weight), param(off.value_bias), d, c.v.data());

    const T scale = T(1) / std::sqrt(T(dk));
    c.attn.assign(heads * n * n, T{});
    c.context.assign(n * d, T{});
    for (std::size_t m = 0; m < heads; ++m) {
      T* a = c.attn.data() + m * n * n;
      const std::size_t col = m * dk;
      for (std::size_t i = 0; i < n; ++i) {
        const T* qi = c.q.data() + i * d + col;
        T* a_row = a + i * n;
        for (std::size_t j = 0; j < n; ++j) {
          const T* kj = c.k.data() + j * d + col;
          T dot{};
          for (std::size_t t = 0; t < dk; ++t) dot += qi[t] * kj[t];
          a_row[j] = dot * scale;
        }
        softmax_inplace(a_row, n);
        T* ctx = c.context.data() + i * d + col;
        for (std::size_t j = 0; j < n; ++j) {
          const T w = a_row[j];
          const T* vj = c.v.data() + j * d + col;
          for (std::size_t t = 0; t < dk; ++t) ctx[t] += w * vj[t];
        }
      }
    }

    std::vector<T> attn_out(n * d);
    linear(c.context.data(), n, d, param(off.output_weight), param(off.output_bias), d, attn_out.data());
    if (dropout_) {
      c.attn_mask = make_mask(n * d);
      for (std::size_t i = 0; i < attn_out.size(); ++i) attn_out[i] *= c.attn_mask[i];
    }
    for (std::size_t i = 0; i < attn_out.size(); ++i) attn_out[i] += x[i];
    layer_norm(attn_out, n, d, param(off.attn_norm_gamma), param(off.attn_norm_beta), c.norm1_xhat, c.norm1_inv,
               c.mid);

    c.ffn_pre.resize(n * ff);
    c.ffn_act.resize(n * ff);
    linear(c.mid.data(), n, d, param(off.ffn_in_weight), param(off.ffn_in_bias), ff, c.ffn_pre.data());
    for (std::size_t i = 0; i < c.ffn_pre.size(); ++i) c.ffn_act[i] = gelu(c.ffn_pre[i]);
    std::vector<T> ffn_out(n * d);
    linear(c.ffn_act.data(), n, ff, param(off.ffn_out_weight), param(off.ffn_out_bias), d, ffn_out.data());
    if (dropout_) {
      c.ffn_mask = make_mask(n * d);
      for (std::size_t i = 0; i < ffn_out.size(); ++i) ffn_out[i] *= c.ffn_mask[i];
    }
    for (std::size_t i = 0; i < ffn_out.size(); ++i) ffn_out[i] += c.mid[i];
    layer_norm(ffn_out, n, d, param(off.ffn_norm_gamma), param(off.ffn_norm_beta), c.norm2_xhat, c.norm2_inv,
               c.output);
  }

  std::vector<T> backward_layer(std::size_t l, const std::vector<T>& d_out, std::span<T> grad) const {
    const LayerOffsets& off = layout_.layer(l);
    const LayerCache<T>& c = caches_[l];
    const std::size_t n = length();
    const std::size_t d = config_.dim;
    const std::size_t heads = config_.heads;
    const std::size_t dk = config_.head_dim();
    const std::size_t ff = config_.ffn_dim();
    T* g = grad.data();

    // Second residual block.
    std::vector<T> d_res2 = layer_norm_backward(d_out, n, d, c.norm2_xhat, c.norm2_inv, param(off.ffn_norm_gamma),
                                                g + off.ffn_norm_gamma, g + off.ffn_norm_beta);
    std::vector<T> d_mid = d_res2;
    std::vector<T> d_ffn_out = d_res2;
    if (dropout_) {
      for (std::size_t i = 0; i < d_ffn_out.size(); ++i) d_ffn_out[i] *= c.ffn_mask[i];
    }
    std::vector<T> d_act(n * ff, T{});
    linear_backward(c.ffn_act.data(), n, ff, param(off.ffn_out_weight), d, d_ffn_out.data(), d_act.data(),
                    g + off.ffn_out_weight, g + off.ffn_out_bias);
    for (std::size_t i = 0; i < d_act.size(); ++i) d_act[i] *= gelu_grad(c.ffn_pre[i]);
    linear_backward(c.mid.data(), n, d, param(off.ffn_in_weight), ff, d_act.data(), d_mid.data(),
                    g + off.ffn_in_weight, g + off.ffn_in_bias);

    // First residual block.
    std::vector<T> d_res1 = layer_norm_backward(d_mid, n, d, c.norm1_xhat, c.norm1_inv, param(off.attn_norm_gamma),
                                                g + off.attn_norm_gamma, g + off.attn_norm_beta);
    std::vector<T> d_x = d_res1;
    std::vector<T> d_attn_out = d_res1;
    if (dropout_) {
      for (std::size_t i = 0; i < d_attn_out.size(); ++i) d_attn_out[i] *= c.attn_mask[i];
    }
    std::vector<T> d_context(n * d, T{});
    linear_backward(c.context.data(), n, d, param(off.output_weight), d, d_attn_out.data(), d_context.data(),
                    g + off.output_weight, g + off.output_bias);

    std::vector<T> d_q(n * d, T{});
    std::vector<T> d_k(n * d, T{});
    std::vector<T> d_v(n * d, T{});
    std::vector<T> d_a(n);
    const T scale = T(1) / std::sqrt(T(dk));
    for (std::size_t m = 0; m < heads; ++m) {
      const T* a = c.attn.data() + m * n * n;
      const std::size_t col = m * dk;
      for (std::size_t i = 0; i < n; ++i) {
        const T* a_row = a + i * n;
        const T* dctx = d_context.data() + i * d + col;
        T dot_sum{};
        for (std::size_t j = 0; j < n; ++j) {
          const T* vj = c.v.data() + j * d + col;
          T* dvj = d_v.data() + j * d + col;
          T acc{};
          for (std::size_t t = 0; t < dk; ++t) {
            acc += dctx[t] * vj[t];
            dvj[t] += a_row[j] * dctx[t];
          }
          d_a[j] = acc;
          dot_sum += acc * a_row[j];
        }
        const T* qi = c.q.data() + i * d + col;
        T* dqi = d_q.data() + i * d + col;
        for (std::size_t j = 0; j < n; ++j) {
          const T d_score = a_row[j] * (d_a[j] - dot_sum) * scale;
          const T* kj = c.k.data() + j * d + col;
          T* dkj = d_k.data() + j * d + col;
          for (std::size_t t = 0; t < dk; ++t) {
            dqi[t] += d_score * kj[t];
            dkj[t] += d_score * qi[t];
          }
        }
      }
    }
    linear_backward(c.input.data(), n, d, param(off.query_weight), d, d_q.data(), d_x.data(), g + off.query_weight,
                    g + off.query_bias);
    linear_backward(c.input.data(), n, d, param(off.key_weight), d, d_k.data(), d_x.data(), g + off.key_weight,
                    g + off.key_bias);
    linear_backward(c.input.data(), n, d, param(off.value_weight), d, d_v.data(), d_x.data(), g + off.value_weight,
                    g + off.value_bias);
    return d_x;
  }

  const ModelConfig& config_;
  const ParamLayout& layout_;
  std::span<const T> params_;
  std::vector<TokenId> tokens_;
  std::vector<TokenId> segments_;
  Rng* dropout_ = nullptr;
  std::vector<T> embed_out_;
  std::vector<T> embed_mask_;
  std::vector<T> embed_xhat_;
  std::vector<T> embed_inv_;
  std::vector<LayerCache<T>> caches_;
};

// MLM head over h^L: logits = h E^T + b. Returns the mean negative
// log-likelihood; when d_last is non-null, adds scale * dLoss/dh^L there and
// scale * dLoss/d{E, b} into grad.
template <typename T>
T mlm_head(const ModelConfig& config, const ParamLayout& layout, std::span<const T> params,
           const std::vector<T>& last_hidden, std::span<const std::size_t> masked_positions,
           std::span<const TokenId> original_ids, std::size_t n, std::vector<T>* d_last, std::span<T> grad, T scale) {
  if (masked_positions.empty()) throw Error(Errc::no_masked_positions, "no masked positions");
  if (masked_positions.size() != original_ids.size()) {
    throw Error(Errc::length_mismatch, "masked positions and original ids differ in length");
  }
  const std::size_t d = config.dim;
  const std::size_t vocab = config.vocab_size;
  const T* table = params.data() + layout.token_embedding();
  const T* bias = params.data() + layout.mlm_bias();
  std::vector<T> logits(vocab);
  T total{};
  const T inv_count = T(1) / T(masked_positions.size());
  for (std::size_t r = 0; r < masked_positions.size(); ++r) {
    const std::size_t pos = masked_positions[r];
    const TokenId target = original_ids[r];
    if (pos >= n) throw Error(Errc::index_out_of_range, "masked position " + std::to_string(pos));
    if (target < 0 || static_cast<std::size_t>(target) >= vocab) {
      throw Error(Errc::id_out_of_range, "original id " + std::to_string(target));
    }
    const T* h = last_hidden.data() + pos * d;
    for (std::size_t v = 0; v < vocab; ++v) {
      const T* e = table + v * d;
      T dot = bias[v];
      for (std::size_t j = 0; j < d; ++j) dot += h[j] * e[j];
      logits[v] = dot;
    }
    T max_v = logits[0];
    for (T z : logits) max_v = std::max(max_v, z);
    T sum{};
    for (T z : logits) sum += std::exp(z - max_v);
    const T log_z = max_v + std::log(sum);
    total += log_z - logits[static_cast<std::size_t>(target)];
    if (d_last != nullptr) {
      T* dh = d_last->data() + pos * d;
      T* g_table = grad.data() + layout.token_embedding();
      T* g_bias = grad.data() + layout.mlm_bias();
      for (std::size_t v = 0; v < vocab; ++v) {
        T dz = std::exp(logits[v] - log_z);
        if (static_cast<TokenId>(v) == target) dz -= T(1);
        dz *= inv_count * scale;
        g_bias[v] += dz;
        const T* e = table + v * d;
        T* ge = g_table + v * d;
        for (std::size_t j = 0; j < d; ++j) {
          dh[j] += dz * e[j];
          ge[j] += dz * h[j];
        }
      }
    }
  }
  return total * inv_count;
}

}  // namespace wordprobe::detail

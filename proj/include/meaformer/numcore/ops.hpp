#pragma once

#include <vector>

#include "meaformer/numcore/rng.hpp"
#include "meaformer/numcore/tensor.hpp"

namespace meaformer::nc {

/// Convolution geometry: kernel count, square kernel size, stride, padding.
struct LayerConfig {
  int kernel_number = 1;
  int kernel_size = 1;
  int stride = 1;
  int padding = 0;

  void validate() const;
};

// Elementwise
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T offset);
/// x[..., tail] + y[tail], broadcasting y over the leading dimensions.
template <typename T> Tensor<T> add_broadcast(const Tensor<T>& x, const Tensor<T>& y);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);

// Reductions to a scalar
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
/// Weighted sum of scalars: sum_i weights[i] * terms[i].
template <typename T>
Tensor<T> weighted_sum(const std::vector<Tensor<T>>& terms, const std::vector<T>& weights);

// Linear algebra
/// a[M,K] x b[K,N].
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// Batched a[B,M,K] x b[B,K,N], or b[B,N,K] transposed when transpose_b.
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);
/// x[..., in] W[out,in]^T + bias[out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// Normalization and activation over the last dimension
template <typename T> Tensor<T> softmax_lastdim(const Tensor<T>& x);
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));
template <typename T>
struct AttentionOutput {
  Tensor<T> output;   // [B, Lq, Dv]
  Tensor<T> weights;  // [B, Lq, Lk] softmax probabilities before dropout; not differentiable
};

/// Fused softmax(scale * q k^T) with inverted dropout on the weights, times v.
/// q[B,Lq,D], k[B,Lk,D], v[B,Lk,Dv]. Same result as the composed ops.
template <typename T>
AttentionOutput<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, T scale,
                                        double dropout_p, Rng* rng, bool training);

/// Inverted dropout; identity when !training or p == 0.
template <typename T> Tensor<T> dropout(const Tensor<T>& x, double p, Rng* rng, bool training);

// Layout
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& perm);
/// Channels [begin, end) of an [N,C,H,W] tensor.
template <typename T> Tensor<T> slice_channels(const Tensor<T>& x, int64_t begin, int64_t end);

// Spatial
/// x[N,Cin,H,W], weight[kn,Cin,ks,ks], bias[kn].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 const LayerConfig& cfg);
/// Transposed convolution. x[N,Cin,H,W], weight[Cin,kn,ks,ks], bias[kn];
/// H' = (H-1)*st - 2*pad + ks.
template <typename T>
Tensor<T> deconv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                   const LayerConfig& cfg);
/// Per-channel batch normalization of [N,C,H,W]. Training mode normalizes with
/// batch statistics and updates the running buffers in place.
template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       const Tensor<T>& running_mean, const Tensor<T>& running_var,
                       bool training, T momentum = T(0.1), T eps = T(1e-5));
/// Bilinear resize of [N,C,H,W] (half-pixel centers).
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, int64_t out_h, int64_t out_w);

}  // namespace meaformer::nc

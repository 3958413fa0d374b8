#pragma once

#include <string>
#include <vector>

#include "meaformer/numcore/ops.hpp"

namespace meaformer::nc {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

/// Ordered store of trainable parameters and persistent buffers (running
/// statistics). Order is registration order and is stable across builds.
template <typename T>
class ParameterRegistry {
 public:
  const Tensor<T>& add_parameter(std::string name, Tensor<T> tensor);
  const Tensor<T>& add_buffer(std::string name, Tensor<T> tensor);

  const std::vector<NamedTensor<T>>& parameters() const { return parameters_; }
  const std::vector<NamedTensor<T>>& buffers() const { return buffers_; }
  std::vector<Tensor<T>> parameter_tensors() const;
  /// Parameters followed by buffers.
  std::vector<NamedTensor<T>> state() const;
  int64_t parameter_count() const;

 private:
  void check_unique(const std::string& name) const;
  std::vector<NamedTensor<T>> parameters_;
  std::vector<NamedTensor<T>> buffers_;
};

/// Per-call execution state: training flag and the dropout stream.
struct RunContext {
  bool training = false;
  Rng* rng = nullptr;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(int64_t in_features, int64_t out_features, const std::string& name, ParameterRegistry<T>& reg,
         Rng& rng);
  Tensor<T> forward(const Tensor<T>& x) const { return linear(x, weight, bias); }

  Tensor<T> weight, bias;
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int64_t in_channels, LayerConfig cfg, const std::string& name, ParameterRegistry<T>& reg,
         Rng& rng);
  Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, weight, bias, cfg); }

  LayerConfig cfg;
  Tensor<T> weight, bias;
};

template <typename T>
class Deconv2d {
 public:
  Deconv2d() = default;
  Deconv2d(int64_t in_channels, LayerConfig cfg, const std::string& name, ParameterRegistry<T>& reg,
           Rng& rng);
  Tensor<T> forward(const Tensor<T>& x) const { return deconv2d(x, weight, bias, cfg); }

  LayerConfig cfg;
  Tensor<T> weight, bias;
};

/// BatchNorm (eps 1e-5, momentum 0.1) with the running statistics registered
/// as buffers.
template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(int64_t channels, const std::string& name, ParameterRegistry<T>& reg);
  Tensor<T> forward(const Tensor<T>& x, const RunContext& ctx) const {
    return batch_norm2d(x, gamma, beta, running_mean, running_var, ctx.training);
  }

  Tensor<T> gamma, beta, running_mean, running_var;
};

template <typename T>
Tensor<T> batchnorm_relu(const BatchNorm2d<T>& bn, const Tensor<T>& x, const RunContext& ctx) {
  return relu(bn.forward(x, ctx));
}

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(int64_t dim, const std::string& name, ParameterRegistry<T>& reg);
  Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }

  Tensor<T> gamma, beta;
};

template <typename T>
struct AttentionResult {
  Tensor<T> output;   // [N, Lq, C]
  Tensor<T> weights;  // [N*heads, Lq, Lk], rows sum to one
};

/// Multi-head scaled dot-product attention with input and output projections.
template <typename T>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(int64_t dim, int heads, double dropout, const std::string& name,
                     ParameterRegistry<T>& reg, Rng& rng);

  /// query [N,Lq,C]; key, value [N,Lk,C].
  AttentionResult<T> forward(const Tensor<T>& query, const Tensor<T>& key, const Tensor<T>& value,
                             const RunContext& ctx) const;

  int64_t dim = 0;
  int heads = 1;
  double dropout_p = 0.0;
  Linear<T> q_proj, k_proj, v_proj, out_proj;
};

template <typename T>
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(int64_t dim, int64_t hidden, double dropout, const std::string& name,
              ParameterRegistry<T>& reg, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x, const RunContext& ctx) const;

  double dropout_p = 0.0;
  Linear<T> fc1, fc2;
};

}  // namespace meaformer::nc

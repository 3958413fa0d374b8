#include "meaformer/numcore/layers.hpp"

#include <cmath>

namespace meaformer::nc {

namespace {

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::vector<T> v(static_cast<size_t>(nc::numel(shape)));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

}  // namespace

template <typename T>
void ParameterRegistry<T>::check_unique(const std::string& name) const {
  for (const auto& p : parameters_)
    if (p.name == name) throw ContractError("duplicate parameter name " + name);
  for (const auto& b : buffers_)
    if (b.name == name) throw ContractError("duplicate buffer name " + name);
}

template <typename T>
const Tensor<T>& ParameterRegistry<T>::add_parameter(std::string name, Tensor<T> tensor) {
  check_unique(name);
  tensor.set_requires_grad(true);
  parameters_.push_back({std::move(name), std::move(tensor)});
  return parameters_.back().tensor;
}

template <typename T>
const Tensor<T>& ParameterRegistry<T>::add_buffer(std::string name, Tensor<T> tensor) {
  check_unique(name);
  tensor.set_requires_grad(false);
  buffers_.push_back({std::move(name), std::move(tensor)});
  return buffers_.back().tensor;
}

template <typename T>
std::vector<Tensor<T>> ParameterRegistry<T>::parameter_tensors() const {
  std::vector<Tensor<T>> out;
  out.reserve(parameters_.size());
  for (const auto& p : parameters_) out.push_back(p.tensor);
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> ParameterRegistry<T>::state() const {
  std::vector<NamedTensor<T>> out(parameters_);
  out.insert(out.end(), buffers_.begin(), buffers_.end());
  return out;
}

template <typename T>
int64_t ParameterRegistry<T>::parameter_count() const {
  int64_t n = 0;
  for (const auto& p : parameters_) n += p.tensor.numel();
  return n;
}

template <typename T>
Linear<T>::Linear(int64_t in_features, int64_t out_features, const std::string& name,
                  ParameterRegistry<T>& reg, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
  weight = reg.add_parameter(name + ".weight", uniform_tensor<T>({out_features, in_features}, bound, rng));
  bias = reg.add_parameter(name + ".bias", uniform_tensor<T>({out_features}, bound, rng));
}

template <typename T>
Conv2d<T>::Conv2d(int64_t in_channels, LayerConfig c, const std::string& name, ParameterRegistry<T>& reg,
                  Rng& rng)
    : cfg(c) {
  cfg.validate();
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels * cfg.kernel_size * cfg.kernel_size));
  weight = reg.add_parameter(
      name + ".weight",
      uniform_tensor<T>({cfg.kernel_number, in_channels, cfg.kernel_size, cfg.kernel_size}, bound, rng));
  bias = reg.add_parameter(name + ".bias", uniform_tensor<T>({cfg.kernel_number}, bound, rng));
}

template <typename T>
Deconv2d<T>::Deconv2d(int64_t in_channels, LayerConfig c, const std::string& name, ParameterRegistry<T>& reg,
                      Rng& rng)
    : cfg(c) {
  cfg.validate();
  const double bound =
      1.0 / std::sqrt(static_cast<double>(cfg.kernel_number * cfg.kernel_size * cfg.kernel_size));
  weight = reg.add_parameter(
      name + ".weight",
      uniform_tensor<T>({in_channels, cfg.kernel_number, cfg.kernel_size, cfg.kernel_size}, bound, rng));
  bias = reg.add_parameter(name + ".bias", uniform_tensor<T>({cfg.kernel_number}, bound, rng));
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(int64_t channels, const std::string& name, ParameterRegistry<T>& reg) {
  gamma = reg.add_parameter(name + ".gamma", Tensor<T>({channels}, T(1)));
  beta = reg.add_parameter(name + ".beta", Tensor<T>({channels}, T(0)));
  running_mean = reg.add_buffer(name + ".running_mean", Tensor<T>({channels}, T(0)));
  running_var = reg.add_buffer(name + ".running_var", Tensor<T>({channels}, T(1)));
}

template <typename T>
LayerNorm<T>::LayerNorm(int64_t dim, const std::string& name, ParameterRegistry<T>& reg) {
  gamma = reg.add_parameter(name + ".gamma", Tensor<T>({dim}, T(1)));
  beta = reg.add_parameter(name + ".beta", Tensor<T>({dim}, T(0)));
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(int64_t d, int h, double dropout, const std::string& name,
                                          ParameterRegistry<T>& reg, Rng& rng)
    : dim(d), heads(h), dropout_p(dropout) {
  if (h < 1 || d % h != 0)
    throw ContractError("attention dim " + std::to_string(d) + " not divisible by heads " + std::to_string(h));
  q_proj = Linear<T>(d, d, name + ".q_proj", reg, rng);
  k_proj = Linear<T>(d, d, name + ".k_proj", reg, rng);
  v_proj = Linear<T>(d, d, name + ".v_proj", reg, rng);
  out_proj = Linear<T>(d, d, name + ".out_proj", reg, rng);
}

template <typename T>
AttentionResult<T> MultiHeadAttention<T>::forward(const Tensor<T>& query, const Tensor<T>& key,
                                                  const Tensor<T>& value, const RunContext& ctx) const {
  if (query.rank() != 3 || key.rank() != 3 || value.rank() != 3 || query.dim(2) != dim ||
      key.dim(2) != dim || value.dim(2) != dim || key.dim(1) != value.dim(1) ||
      query.dim(0) != key.dim(0) || key.dim(0) != value.dim(0))
    throw ContractError("attention: incompatible q/k/v shapes");
  const int64_t n = query.dim(0), lq = query.dim(1), lk = key.dim(1);
  if (lk == 0) throw ContractError("attention: empty key sequence");
  const int64_t hd = dim / heads;

  auto split = [&](const Tensor<T>& x, int64_t len) {
    return reshape(permute(reshape(x, {n, len, heads, hd}), {0, 2, 1, 3}), {n * heads, len, hd});
  };
  const Tensor<T> q = split(q_proj.forward(query), lq);
  const Tensor<T> k = split(k_proj.forward(key), lk);
  const Tensor<T> v = split(v_proj.forward(value), lk);
  const auto att = scaled_dot_attention(q, k, v, static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd))), dropout_p,
                                        ctx.rng, ctx.training);
  const Tensor<T> merged = reshape(permute(reshape(att.output, {n, heads, lq, hd}), {0, 2, 1, 3}), {n, lq, dim});
  return {out_proj.forward(merged), att.weights};
}

template <typename T>
FeedForward<T>::FeedForward(int64_t d, int64_t hidden, double dropout, const std::string& name,
                            ParameterRegistry<T>& reg, Rng& rng)
    : dropout_p(dropout) {
  fc1 = Linear<T>(d, hidden, name + ".fc1", reg, rng);
  fc2 = Linear<T>(hidden, d, name + ".fc2", reg, rng);
}

template <typename T>
Tensor<T> FeedForward<T>::forward(const Tensor<T>& x, const RunContext& ctx) const {
  return fc2.forward(dropout(relu(fc1.forward(x)), dropout_p, ctx.rng, ctx.training));
}

template class ParameterRegistry<float>;
template class ParameterRegistry<double>;
template class Linear<float>;
template class Linear<double>;
template class Conv2d<float>;
template class Conv2d<double>;
template class Deconv2d<float>;
template class Deconv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;
template class MultiHeadAttention<float>;
template class MultiHeadAttention<double>;
template class FeedForward<float>;
template class FeedForward<double>;

}  // namespace meaformer::nc

#include "meaformer/model/meaformer.hpp"

#include <cmath>
#include <numbers>

namespace meaformer::model {

using nc::ContractError;
using nc::LayerConfig;
using nc::Shape;

template <typename T>
Tensor<T> positional_encoding(int64_t h, int64_t w, int64_t channels) {
  if (channels % 4 != 0) throw ContractError("positional encoding needs channels divisible by 4");
  const int64_t half = channels / 2;
  const double scale = 2.0 * std::numbers::pi, eps = 1e-6, temperature = 10000.0;
  std::vector<T> out(static_cast<size_t>(h * w * channels));
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c) {
      const double y = (r + 1) / (h + eps) * scale;
      const double x = (c + 1) / (w + eps) * scale;
      T* dst = out.data() + (r * w + c) * channels;
      for (int64_t i = 0; i < half; ++i) {
        const double dim_t = std::pow(temperature, 2.0 * static_cast<double>(i / 2) / static_cast<double>(half));
        const bool even = i % 2 == 0;
        dst[i] = static_cast<T>(even ? std::sin(y / dim_t) : std::cos(y / dim_t));
        dst[half + i] = static_cast<T>(even ? std::sin(x / dim_t) : std::cos(x / dim_t));
      }
    }
  return Tensor<T>(Shape{h * w, channels}, std::move(out));
}

namespace {

LayerConfig conv_cfg(int kn, int ks, int st, int pad) { return {kn, ks, st, pad}; }

}  // namespace

template <typename T>
ResidualBlock<T>::ResidualBlock(int64_t channels, const std::string& name, nc::ParameterRegistry<T>& reg,
                                nc::Rng& rng)
    : conv1(channels, conv_cfg(static_cast<int>(channels), 3, 1, 1), name + ".conv1", reg, rng),
      conv2(channels, conv_cfg(static_cast<int>(channels), 3, 1, 1), name + ".conv2", reg, rng),
      bn1(channels, name + ".bn1", reg),
      bn2(channels, name + ".bn2", reg) {}

template <typename T>
Tensor<T> ResidualBlock<T>::forward(const Tensor<T>& x, const RunContext& ctx) const {
  Tensor<T> y = nc::batchnorm_relu(bn1, conv1.forward(x), ctx);
  y = bn2.forward(conv2.forward(y), ctx);
  return nc::relu(nc::add(y, x));
}

template <typename T>
Backbone<T>::Backbone(int64_t channels, const std::string& name, nc::ParameterRegistry<T>& reg, nc::Rng& rng) {
  const int c = static_cast<int>(channels);
  stem1 = nc::Conv2d<T>(3, conv_cfg(c / 2, 3, 2, 1), name + ".stem1", reg, rng);
  stem1_bn = nc::BatchNorm2d<T>(c / 2, name + ".stem1_bn", reg);
  stem2 = nc::Conv2d<T>(c / 2, conv_cfg(c, 3, 2, 1), name + ".stem2", reg, rng);
  stem2_bn = nc::BatchNorm2d<T>(c, name + ".stem2_bn", reg);
  transition = nc::Conv2d<T>(c, conv_cfg(2 * c, 3, 2, 1), name + ".transition", reg, rng);
  transition_bn = nc::BatchNorm2d<T>(2 * c, name + ".transition_bn", reg);
  for (int s = 0; s < 2; ++s) {
    const std::string p = name + ".stage" + std::to_string(s + 1);
    Stage st;
    st.high = ResidualBlock<T>(c, p + ".high", reg, rng);
    st.low = ResidualBlock<T>(2 * c, p + ".low", reg, rng);
    st.low_to_high = nc::Conv2d<T>(2 * c, conv_cfg(c, 1, 1, 0), p + ".low_to_high", reg, rng);
    st.low_to_high_bn = nc::BatchNorm2d<T>(c, p + ".low_to_high_bn", reg);
    st.fuse_down = s == 0;
    if (st.fuse_down) {
      st.high_to_low = nc::Conv2d<T>(c, conv_cfg(2 * c, 3, 2, 1), p + ".high_to_low", reg, rng);
      st.high_to_low_bn = nc::BatchNorm2d<T>(2 * c, p + ".high_to_low_bn", reg);
    }
    stages.push_back(std::move(st));
  }
}

template <typename T>
Tensor<T> Backbone<T>::forward(const Tensor<T>& x, const RunContext& ctx) const {
  Tensor<T> high = nc::batchnorm_relu(stem1_bn, stem1.forward(x), ctx);
  high = nc::batchnorm_relu(stem2_bn, stem2.forward(high), ctx);
  Tensor<T> low = nc::batchnorm_relu(transition_bn, transition.forward(high), ctx);
  for (const Stage& st : stages) {
    const Tensor<T> h = st.high.forward(high, ctx);
    const Tensor<T> l = st.low.forward(low, ctx);
    const Tensor<T> up = nc::upsample_bilinear(st.low_to_high_bn.forward(st.low_to_high.forward(l), ctx),
                                               h.dim(2), h.dim(3));
    high = nc::relu(nc::add(h, up));
    if (st.fuse_down) low = nc::relu(nc::add(l, st.high_to_low_bn.forward(st.high_to_low.forward(h), ctx)));
  }
  return high;
}

template <typename T>
Tensor<T> EncoderLayer<T>::forward(const Tensor<T>& src, const Tensor<T>& pos, const RunContext& ctx) const {
  const Tensor<T> qk = nc::add_broadcast(src, pos);
  const Tensor<T> attn = self_attn.forward(qk, qk, src, ctx).output;
  Tensor<T> x = norm1.forward(nc::add(src, nc::dropout(attn, dropout_p, ctx.rng, ctx.training)));
  const Tensor<T> f = ffn.forward(x, ctx);
  return norm2.forward(nc::add(x, nc::dropout(f, dropout_p, ctx.rng, ctx.training)));
}

template <typename T>
Tensor<T> DecoderLayer<T>::forward(const Tensor<T>& tgt, const Tensor<T>& memory, const Tensor<T>& pos,
                                   const Tensor<T>& query_pos, const RunContext& ctx) const {
  const Tensor<T> qk = nc::add_broadcast(tgt, query_pos);
  Tensor<T> x = norm1.forward(
      nc::add(tgt, nc::dropout(self_attn.forward(qk, qk, tgt, ctx).output, dropout_p, ctx.rng, ctx.training)));
  const Tensor<T> cross =
      cross_attn.forward(nc::add_broadcast(x, query_pos), nc::add_broadcast(memory, pos), memory, ctx).output;
  x = norm2.forward(nc::add(x, nc::dropout(cross, dropout_p, ctx.rng, ctx.training)));
  const Tensor<T> f = ffn.forward(x, ctx);
  return norm3.forward(nc::add(x, nc::dropout(f, dropout_p, ctx.rng, ctx.training)));
}

template <typename T>
MeaFormer<T>::MeaFormer(const ModelConfig& config, uint64_t seed) : config_(config) {
  config_.validate();
  nc::Rng rng(seed);
  const int64_t c = config_.channels;
  const int64_t hidden = config_.effective_ffn_hidden();
  const double p = config_.dropout;

  backbone_ = Backbone<T>(c, "backbone", registry_, rng);
  for (int i = 0; i < config_.encoder_layers; ++i) {
    const std::string n = "encoder." + std::to_string(i);
    EncoderLayer<T> layer;
    layer.self_attn = nc::MultiHeadAttention<T>(c, config_.heads, p, n + ".self_attn", registry_, rng);
    layer.ffn = nc::FeedForward<T>(c, hidden, p, n + ".ffn", registry_, rng);
    layer.norm1 = nc::LayerNorm<T>(c, n + ".norm1", registry_);
    layer.norm2 = nc::LayerNorm<T>(c, n + ".norm2", registry_);
    layer.dropout_p = p;
    encoder_.push_back(std::move(layer));
  }
  {
    std::vector<T> q(static_cast<size_t>(config_.queries * c));
    for (auto& v : q) v = static_cast<T>(rng.normal());
    query_embed = registry_.add_parameter("query_embed", Tensor<T>(Shape{config_.queries, c}, std::move(q)));
  }
  for (int i = 0; i < config_.decoder_layers; ++i) {
    const std::string n = "decoder." + std::to_string(i);
    DecoderLayer<T> layer;
    layer.self_attn = nc::MultiHeadAttention<T>(c, config_.heads, p, n + ".self_attn", registry_, rng);
    layer.cross_attn = nc::MultiHeadAttention<T>(c, config_.heads, p, n + ".cross_attn", registry_, rng);
    layer.ffn = nc::FeedForward<T>(c, hidden, p, n + ".ffn", registry_, rng);
    layer.norm1 = nc::LayerNorm<T>(c, n + ".norm1", registry_);
    layer.norm2 = nc::LayerNorm<T>(c, n + ".norm2", registry_);
    layer.norm3 = nc::LayerNorm<T>(c, n + ".norm3", registry_);
    layer.dropout_p = p;
    decoder_.push_back(std::move(layer));
  }
  decoder_norm_ = nc::LayerNorm<T>(c, "decoder.norm", registry_);

  // conv(32,3,1), deconv(32,4,2), conv(32,3,1), deconv(32,4,2), conv(out,1,1)
  const int hc = config_.head_channels;
  head_convs.emplace_back(c, conv_cfg(hc, 3, 1, 1), "head.0.conv", registry_, rng);
  head_bns_.emplace_back(hc, "head.0.bn", registry_);
  head_deconvs.emplace_back(hc, conv_cfg(hc, 4, 2, 1), "head.1.deconv", registry_, rng);
  head_bns_.emplace_back(hc, "head.1.bn", registry_);
  head_convs.emplace_back(hc, conv_cfg(hc, 3, 1, 1), "head.2.conv", registry_, rng);
  head_bns_.emplace_back(hc, "head.2.bn", registry_);
  head_deconvs.emplace_back(hc, conv_cfg(hc, 4, 2, 1), "head.3.deconv", registry_, rng);
  head_bns_.emplace_back(hc, "head.3.bn", registry_);
  head_convs.emplace_back(hc, conv_cfg(config_.head_out_channels, 1, 1, 0), "head.4.conv", registry_, rng);

  reg_fc1 = nc::Linear<T>(c, config_.reg_hidden, "reg.fc1", registry_, rng);
  reg_fc2 = nc::Linear<T>(config_.reg_hidden, config_.reg_hidden, "reg.fc2", registry_, rng);
  reg_out = nc::Linear<T>(config_.reg_hidden, 2, "reg.out", registry_, rng);
}

template <typename T>
Tensor<T> MeaFormer<T>::backbone_forward(const Tensor<T>& input, const RunContext& ctx) const {
  const int64_t s = config_.input_size;
  if (input.rank() != 4 || input.dim(1) != 3 || input.dim(2) != s || input.dim(3) != s)
    throw ContractError("model input must be [N,3," + std::to_string(s) + "," + std::to_string(s) + "]");
  return backbone_.forward(input, ctx);
}

template <typename T>
Tensor<T> MeaFormer<T>::encode(const Tensor<T>& features, const RunContext& ctx) const {
  if (features.rank() != 4) throw ContractError("encode expects [N,C,h,w]");
  const int64_t n = features.dim(0), c = features.dim(1), h = features.dim(2), w = features.dim(3);
  Tensor<T> x = nc::reshape(nc::permute(features, {0, 2, 3, 1}), Shape{n, h * w, c});
  const Tensor<T> pos = positional_encoding<T>(h, w, c);
  for (const auto& layer : encoder_) x = layer.forward(x, pos, ctx);
  return x;
}

template <typename T>
std::vector<Tensor<T>> MeaFormer<T>::decode(const Tensor<T>& memory, int64_t h, int64_t w,
                                            const RunContext& ctx) const {
  if (memory.rank() != 3 || memory.dim(1) == 0) throw ContractError("decode needs a non-empty encoder memory");
  if (memory.dim(1) != h * w) throw ContractError("decode: memory length does not match the grid");
  const int64_t n = memory.dim(0), c = memory.dim(2);
  const Tensor<T> pos = positional_encoding<T>(h, w, c);
  Tensor<T> tgt(Shape{n, config_.queries, c});
  std::vector<Tensor<T>> states;
  for (const auto& layer : decoder_) {
    tgt = layer.forward(tgt, memory, pos, query_embed, ctx);
    states.push_back(decoder_norm_.forward(tgt));
  }
  return states;
}

template <typename T>
Tensor<T> MeaFormer<T>::prediction_head(const Tensor<T>& memory, int64_t h, int64_t w,
                                        const RunContext& ctx) const {
  const int64_t n = memory.dim(0), c = memory.dim(2);
  Tensor<T> x = nc::permute(nc::reshape(memory, Shape{n, h, w, c}), {0, 3, 1, 2});
  x = nc::batchnorm_relu(head_bns_[0], head_convs[0].forward(x), ctx);
  x = nc::batchnorm_relu(head_bns_[1], head_deconvs[0].forward(x), ctx);
  x = nc::batchnorm_relu(head_bns_[2], head_convs[1].forward(x), ctx);
  x = nc::batchnorm_relu(head_bns_[3], head_deconvs[1].forward(x), ctx);
  return head_convs[2].forward(x);
}

template <typename T>
Tensor<T> MeaFormer<T>::regression_ffn(const Tensor<T>& queries) const {
  Tensor<T> x = nc::relu(reg_fc1.forward(queries));
  x = nc::relu(reg_fc2.forward(x));
  return nc::sigmoid(reg_out.forward(x));
}

template <typename T>
ModelOutput<T> MeaFormer<T>::forward(const Tensor<T>& input, const RunContext& ctx) const {
  const Tensor<T> features = backbone_forward(input, ctx);
  const int64_t h = features.dim(2), w = features.dim(3);
  const Tensor<T> memory = encode(features, ctx);
  ModelOutput<T> out;
  const Tensor<T> o = prediction_head(memory, h, w, ctx);
  out.seg = nc::sigmoid(nc::slice_channels(o, 0, 1));
  out.heatmaps = nc::slice_channels(o, 1, config_.head_out_channels);
  for (const auto& state : decode(memory, h, w, ctx)) out.keypoints.push_back(regression_ffn(state));
  return out;
}

template Tensor<float> positional_encoding(int64_t, int64_t, int64_t);
template Tensor<double> positional_encoding(int64_t, int64_t, int64_t);
template struct ResidualBlock<float>;
template struct ResidualBlock<double>;
template struct Backbone<float>;
template struct Backbone<double>;
template class MeaFormer<float>;
template class MeaFormer<double>;

}  // namespace meaformer::model

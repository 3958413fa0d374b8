#pragma once

#include <vector>

#include "meaformer/model/config.hpp"
#include "meaformer/numcore/layers.hpp"

namespace meaformer::model {

using nc::RunContext;
using nc::Tensor;

/// Fixed 2D sine-cosine encoding, [h*w, C]: the first C/2 channels encode the
/// row, the rest the column, sin and cos interleaved.
template <typename T> Tensor<T> positional_encoding(int64_t h, int64_t w, int64_t channels);

template <typename T>
struct ModelOutput {
  Tensor<T> seg;                     // [N,1,H0,W0], sigmoid applied
  Tensor<T> heatmaps;                // [N,K,H0,W0]
  std::vector<Tensor<T>> keypoints;  // one [N,Nq,2] per decoder layer, in [0,1]
};

/// Residual block: conv3x3-BN-ReLU-conv3x3-BN plus identity, then ReLU.
template <typename T>
struct ResidualBlock {
  nc::Conv2d<T> conv1, conv2;
  nc::BatchNorm2d<T> bn1, bn2;
  ResidualBlock() = default;
  ResidualBlock(int64_t channels, const std::string& name, nc::ParameterRegistry<T>& reg, nc::Rng& rng);
  Tensor<T> forward(const Tensor<T>& x, const RunContext& ctx) const;
};

/// Two-branch (1/4 and 1/8) multi-resolution backbone producing F at 1/4.
template <typename T>
struct Backbone {
  struct Stage {
    ResidualBlock<T> high, low;
    nc::Conv2d<T> low_to_high;  // 1x1, then bilinear upsampling
    nc::BatchNorm2d<T> low_to_high_bn;
    nc::Conv2d<T> high_to_low;  // 3x3 stride 2; absent in the last stage
    nc::BatchNorm2d<T> high_to_low_bn;
    bool fuse_down = false;
  };
  nc::Conv2d<T> stem1, stem2, transition;
  nc::BatchNorm2d<T> stem1_bn, stem2_bn, transition_bn;
  std::vector<Stage> stages;

  Backbone() = default;
  Backbone(int64_t channels, const std::string& name, nc::ParameterRegistry<T>& reg, nc::Rng& rng);
  Tensor<T> forward(const Tensor<T>& x, const RunContext& ctx) const;
};

template <typename T>
struct EncoderLayer {
  nc::MultiHeadAttention<T> self_attn;
  nc::FeedForward<T> ffn;
  nc::LayerNorm<T> norm1, norm2;
  double dropout_p = 0.0;
  Tensor<T> forward(const Tensor<T>& src, const Tensor<T>& pos, const RunContext& ctx) const;
};

template <typename T>
struct DecoderLayer {
  nc::MultiHeadAttention<T> self_attn, cross_attn;
  nc::FeedForward<T> ffn;
  nc::LayerNorm<T> norm1, norm2, norm3;
  double dropout_p = 0.0;
  Tensor<T> forward(const Tensor<T>& tgt, const Tensor<T>& memory, const Tensor<T>& pos,
                    const Tensor<T>& query_pos, const RunContext& ctx) const;
};

/// The MeaFormer network. Parameters live in registry(); names are stable
/// and used by checkpoints.
template <typename T>
class MeaFormer {
 public:
  MeaFormer(const ModelConfig& config, uint64_t seed);
  MeaFormer(const MeaFormer&) = delete;
  MeaFormer& operator=(const MeaFormer&) = delete;

  const ModelConfig& config() const { return config_; }
  nc::ParameterRegistry<T>& registry() { return registry_; }
  const nc::ParameterRegistry<T>& registry() const { return registry_; }
  std::vector<Tensor<T>> parameters() const { return registry_.parameter_tensors(); }

  /// input [N,3,H0,W0] -> F [N,C,H0/4,W0/4].
  Tensor<T> backbone_forward(const Tensor<T>& input, const RunContext& ctx) const;
  /// F -> X' [N,h*w,C], positional encodings added at every layer.
  Tensor<T> encode(const Tensor<T>& features, const RunContext& ctx) const;
  /// Query states after each decoder layer (final norm applied), [N,Nq,C] each.
  std::vector<Tensor<T>> decode(const Tensor<T>& memory, int64_t h, int64_t w, const RunContext& ctx) const;
  /// X' -> O [N,head_out,H0,W0] (raw, no activation).
  Tensor<T> prediction_head(const Tensor<T>& memory, int64_t h, int64_t w, const RunContext& ctx) const;
  /// Shared regression FFN: [N,Nq,C] -> [N,Nq,2] in [0,1].
  Tensor<T> regression_ffn(const Tensor<T>& queries) const;

  ModelOutput<T> forward(const Tensor<T>& input, const RunContext& ctx) const;

  // Exposed for audits.
  Tensor<T> query_embed;
  std::vector<nc::Conv2d<T>> head_convs;     // layers 0, 2, 4
  std::vector<nc::Deconv2d<T>> head_deconvs; // layers 1, 3
  nc::Linear<T> reg_fc1, reg_fc2, reg_out;

 private:
  ModelConfig config_;
  nc::ParameterRegistry<T> registry_;
  Backbone<T> backbone_;
  std::vector<EncoderLayer<T>> encoder_;
  std::vector<DecoderLayer<T>> decoder_;
  nc::LayerNorm<T> decoder_norm_;
  std::vector<nc::BatchNorm2d<T>> head_bns_;
};

extern template class MeaFormer<float>;
extern template class MeaFormer<double>;

}  // namespace meaformer::model

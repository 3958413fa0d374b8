#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace meaformer::model {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  int input_size = 64;        // H0 = W0
  int channels = 16;          // C
  int encoder_layers = 2;     // N_en
  int decoder_layers = 2;     // N_de
  int queries = 4;            // N_q
  int heads = 8;
  int ffn_hidden = 0;         // 0 selects 4 * C
  int reg_hidden = 96;        // d
  int head_channels = 32;
  int head_out_channels = 5;  // 1 segmentation plane + N_q heatmaps
  double dropout = 0.1;

  int feature_size() const { return input_size / 4; }
  int effective_ffn_hidden() const { return ffn_hidden > 0 ? ffn_hidden : 4 * channels; }
  int heatmap_channels() const { return head_out_channels - 1; }

  void validate() const;

  /// One `key=value` line per field in a fixed order.
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);

  /// Desk-scale presets for the two pipeline steps.
  static ModelConfig step1(int input_size = 64, int channels = 16);
  static ModelConfig step2(int input_size = 64, int channels = 16);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace meaformer::model

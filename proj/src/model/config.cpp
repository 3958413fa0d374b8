#include "meaformer/model/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <sstream>

namespace meaformer::model {

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (input_size <= 0 || input_size % 4 != 0) fail("input_size must be a positive multiple of 4");
  if (channels <= 0 || channels % 4 != 0) fail("channels must be a positive multiple of 4");
  if (heads <= 0 || channels % heads != 0) fail("channels must be divisible by heads");
  if (queries != 2 && queries != 4) fail("queries must be 2 or 4");
  if (head_out_channels != queries + 1) fail("head_out_channels must equal queries + 1");
  if (encoder_layers < 0 || decoder_layers < 1) fail("need >= 0 encoder and >= 1 decoder layers");
  if (ffn_hidden < 0 || reg_hidden <= 0 || head_channels <= 0) fail("hidden sizes must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "input_size=" << input_size << '\n'
     << "channels=" << channels << '\n'
     << "encoder_layers=" << encoder_layers << '\n'
     << "decoder_layers=" << decoder_layers << '\n'
     << "queries=" << queries << '\n'
     << "heads=" << heads << '\n'
     << "ffn_hidden=" << ffn_hidden << '\n'
     << "reg_hidden=" << reg_hidden << '\n'
     << "head_channels=" << head_channels << '\n'
     << "head_out_channels=" << head_out_channels << '\n';
  // round-trippable double formatting
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, dropout);
  os << "dropout=" << std::string(buf, end) << '\n';
  return os.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig c;
  const std::map<std::string, int*> ints{{"input_size", &c.input_size},         {"channels", &c.channels},
                                         {"encoder_layers", &c.encoder_layers}, {"decoder_layers", &c.decoder_layers},
                                         {"queries", &c.queries},               {"heads", &c.heads},
                                         {"ffn_hidden", &c.ffn_hidden},         {"reg_hidden", &c.reg_hidden},
                                         {"head_channels", &c.head_channels},   {"head_out_channels", &c.head_out_channels}};
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("model config: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    const char* first = value.data();
    const char* last = value.data() + value.size();
    if (key == "dropout") {
      auto [p, ec] = std::from_chars(first, last, c.dropout);
      if (ec != std::errc() || p != last) throw ConfigError("model config: bad dropout");
    } else if (auto it = ints.find(key); it != ints.end()) {
      auto [p, ec] = std::from_chars(first, last, *it->second);
      if (ec != std::errc() || p != last) throw ConfigError("model config: bad value for " + key);
    } else {
      throw ConfigError("model config: unknown key " + key);
    }
  }
  c.validate();
  return c;
}

ModelConfig ModelConfig::step1(int input_size, int channels) {
  ModelConfig c;
  c.input_size = input_size;
  c.channels = channels;
  c.queries = 2;
  c.head_out_channels = 3;
  return c;
}

ModelConfig ModelConfig::step2(int input_size, int channels) {
  ModelConfig c;
  c.input_size = input_size;
  c.channels = channels;
  return c;
}

}  // namespace meaformer::model

#include "meaformer/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace meaformer::model {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

using Kind = CheckpointError::Kind;

constexpr char kMagic[4] = {'M', 'E', 'A', 'F'};

class Writer {
 public:
  template <typename V>
  void put(V v) {
    const auto* p = reinterpret_cast<const uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(V));
  }
  void put_bytes(const void* data, size_t n) {
    const auto* p = static_cast<const uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  void put_string(const std::string& s) {
    put(static_cast<uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  std::vector<uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(const std::vector<uint8_t>& b) : bytes_(b) {}
  void need(size_t n) const {
    if (pos_ + n > bytes_.size()) throw CheckpointError(Kind::Truncated, "checkpoint truncated");
  }
  template <typename V>
  V get() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  void get_bytes(void* dst, size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::string get_string(size_t limit) {
    const auto n = get<uint32_t>();
    if (n > limit) throw CheckpointError(Kind::BadFormat, "checkpoint string length out of range");
    std::string s(n, '\0');
    get_bytes(s.data(), n);
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<uint8_t>& bytes_;
  size_t pos_ = 0;
};

}  // namespace

std::vector<uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.put_bytes(kMagic, 4);
  w.put(kCheckpointVersion);
  w.put_string(ckpt.config.to_text());
  w.put(ckpt.step);
  w.put(ckpt.seed);
  w.put(static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    w.put_string(t.name);
    w.put(static_cast<uint32_t>(t.shape.size()));
    for (int64_t d : t.shape) w.put(d);
    w.put_bytes(t.values.data(), t.values.size() * sizeof(float));
  }
  return std::move(w.bytes);
}

Checkpoint deserialize_checkpoint(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw CheckpointError(Kind::BadFormat, "not a checkpoint file (bad magic)");
  Reader r(bytes);
  r.get<uint32_t>();  // magic
  const auto version = r.get<uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError(Kind::Version, "checkpoint version " + std::to_string(version) + " unsupported (expected " +
                                             std::to_string(kCheckpointVersion) + ")");
  Checkpoint ckpt;
  try {
    ckpt.config = ModelConfig::from_text(r.get_string(1 << 16));
  } catch (const ConfigError& e) {
    throw CheckpointError(Kind::BadFormat, std::string("checkpoint config unreadable: ") + e.what());
  }
  ckpt.step = r.get<uint64_t>();
  ckpt.seed = r.get<uint64_t>();
  const auto count = r.get<uint32_t>();
  for (uint32_t i = 0; i < count; ++i) {
    CheckpointBlob blob;
    blob.name = r.get_string(1024);
    const auto rank = r.get<uint32_t>();
    if (rank > 8) throw CheckpointError(Kind::BadFormat, "checkpoint tensor rank out of range");
    int64_t n = 1;
    for (uint32_t k = 0; k < rank; ++k) {
      const auto d = r.get<int64_t>();
      if (d < 0 || d > (int64_t{1} << 32)) throw CheckpointError(Kind::BadFormat, "checkpoint dimension out of range");
      blob.shape.push_back(d);
      n *= d;
    }
    r.need(static_cast<size_t>(n) * sizeof(float));
    blob.values.resize(static_cast<size_t>(n));
    r.get_bytes(blob.values.data(), blob.values.size() * sizeof(float));
    ckpt.tensors.push_back(std::move(blob));
  }
  if (!r.done()) throw CheckpointError(Kind::BadFormat, "trailing bytes after checkpoint records");
  return ckpt;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(Kind::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(Kind::Io, "write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::Io, "cannot open " + path.string());
  const std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

template <typename T>
Checkpoint make_checkpoint(const MeaFormer<T>& model, uint64_t step, uint64_t seed) {
  Checkpoint ckpt{model.config(), step, seed, {}};
  for (const auto& nt : model.registry().state()) {
    CheckpointBlob blob{nt.name, nt.tensor.shape(), {}};
    blob.values.reserve(static_cast<size_t>(nt.tensor.numel()));
    for (T v : nt.tensor.data()) blob.values.push_back(static_cast<float>(v));
    ckpt.tensors.push_back(std::move(blob));
  }
  return ckpt;
}

template <typename T>
void load_state(MeaFormer<T>& model, const Checkpoint& ckpt) {
  if (!(ckpt.config == model.config()))
    throw CheckpointError(Kind::ConfigMismatch, "checkpoint config does not match the model config");
  const auto state = model.registry().state();
  if (state.size() != ckpt.tensors.size())
    throw CheckpointError(Kind::MissingTensor, "checkpoint tensor count differs from the model");
  for (size_t i = 0; i < state.size(); ++i) {
    const auto& blob = ckpt.tensors[i];
    if (blob.name != state[i].name || blob.shape != state[i].tensor.shape())
      throw CheckpointError(Kind::MissingTensor, "checkpoint tensor " + blob.name + " does not match " + state[i].name);
    auto dst = state[i].tensor.data();
    for (size_t k = 0; k < blob.values.size(); ++k) dst[k] = static_cast<T>(blob.values[k]);
  }
}

template <typename T>
void save_checkpoint(const MeaFormer<T>& model, const std::filesystem::path& path, uint64_t step, uint64_t seed) {
  write_checkpoint(make_checkpoint(model, step, seed), path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  Checkpoint ckpt = read_checkpoint(path);
  if (!(ckpt.config == expected))
    throw CheckpointError(Kind::ConfigMismatch, "checkpoint " + path.string() + " was saved with a different config");
  return ckpt;
}

template Checkpoint make_checkpoint(const MeaFormer<float>&, uint64_t, uint64_t);
template Checkpoint make_checkpoint(const MeaFormer<double>&, uint64_t, uint64_t);
template void load_state(MeaFormer<float>&, const Checkpoint&);
template void load_state(MeaFormer<double>&, const Checkpoint&);
template void save_checkpoint(const MeaFormer<float>&, const std::filesystem::path&, uint64_t, uint64_t);
template void save_checkpoint(const MeaFormer<double>&, const std::filesystem::path&, uint64_t, uint64_t);

}  // namespace meaformer::model

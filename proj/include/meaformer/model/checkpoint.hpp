#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "meaformer/model/config.hpp"
#include "meaformer/model/meaformer.hpp"

namespace meaformer::model {

inline constexpr uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { Io, BadFormat, Version, Truncated, ConfigMismatch, MissingTensor };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct CheckpointBlob {
  std::string name;
  std::vector<int64_t> shape;
  std::vector<float> values;
};

struct Checkpoint {
  ModelConfig config;
  uint64_t step = 0;
  uint64_t seed = 0;
  std::vector<CheckpointBlob> tensors;
};

/// "MEAF", u32 version, u32-length-prefixed config text, u64 step, u64 seed,
/// u32 record count, then (name, rank, dims, little-endian f32 data) records.
std::vector<uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<uint8_t>& bytes);

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Snapshot of every parameter and buffer.
template <typename T>
Checkpoint make_checkpoint(const MeaFormer<T>& model, uint64_t step, uint64_t seed);

/// Copies stored values into a model built from the same config.
template <typename T>
void load_state(MeaFormer<T>& model, const Checkpoint& ckpt);

template <typename T>
void save_checkpoint(const MeaFormer<T>& model, const std::filesystem::path& path, uint64_t step = 0,
                     uint64_t seed = 0);

/// Reads a checkpoint and rejects it when its config differs from `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace meaformer::model

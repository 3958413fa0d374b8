#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "meaformer/data/phantom.hpp"

namespace meaformer::data {

inline constexpr uint32_t kDatasetVersion = 1;

class DatasetError : public std::runtime_error {
 public:
  enum class Kind { Io, BadFormat, Version, Truncated, Corrupt };
  DatasetError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// File layout: "MEAD", u32 version, u64 count, then per phantom:
/// u32 height, u32 width, f32 image[h*w], u32 run count, u32 runs (alternating
/// 0/1 starting with 0), f64 endpoints[8], f64 box[4], f64 spacing, u64 seed.
/// Little-endian throughout.
void write_dataset(const std::vector<Phantom>& phantoms, const std::filesystem::path& path);
std::vector<Phantom> read_dataset(const std::filesystem::path& path);

/// Mask run-length coding used by the file format.
std::vector<uint32_t> encode_runs(const Mask& mask);
Mask decode_runs(const std::vector<uint32_t>& runs, int height, int width);

/// Reads phantoms one at a time.
class DatasetReader {
 public:
  explicit DatasetReader(const std::filesystem::path& path);
  uint64_t size() const { return count_; }
  uint64_t position() const { return read_; }
  std::optional<Phantom> next();

 private:
  std::ifstream in_;
  std::string path_;
  uint64_t count_ = 0;
  uint64_t read_ = 0;
};

/// Writes phantoms as they come; `close` patches the count.
class DatasetWriter {
 public:
  explicit DatasetWriter(const std::filesystem::path& path);
  ~DatasetWriter();
  void write(const Phantom& phantom);
  void close();

 private:
  std::ofstream out_;
  std::string path_;
  uint64_t count_ = 0;
  bool closed_ = false;
};

/// `count` phantoms with seeds derive_seed(seed, i), generated in parallel.
std::vector<Phantom> generate_dataset(size_t count, uint64_t seed, const PhantomConfig& config = {});

}  // namespace meaformer::data

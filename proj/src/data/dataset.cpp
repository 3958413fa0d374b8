#include "meaformer/data/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <exception>
#include <thread>

#include "meaformer/numcore/rng.hpp"

namespace meaformer::data {

static_assert(std::endian::native == std::endian::little, "dataset I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'M', 'E', 'A', 'D'};
constexpr uint32_t kMaxSide = 1u << 14;

using Kind = DatasetError::Kind;

template <typename V>
void put(std::ostream& out, const V& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& in, const std::string& path) {
  V v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(V))) throw DatasetError(Kind::Truncated, "truncated dataset: " + path);
  return v;
}

void write_record(std::ostream& out, const Phantom& p) {
  put(out, uint32_t(p.height()));
  put(out, uint32_t(p.width()));
  std::vector<float> pixels(p.image.values.begin(), p.image.values.end());
  out.write(reinterpret_cast<const char*>(pixels.data()), std::streamsize(pixels.size() * sizeof(float)));
  const auto runs = encode_runs(p.mask);
  put(out, uint32_t(runs.size()));
  out.write(reinterpret_cast<const char*>(runs.data()), std::streamsize(runs.size() * sizeof(uint32_t)));
  for (const Point& q : p.recist.as_list()) {
    put(out, q.x);
    put(out, q.y);
  }
  for (double v : {p.box.top_left.x, p.box.top_left.y, p.box.bottom_right.x, p.box.bottom_right.y}) put(out, v);
  put(out, p.spacing_mm_per_px);
  put(out, p.seed);
}

Phantom read_record(std::istream& in, const std::string& path) {
  const auto h = get<uint32_t>(in, path), w = get<uint32_t>(in, path);
  if (h == 0 || w == 0 || h > kMaxSide || w > kMaxSide)
    throw DatasetError(Kind::Corrupt, "implausible phantom size in " + path);
  Phantom p;
  std::vector<float> pixels(size_t(h) * w);
  if (!in.read(reinterpret_cast<char*>(pixels.data()), std::streamsize(pixels.size() * sizeof(float))))
    throw DatasetError(Kind::Truncated, "truncated dataset: " + path);
  p.image = Plane(int(h), int(w));
  std::copy(pixels.begin(), pixels.end(), p.image.values.begin());
  const auto n_runs = get<uint32_t>(in, path);
  if (n_runs > size_t(h) * w + 1) throw DatasetError(Kind::Corrupt, "implausible run count in " + path);
  std::vector<uint32_t> runs(n_runs);
  if (!in.read(reinterpret_cast<char*>(runs.data()), std::streamsize(runs.size() * sizeof(uint32_t))))
    throw DatasetError(Kind::Truncated, "truncated dataset: " + path);
  p.mask = decode_runs(runs, int(h), int(w));
  std::vector<Point> pts(4);
  for (auto& q : pts) {
    q.x = get<double>(in, path);
    q.y = get<double>(in, path);
  }
  p.recist = RecistEndpoints::from_list(pts);
  p.box.top_left.x = get<double>(in, path);
  p.box.top_left.y = get<double>(in, path);
  p.box.bottom_right.x = get<double>(in, path);
  p.box.bottom_right.y = get<double>(in, path);
  p.spacing_mm_per_px = get<double>(in, path);
  p.seed = get<uint64_t>(in, path);
  return p;
}

}  // namespace

std::vector<uint32_t> encode_runs(const Mask& mask) {
  std::vector<uint32_t> runs;
  uint8_t current = 0;
  uint32_t length = 0;
  for (uint8_t v : mask.values) {
    const uint8_t bit = v ? 1 : 0;
    if (bit != current) {
      runs.push_back(length);
      current = bit;
      length = 0;
    }
    ++length;
  }
  runs.push_back(length);
  return runs;
}

Mask decode_runs(const std::vector<uint32_t>& runs, int height, int width) {
  Mask m(height, width);
  size_t pos = 0;
  uint8_t value = 0;
  for (uint32_t len : runs) {
    if (len > m.values.size() - pos) throw DatasetError(Kind::Corrupt, "mask runs exceed the image");
    std::fill_n(m.values.begin() + std::ptrdiff_t(pos), len, value);
    pos += len;
    value ^= 1;
  }
  if (pos != m.values.size()) throw DatasetError(Kind::Corrupt, "mask runs do not cover the image");
  return m;
}

DatasetWriter::DatasetWriter(const std::filesystem::path& path) : out_(path, std::ios::binary), path_(path.string()) {
  if (!out_) throw DatasetError(Kind::Io, "cannot open " + path_ + " for writing");
  out_.write(kMagic, 4);
  put(out_, kDatasetVersion);
  put(out_, uint64_t{0});
}

DatasetWriter::~DatasetWriter() {
  try {
    close();
  } catch (...) {
  }
}

void DatasetWriter::write(const Phantom& phantom) {
  if (closed_) throw DatasetError(Kind::Io, "dataset writer already closed");
  write_record(out_, phantom);
  ++count_;
}

void DatasetWriter::close() {
  if (closed_) return;
  closed_ = true;
  out_.seekp(8);
  put(out_, count_);
  out_.close();
  if (!out_) throw DatasetError(Kind::Io, "write failed: " + path_);
}

void write_dataset(const std::vector<Phantom>& phantoms, const std::filesystem::path& path) {
  DatasetWriter w(path);
  for (const auto& p : phantoms) w.write(p);
  w.close();
}

DatasetReader::DatasetReader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path.string()) {
  if (!in_) throw DatasetError(Kind::Io, "cannot open " + path_);
  char magic[4];
  if (!in_.read(magic, 4)) throw DatasetError(Kind::Truncated, "truncated dataset: " + path_);
  if (std::memcmp(magic, kMagic, 4) != 0) throw DatasetError(Kind::BadFormat, path_ + " is not a dataset file");
  const auto version = get<uint32_t>(in_, path_);
  if (version != kDatasetVersion)
    throw DatasetError(Kind::Version, "unsupported dataset version " + std::to_string(version) + " in " + path_);
  count_ = get<uint64_t>(in_, path_);
}

std::optional<Phantom> DatasetReader::next() {
  if (read_ == count_) return std::nullopt;
  Phantom p = read_record(in_, path_);
  ++read_;
  return p;
}

std::vector<Phantom> read_dataset(const std::filesystem::path& path) {
  DatasetReader reader(path);
  std::vector<Phantom> out;
  out.reserve(size_t(std::min<uint64_t>(reader.size(), 1u << 20)));
  while (auto p = reader.next()) out.push_back(std::move(*p));
  return out;
}

std::vector<Phantom> generate_dataset(size_t count, uint64_t seed, const PhantomConfig& config) {
  config.validate();
  std::vector<Phantom> out(count);
  const size_t workers = std::max<size_t>(1, std::min<size_t>(std::thread::hardware_concurrency(), count));
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (size_t t = 0; t < workers; ++t)
    pool.emplace_back([&, t] {
      try {
        for (size_t i = t; i < count; i += workers) out[i] = generate_phantom(nc::Rng::derive_seed(seed, i), config);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace meaformer::data

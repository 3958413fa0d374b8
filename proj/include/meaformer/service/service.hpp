#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "meaformer/data/phantom.hpp"
#include "meaformer/pipeline/measure.hpp"
#include "meaformer/pipeline/response.hpp"

namespace httplib {
class Server;
}

namespace meaformer::service {

using nlohmann::json;

/// Raised for requests the client got wrong; maps to HTTP 400.
class RequestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct HttpReply {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

std::string base64_encode(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> base64_decode(const std::string& text);

/// Row-major plane as base64 of little-endian f32 (values are rounded to f32).
std::string encode_plane(const geom::Plane& plane);
geom::Plane decode_plane(const std::string& b64, int height, int width);

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

json measurement_json(const geom::RecistMeasurement& m);
/// MeasureResponse body: box, LOI, contour, four measurements, fusion choice
/// and flags. Latency is reported separately so bodies stay deterministic.
json report_json(const pipeline::MeasurementReport& r);

/// Long diameter in mm from a number, {"long_mm": x}, or a MeasureResponse
/// (its fused measurement).
double long_mm_from_json(const json& j, const char* field);

struct ServiceOptions {
  std::filesystem::path step1;
  std::filesystem::path step2;
  /// Datasets reachable by name ({"dataset": name, "index": i}) and under /demo.
  std::map<std::string, std::filesystem::path> demo_datasets;
};

/// Stateless measurement service over two read-only models. Handlers are
/// safe to call concurrently.
class MeasurementService {
 public:
  /// Throws model::CheckpointError (or std::runtime_error) when a
  /// checkpoint cannot be loaded.
  explicit MeasurementService(const ServiceOptions& options);

  HttpReply measure(const std::string& body) const;
  HttpReply assess(const std::string& body) const;
  HttpReply health() const;
  HttpReply demo_index() const;
  HttpReply demo_case(const std::string& name, size_t index) const;

  const pipeline::Measurer& measurer() const { return *measurer_; }

 private:
  std::unique_ptr<pipeline::Measurer> measurer_;
  json checkpoints_;
  std::map<std::string, std::vector<data::Phantom>> demos_;
};

/// Routes: POST /measure, POST /assess, GET /health, GET /demo,
/// GET /demo/<name>/<index>; `static_dir` (if non-empty) is mounted at /.
/// Adds an X-Latency-Ms header to /measure replies.
std::unique_ptr<httplib::Server> make_server(const MeasurementService& service,
                                             const std::filesystem::path& static_dir = {});

}  // namespace meaformer::service

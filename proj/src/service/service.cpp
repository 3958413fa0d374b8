#include "meaformer/service/service.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <httplib.h>
#include <openssl/evp.h>

#include "meaformer/data/dataset.hpp"
#include "meaformer/geometry/measures.hpp"
#include "meaformer/model/checkpoint.hpp"

namespace meaformer::service {

std::string base64_encode(const std::vector<uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), int(bytes.size()));
  out.resize(size_t(n));
  return out;
}

std::vector<uint8_t> base64_decode(const std::string& text) {
  std::string clean;
  clean.reserve(text.size());
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) clean.push_back(c);
  if (clean.size() % 4 != 0) throw RequestError("base64 length must be a multiple of 4");
  std::vector<uint8_t> out(clean.size() / 4 * 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(clean.data()), int(clean.size()));
  if (n < 0) throw RequestError("invalid base64");
  size_t pad = 0;
  if (!clean.empty() && clean.back() == '=') ++pad;
  if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++pad;
  out.resize(size_t(n) - pad);
  return out;
}

std::string encode_plane(const geom::Plane& plane) {
  std::vector<uint8_t> bytes(plane.values.size() * sizeof(float));
  for (size_t i = 0; i < plane.values.size(); ++i) {
    const float f = static_cast<float>(plane.values[i]);
    std::memcpy(bytes.data() + i * sizeof(float), &f, sizeof(float));
  }
  return base64_encode(bytes);
}

geom::Plane decode_plane(const std::string& b64, int height, int width) {
  if (height < 2 || width < 2 || height > 4096 || width > 4096)
    throw RequestError("image size must be between 2 and 4096 per side");
  const auto bytes = base64_decode(b64);
  if (bytes.size() != size_t(height) * width * sizeof(float))
    throw RequestError("image data holds " + std::to_string(bytes.size()) + " bytes, expected " +
                       std::to_string(size_t(height) * width * sizeof(float)));
  geom::Plane p(height, width);
  for (size_t i = 0; i < p.values.size(); ++i) {
    float f;
    std::memcpy(&f, bytes.data() + i * sizeof(float), sizeof(float));
    p.values[i] = f;
  }
  return p;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in.read(buf.data(), std::streamsize(buf.size())) || in.gcount() > 0)
    EVP_DigestUpdate(ctx.get(), buf.data(), size_t(in.gcount()));
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

namespace {

json point_json(geom::Point p) { return json::array({p.x, p.y}); }

json box_json(const geom::Box& b) {
  return {{"x0", b.top_left.x}, {"y0", b.top_left.y}, {"x1", b.bottom_right.x}, {"y1", b.bottom_right.y}};
}

json error_body(const std::string& kind, const std::string& message) {
  return {{"error", kind}, {"message", message}};
}

HttpReply reply(int status, const json& body) { return {status, body.dump(), "application/json"}; }

geom::Point click_from_json(const json& j) {
  if (j.is_array() && j.size() == 2 && j[0].is_number() && j[1].is_number()) return {j[0].get<double>(), j[1].get<double>()};
  if (j.is_object() && j.contains("x") && j.contains("y") && j["x"].is_number() && j["y"].is_number())
    return {j["x"].get<double>(), j["y"].get<double>()};
  throw RequestError("click must be [x, y] or {\"x\": .., \"y\": ..}");
}

}  // namespace

json measurement_json(const geom::RecistMeasurement& m) {
  const auto& e = m.endpoints;
  return {{"source", geom::to_string(m.source)},
          {"long_axis", json::array({point_json(e.long_a), point_json(e.long_b)})},
          {"short_axis", json::array({point_json(e.short_a), point_json(e.short_b)})},
          {"long_px", m.long_px},
          {"short_px", m.short_px},
          {"long_mm", m.long_mm},
          {"short_mm", m.short_mm},
          {"degenerate", m.degenerate}};
}

json report_json(const pipeline::MeasurementReport& r) {
  json contour = json::array();
  for (const auto& p : geom::trace_contour(r.seg_mask)) contour.push_back(point_json(p));
  return {{"box", box_json(r.box)},
          {"loi", box_json(r.loi)},
          {"contour", contour},
          {"measurements",
           {{"segmentation", measurement_json(r.segmentation)},
            {"heatmap", measurement_json(r.heatmap)},
            {"regression", measurement_json(r.regression)},
            {"fused", measurement_json(r.fused)}}},
          {"fusion",
           {{"long_candidate", geom::to_string(r.fusion.long_candidate)},
            {"short_candidate", geom::to_string(r.fusion.short_candidate)},
            {"fallback", r.fusion.fallback}}},
          {"spacing_mm_per_px", r.fused.spacing_mm_per_px},
          {"flags", r.flags}};
}

double long_mm_from_json(const json& j, const char* field) {
  if (j.is_number()) return j.get<double>();
  if (j.is_object() && j.contains("long_mm") && j["long_mm"].is_number()) return j["long_mm"].get<double>();
  if (j.is_object() && j.contains("measurements")) {
    const json& f = j["measurements"].value("fused", json());
    if (f.is_object() && f.contains("long_mm") && f["long_mm"].is_number()) return f["long_mm"].get<double>();
  }
  throw RequestError(std::string(field) + " must be a length in mm, {\"long_mm\": ..} or a measure response");
}

MeasurementService::MeasurementService(const ServiceOptions& options) {
  const auto s1 = model::read_checkpoint(options.step1);
  const auto s2 = model::read_checkpoint(options.step2);
  measurer_ = std::make_unique<pipeline::Measurer>(s1, s2);
  checkpoints_ = {{"step1", {{"path", options.step1.string()}, {"sha256", sha256_file(options.step1)}}},
                  {"step2", {{"path", options.step2.string()}, {"sha256", sha256_file(options.step2)}}}};
  for (const auto& [name, path] : options.demo_datasets) demos_[name] = data::read_dataset(path);
}

HttpReply MeasurementService::measure(const std::string& body) const {
  try {
    const json req = json::parse(body);
    if (!req.is_object()) throw RequestError("request must be a JSON object");
    geom::Plane image;
    double spacing = 0.0;
    if (req.contains("image")) {
      const json& im = req["image"];
      if (!im.is_object() || !im.contains("data") || !im["data"].is_string())
        throw RequestError("image must be {\"height\", \"width\", \"data\": base64 f32}");
      image = decode_plane(im["data"].get<std::string>(), im.value("height", 0), im.value("width", 0));
    } else if (req.contains("dataset")) {
      const auto it = demos_.find(req["dataset"].get<std::string>());
      if (it == demos_.end()) throw RequestError("unknown dataset '" + req["dataset"].get<std::string>() + "'");
      const auto index = req.value("index", int64_t{-1});
      if (index < 0 || size_t(index) >= it->second.size()) throw RequestError("dataset index out of range");
      image = it->second[size_t(index)].image;
      spacing = it->second[size_t(index)].spacing_mm_per_px;
    } else {
      throw RequestError("request needs \"image\" or \"dataset\"");
    }
    if (!req.contains("click")) throw RequestError("request needs \"click\"");
    const geom::Point click = click_from_json(req["click"]);
    if (req.contains("spacing_mm_per_px")) {
      if (!req["spacing_mm_per_px"].is_number()) throw RequestError("spacing_mm_per_px must be a number");
      spacing = req["spacing_mm_per_px"].get<double>();
    }
    if (spacing == 0.0) throw RequestError("request needs \"spacing_mm_per_px\"");
    const auto report = measurer_->measure(image, click, spacing);
    return reply(200, report_json(report));
  } catch (const json::exception& e) {
    return reply(400, error_body("bad_request", e.what()));
  } catch (const RequestError& e) {
    return reply(400, error_body("bad_request", e.what()));
  } catch (const pipeline::MeasurementError& e) {
    if (e.kind() == pipeline::MeasurementError::Kind::DegenerateBox)
      return reply(422, error_body("degenerate_box", e.what()));
    return reply(400, error_body("bad_request", e.what()));
  } catch (const std::exception& e) {
    return reply(500, error_body("internal", e.what()));
  }
}

HttpReply MeasurementService::assess(const std::string& body) const {
  try {
    const json req = json::parse(body);
    if (!req.is_object() || !req.contains("baseline") || !req.contains("followup"))
      throw RequestError("request needs \"baseline\" and \"followup\"");
    const double b = long_mm_from_json(req["baseline"], "baseline");
    const double f = long_mm_from_json(req["followup"], "followup");
    const auto c = pipeline::classify_response(b, f);
    return reply(200, {{"class", pipeline::to_string(c)},
                       {"code", pipeline::short_name(c)},
                       {"baseline_long_mm", b},
                       {"followup_long_mm", f},
                       {"change_percent", 100.0 * (f - b) / b}});
  } catch (const json::exception& e) {
    return reply(400, error_body("bad_request", e.what()));
  } catch (const RequestError& e) {
    return reply(400, error_body("bad_request", e.what()));
  } catch (const std::invalid_argument& e) {
    return reply(400, error_body("bad_request", e.what()));
  } catch (const std::exception& e) {
    return reply(500, error_body("internal", e.what()));
  }
}

HttpReply MeasurementService::health() const { return reply(200, {{"status", "ok"}, {"checkpoints", checkpoints_}}); }

HttpReply MeasurementService::demo_index() const {
  json list = json::array();
  for (const auto& [name, cases] : demos_) list.push_back({{"name", name}, {"cases", cases.size()}});
  return reply(200, {{"datasets", list}});
}

HttpReply MeasurementService::demo_case(const std::string& name, size_t index) const {
  const auto it = demos_.find(name);
  if (it == demos_.end() || index >= it->second.size()) return reply(404, error_body("not_found", "no such demo case"));
  const auto& p = it->second[index];
  return reply(200, {{"name", name},
                     {"index", index},
                     {"height", p.height()},
                     {"width", p.width()},
                     {"spacing_mm_per_px", p.spacing_mm_per_px},
                     {"image", encode_plane(p.image)},
                     {"suggested_click", point_json(data::sample_click(p.mask, index))}});
}

std::unique_ptr<httplib::Server> make_server(const MeasurementService& service, const std::filesystem::path& static_dir) {
  auto srv = std::make_unique<httplib::Server>();
  auto send = [](httplib::Response& res, const HttpReply& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  srv->Post("/measure", [&service, send](const httplib::Request& req, httplib::Response& res) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = service.measure(req.body);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    res.set_header("X-Latency-Ms", std::to_string(ms));
    send(res, r);
  });
  srv->Post("/assess", [&service, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.assess(req.body));
  });
  srv->Get("/health", [&service, send](const httplib::Request&, httplib::Response& res) { send(res, service.health()); });
  srv->Get("/demo", [&service, send](const httplib::Request&, httplib::Response& res) {
    send(res, service.demo_index());
  });
  srv->Get(R"(/demo/([A-Za-z0-9_.-]+)/(\d+))", [&service, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.demo_case(req.matches[1], std::stoul(req.matches[2])));
  });
  if (!static_dir.empty() && !srv->set_mount_point("/", static_dir.string()))
    throw std::runtime_error("static directory not found: " + static_dir.string());
  srv->set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "unknown error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    res.status = 500;
    res.set_content(error_body("internal", what).dump(), "application/json");
  });
  return srv;
}

}  // namespace meaformer::service

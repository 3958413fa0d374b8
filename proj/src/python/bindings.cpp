#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "meaformer/data/dataset.hpp"
#include "meaformer/geometry/recist.hpp"
#include "meaformer/geometry/transform.hpp"
#include "meaformer/pipeline/evaluate.hpp"
#include "meaformer/pipeline/response.hpp"
#include "meaformer/pipeline/train.hpp"
#include "meaformer/service/service.hpp"

namespace py = pybind11;
using namespace meaformer;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<uint8_t, py::array::c_style | py::array::forcecast>;

geom::Plane to_plane(const F64Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("image must be a 2D array");
  geom::Plane p(int(a.shape(0)), int(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), p.values.begin());
  return p;
}

geom::Mask to_mask(const U8Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("mask must be a 2D array");
  geom::Mask m(int(a.shape(0)), int(a.shape(1)));
  for (py::ssize_t i = 0; i < a.size(); ++i) m.values[size_t(i)] = a.data()[i] ? 1 : 0;
  return m;
}

py::array_t<double> from_plane(const geom::Plane& p) {
  py::array_t<double> a({p.height, p.width});
  std::copy(p.values.begin(), p.values.end(), a.mutable_data());
  return a;
}

py::array_t<uint8_t> from_mask(const geom::Mask& m) {
  py::array_t<uint8_t> a({m.height, m.width});
  std::copy(m.values.begin(), m.values.end(), a.mutable_data());
  return a;
}

// JSON goes through Python's json module so results are plain dicts/lists.
py::object to_python(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

py::dict phantom_dict(const data::Phantom& p) {
  py::dict d;
  d["image"] = from_plane(p.image);
  d["mask"] = from_mask(p.mask);
  d["recist"] = to_python(service::measurement_json(
      geom::RecistMeasurement::from_endpoints(p.recist, geom::MeasurementSource::Segmentation, p.spacing_mm_per_px)));
  d["box"] = py::make_tuple(p.box.top_left.x, p.box.top_left.y, p.box.bottom_right.x, p.box.bottom_right.y);
  d["spacing_mm_per_px"] = p.spacing_mm_per_px;
  d["seed"] = p.seed;
  return d;
}

std::vector<data::Phantom> read_all(const std::filesystem::path& path) { return data::read_dataset(path); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "MeaFormer lesion measurement core";

  py::register_exception<data::DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<data::DatasetError>(m, "DatasetError", PyExc_IOError);
  py::register_exception<model::CheckpointError>(m, "CheckpointError", PyExc_IOError);
  py::register_exception<pipeline::MeasurementError>(m, "MeasurementError", PyExc_ValueError);
  py::register_exception<pipeline::TrainingDiverged>(m, "TrainingDiverged", PyExc_RuntimeError);
  py::register_exception<geom::GeometryError>(m, "GeometryError", PyExc_ValueError);

  m.def(
      "generate_phantom", [](uint64_t seed, int size) {
        data::PhantomConfig cfg;
        cfg.height = cfg.width = size;
        return phantom_dict(data::generate_phantom(seed, cfg));
      },
      py::arg("seed"), py::arg("size") = 64, "One synthetic lesion phantom as a dict of arrays and geometry.");

  m.def(
      "generate_dataset",
      [](const std::filesystem::path& out, size_t count, uint64_t seed, int size) {
        data::PhantomConfig cfg;
        cfg.height = cfg.width = size;
        py::gil_scoped_release release;
        data::write_dataset(data::generate_dataset(count, seed, cfg), out);
      },
      py::arg("out"), py::arg("count"), py::arg("seed") = 0, py::arg("size") = 64, "Write a .mead phantom dataset.");

  m.def(
      "read_dataset",
      [](const std::filesystem::path& path) {
        py::list out;
        for (const auto& p : read_all(path)) out.append(phantom_dict(p));
        return out;
      },
      py::arg("path"));

  m.def(
      "recist_from_mask",
      [](const U8Array& mask, double spacing) {
        const auto e = geom::recist_from_mask(to_mask(mask));
        return to_python(service::measurement_json(
            geom::RecistMeasurement::from_endpoints(e, geom::MeasurementSource::Segmentation, spacing)));
      },
      py::arg("mask"), py::arg("spacing_mm_per_px") = 1.0, "Long and short axes of the largest component.");

  m.def(
      "loi_from_box",
      [](std::tuple<double, double, double, double> b, int height, int width) {
        const auto [x0, y0, x1, y1] = b;
        const auto l = geom::loi_from_box({{x0, y0}, {x1, y1}}, height, width);
        return py::make_tuple(l.top_left.x, l.top_left.y, l.bottom_right.x, l.bottom_right.y);
      },
      py::arg("box"), py::arg("height"), py::arg("width"));

  m.def(
      "classify_response",
      [](double baseline, double followup) { return pipeline::short_name(pipeline::classify_response(baseline, followup)); },
      py::arg("baseline_long_mm"), py::arg("followup_long_mm"), "RECIST 1.1 class code: CR, PR, PD or SD.");

  m.def(
      "train",
      [](const std::filesystem::path& data, const std::filesystem::path& out, const std::string& variant,
         int64_t steps, uint64_t seed, int batch, int size, int channels, bool consistency, bool augment) {
        const auto v = pipeline::variant_from_string(variant);
        auto cfg = pipeline::TrainConfig::desk(v, steps);
        cfg.model = v == pipeline::Variant::Step1 ? model::ModelConfig::step1(size, channels)
                                                  : model::ModelConfig::step2(size, channels);
        cfg.seed = seed;
        cfg.batch_size = batch;
        cfg.consistency = consistency;
        cfg.augment = augment;
        pipeline::TrainResult r;
        {
          py::gil_scoped_release release;
          r = pipeline::train(data::read_dataset(data), {}, cfg);
          model::write_checkpoint(r.checkpoint, out);
        }
        py::list log;
        for (const auto& line : r.log) log.append(to_python(nlohmann::json::parse(line)));
        return log;
      },
      py::arg("data"), py::arg("out"), py::arg("variant") = "step2", py::arg("steps") = 2000, py::arg("seed") = 0,
      py::arg("batch") = 8, py::arg("size") = 64, py::arg("channels") = 16, py::arg("consistency") = true,
      py::arg("augment") = true, "Train a model on a .mead dataset; returns the metrics log records.");

  py::class_<pipeline::Measurer>(m, "Measurer", "Two-step click-to-measurement pipeline over two checkpoints.")
      .def(py::init([](const std::filesystem::path& step1, const std::filesystem::path& step2) {
             return std::make_unique<pipeline::Measurer>(model::read_checkpoint(step1), model::read_checkpoint(step2));
           }),
           py::arg("step1"), py::arg("step2"))
      .def(
          "measure",
          [](const pipeline::Measurer& self, const F64Array& image, std::pair<double, double> click, double spacing) {
            const auto plane = to_plane(image);
            pipeline::MeasurementReport r;
            {
              py::gil_scoped_release release;
              r = self.measure(plane, {click.first, click.second}, spacing);
            }
            py::dict d = to_python(service::report_json(r));
            d["seg_mask"] = from_mask(r.seg_mask);
            return d;
          },
          py::arg("image"), py::arg("click"), py::arg("spacing_mm_per_px"))
      .def(
          "evaluate",
          [](const pipeline::Measurer& self, const std::filesystem::path& data, uint64_t seed) {
            pipeline::Summary s;
            {
              py::gil_scoped_release release;
              s = pipeline::evaluate(data::read_dataset(data), pipeline::two_step(self), seed);
            }
            py::list rows;
            std::istringstream in(pipeline::summary_rows(s));
            for (std::string line; std::getline(in, line);) rows.append(to_python(nlohmann::json::parse(line)));
            return rows;
          },
          py::arg("data"), py::arg("seed") = 0, "Summary row followed by one row per case.");
}

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <filesystem>
#include <string>
#include <vector>

#include "nightiq/checkpoint.hpp"
#include "nightiq/decomposition.hpp"
#include "nightiq/eai.hpp"
#include "nightiq/evaluation.hpp"
#include "nightiq/image.hpp"
#include "nightiq/synthetic.hpp"
#include "nightiq/training.hpp"

namespace py = pybind11;
using namespace nightiq;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// (H, W, C) array <-> channel-first image.
ImageTensor to_image(const Array& a) {
  if (a.ndim() != 3) throw std::invalid_argument("expected an (H, W, C) array");
  const int h = static_cast<int>(a.shape(0));
  const int w = static_cast<int>(a.shape(1));
  const int c = static_cast<int>(a.shape(2));
  Tensor t(Shape{1, c, h, w});
  auto v = a.unchecked<3>();
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) t.at(0, ch, y, x) = v(y, x, ch);
  return ImageTensor::from_tensor(std::move(t));
}

Array to_array(const ImageTensor& img) {
  Array out({img.height(), img.width(), img.channels()});
  auto v = out.mutable_unchecked<3>();
  for (int ch = 0; ch < img.channels(); ++ch)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) v(y, x, ch) = img.at(ch, y, x);
  return out;
}

py::dict report_dict(const CriteriaReport& r) {
  py::dict d;
  d["srcc"] = r.srcc;
  d["krcc"] = r.krcc;
  d["plcc"] = r.plcc;
  d["rmse"] = r.rmse;
  d["n"] = r.n;
  return d;
}

TrainConfig make_config(const py::dict& overrides) {
  TrainConfig config;
  for (const auto& [k, v] : overrides) {
    config.set(py::str(k), py::str(v));
  }
  config.validate();
  return config;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "nightiq native bindings";

  py::register_exception<ImageError>(m, "ImageError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<MetricError>(m, "MetricError", PyExc_ValueError);

  // ---- images ----
  m.def(
      "load_image",
      [](const std::filesystem::path& path, std::optional<std::pair<int, int>> size) {
        return to_array(size ? load_image(path, ImageSize{size->first, size->second})
                             : load_image(path));
      },
      py::arg("path"), py::arg("size") = py::none(),
      "Decode an 8-bit image into an (H, W, 3) float array in [0, 1]; size is (height, width).");
  m.def(
      "save_image",
      [](const std::filesystem::path& path, const Array& image) { save_image(path, to_image(image)); },
      py::arg("path"), py::arg("image"));

  // ---- exposure-adjusted images ----
  py::class_<CameraResponseParams>(m, "CameraResponseParams")
      .def(py::init<>())
      .def_readwrite("alpha", &CameraResponseParams::alpha)
      .def_readwrite("beta", &CameraResponseParams::beta)
      .def_readwrite("base_ratio", &CameraResponseParams::base_ratio)
      .def_readwrite("ladder_size", &CameraResponseParams::ladder_size);

  m.def(
      "camera_response",
      [](double pixel, double ratio, const CameraResponseParams& p) {
        return camera_response(pixel, ratio, p);
      },
      py::arg("pixel"), py::arg("ratio"), py::arg("params") = CameraResponseParams{});
  m.def(
      "make_eai",
      [](const Array& night, const CameraResponseParams& p) {
        return to_array(make_eai(to_image(night), p));
      },
      py::arg("night"), py::arg("params") = CameraResponseParams{});

  m.def("penalty_curve", &penalty_curve, py::arg("m"), py::arg("c") = 0.1);

  // ---- metrics ----
  m.def(
      "srcc", [](std::vector<double> p, std::vector<double> q) { return srcc(p, q); },
      py::arg("pred"), py::arg("mos"));
  m.def(
      "krcc", [](std::vector<double> p, std::vector<double> q) { return krcc(p, q); },
      py::arg("pred"), py::arg("mos"));
  m.def(
      "plcc_rmse",
      [](std::vector<double> p, std::vector<double> q) {
        const LogisticFit f = plcc_rmse(p, q);
        py::dict d;
        d["plcc"] = f.plcc;
        d["rmse"] = f.rmse;
        d["params"] = std::vector<double>(f.params.begin(), f.params.end());
        d["linear_fallback"] = f.linear_fallback;
        return d;
      },
      py::arg("pred"), py::arg("mos"));
  m.def(
      "evaluate_criteria",
      [](std::vector<double> p, std::vector<double> q) { return report_dict(evaluate_criteria(p, q)); },
      py::arg("pred"), py::arg("mos"));
  m.def(
      "rank_n_accuracy",
      [](const std::vector<std::pair<std::vector<double>, std::vector<double>>>& groups, int n) {
        std::vector<RankGroup> g;
        for (const auto& [pred, mos] : groups) g.push_back({pred, mos});
        return rank_n_accuracy(g, n);
      },
      py::arg("groups"), py::arg("n"), "groups: list of (predicted, mos) pairs.");
  m.def(
      "significance_ttest",
      [](std::vector<double> a, std::vector<double> b, double alpha) {
        const TTestResult r = significance_ttest(a, b, alpha);
        py::dict d;
        d["statistic"] = r.statistic;
        d["p_value"] = r.p_value;
        d["dof"] = r.dof;
        d["decision"] = to_string(r.decision);
        return d;
      },
      py::arg("a"), py::arg("b"), py::arg("alpha") = 0.05);

  // ---- data, training, inference ----
  m.def(
      "write_synthetic_corpus",
      [](const std::filesystem::path& dir, int count, int size, std::uint64_t seed) {
        SyntheticCorpusOptions o;
        o.count = count;
        o.size = ImageSize{size, size};
        o.seed = seed;
        const DatasetManifest man = write_synthetic_corpus(dir, o);
        for (const auto& r : man.records) {
          save_image(eai_cache_path(r.image_path), make_eai(load_image(r.image_path), {}));
        }
        return dir / "manifest.csv";
      },
      py::arg("dir"), py::arg("count") = 16, py::arg("size") = 64, py::arg("seed") = 0,
      "Write a synthetic corpus with cached EAIs; returns the manifest path.");

  m.def(
      "train",
      [](const std::filesystem::path& manifest, const std::filesystem::path& checkpoint,
         const py::dict& config) {
        const TrainConfig cfg = make_config(config);
        const DatasetManifest man = load_manifest(manifest);
        TrainResult res;
        {
          py::gil_scoped_release release;
          res = train(man.records, cfg);
        }
        save_checkpoint(res.checkpoint, checkpoint);
        py::list log;
        for (const auto& e : res.log) {
          py::dict d;
          d["epoch"] = e.epoch;
          d["idm"] = e.idm;
          d["feat"] = e.feat;
          d["quality"] = e.quality;
          d["total"] = e.total;
          log.append(d);
        }
        return log;
      },
      py::arg("manifest"), py::arg("checkpoint"), py::arg("config") = py::dict(),
      "Train on every manifest record and save the best epoch; returns the per-epoch log.");

  py::class_<Predictor>(m, "Predictor")
      .def(py::init([](const std::filesystem::path& path) {
             return std::make_unique<Predictor>(load_checkpoint(path));
           }),
           py::arg("checkpoint"))
      .def(
          "predict",
          [](const Predictor& p, const std::filesystem::path& image) { return p.predict(image); },
          py::arg("image_path"))
      .def(
          "predict_array", [](const Predictor& p, const Array& a) { return p.predict(to_image(a)); },
          py::arg("image"))
      .def(
          "decompose",
          [](const Predictor& p, const Array& a) {
            const DecompositionOutput d = p.decompose(p.prepare(to_image(a)));
            return py::make_tuple(to_array(d.reflectance), to_array(d.illumination));
          },
          py::arg("image"), "Returns (reflectance, illumination) at the model's input size.");

  m.def(
      "gradcheck",
      [](const std::string& component, std::uint64_t seed) {
        GradcheckReport r;
        {
          py::gil_scoped_release release;
          r = gradcheck(component, seed);
        }
        py::dict d;
        d["component"] = r.component;
        d["max_relative_error"] = r.max_relative_error;
        d["coordinates_checked"] = r.coordinates_checked;
        d["coordinates_skipped"] = r.coordinates_skipped;
        d["worst_parameter"] = r.worst_parameter;
        return d;
      },
      py::arg("component"), py::arg("seed") = 0);
}

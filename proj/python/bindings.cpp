// Copyright (c) 2026 The sa2net Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#include <torch/extension.h>

#include <pybind11/functional.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "sa2net/data.hpp"
#include "sa2net/error.hpp"
#include "sa2net/gradcheck.hpp"
#include "sa2net/inference.hpp"
#include "sa2net/losses.hpp"
#include "sa2net/metrics.hpp"
#include "sa2net/model.hpp"
#include "sa2net/training.hpp"

namespace py = pybind11;
using namespace sa2net;

namespace {

py::object json_to_py(const std::string& text) { return py::module_::import("json").attr("loads")(text); }

std::string py_to_json(const py::object& obj) {
  return py::module_::import("json").attr("dumps")(obj).cast<std::string>();
}

TrainConfig config_from(const py::object& obj) {
  if (obj.is_none()) return TrainConfig::desk();
  if (py::isinstance<TrainConfig>(obj)) return obj.cast<TrainConfig>();
  if (py::isinstance<py::str>(obj)) return TrainConfig::from_json(nlohmann::json::parse(obj.cast<std::string>()));
  return TrainConfig::from_json(nlohmann::json::parse(py_to_json(obj)));
}

py::dict sample_to_dict(const Sample& s) {
  py::dict d;
  d["image"] = s.image;
  d["mask"] = s.mask;
  d["subject_id"] = s.subject_id;
  d["index"] = s.index;
  return d;
}

Sample sample_from_dict(const py::dict& d) {
  Sample s;
  s.image = d["image"].cast<torch::Tensor>();
  s.mask = d["mask"].cast<torch::Tensor>();
  s.subject_id = d["subject_id"].cast<std::string>();
  if (d.contains("index")) s.index = d["index"].cast<int64_t>();
  return s;
}

// Thin holder so Python sees one model type regardless of construction.
struct PyModel {
  SA2Net net{nullptr};
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "sa2net core bindings";

  static py::exception<Error> error(m, "Error", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, (std::string(to_string(e.kind())) + ": " + e.what()).c_str());
    }
  });

  py::list names;
  for (int64_t c = 0; c < kNumClasses; ++c) names.append(std::string(class_name(c)));
  m.attr("CLASS_NAMES") = names;

  py::enum_<Averaging>(m, "Averaging").value("MICRO", Averaging::kMicro).value("MACRO", Averaging::kMacro);

  py::class_<TTAConfig>(m, "TTAConfig")
      .def(py::init<>())
      .def_readwrite("scales", &TTAConfig::scales)
      .def_readwrite("flip", &TTAConfig::flip)
      .def_readwrite("tile", &TTAConfig::tile)
      .def_readwrite("tile_overlap", &TTAConfig::tile_overlap)
      .def("validate", &TTAConfig::validate);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init(&TrainConfig::desk))
      .def_static("desk", &TrainConfig::desk)
      .def_static("full_scale", &TrainConfig::full_scale)
      .def_static("from_json",
                  [](const py::object& obj) { return config_from(obj); }, py::arg("config"),
                  "Builds a config from a dict or JSON string over the desk defaults.")
      .def_static("from_file", [](const std::filesystem::path& p) { return TrainConfig::from_file(p); })
      .def("to_json", [](const TrainConfig& c) { return json_to_py(c.to_json().dump()); })
      .def("validate", &TrainConfig::validate)
      .def_readwrite("iterations", &TrainConfig::iterations)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("crop", &TrainConfig::crop)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("tta", &TrainConfig::tta);

  py::class_<PyModel>(m, "Model")
      .def(py::init([](const py::object& config) {
             auto cfg = config_from(config);
             return PyModel{SA2Net(cfg.model)};
           }),
           py::arg("config") = py::none())
      .def(
          "forward",
          [](PyModel& self, const torch::Tensor& image) {
            auto out = self.net->forward(image);
            return py::make_tuple(out.sam.defined() ? py::cast(out.sam) : py::none(), out.attention);
          },
          py::arg("image"), "Returns (structure-aware map or None, attention map) logits.")
      .def("predict_logits", [](PyModel& self, const torch::Tensor& image) { return self.net->predict_logits(image); })
      .def("train", [](PyModel& self, bool on) { self.net->train(on); }, py::arg("on") = true)
      .def("eval", [](PyModel& self) { self.net->eval(); })
      .def("parameters", [](PyModel& self) { return self.net->parameters(); })
      .def("num_parameters", [](PyModel& self) {
        int64_t n = 0;
        for (const auto& p : self.net->parameters()) n += p.numel();
        return n;
      });

  m.def("load_checkpoint", [](const std::filesystem::path& path) {
    auto ck = load_checkpoint(path);
    py::dict d;
    d["format_version"] = ck.format_version;
    d["iteration"] = ck.iteration;
    d["config"] = ck.config;
    d["model"] = PyModel{ck.model};
    d["loss_trace"] = ck.loss_trace;
    return d;
  });

  m.def("train",
        [](const py::object& config, const std::filesystem::path& out_dir, const std::string& resume, bool verbose) {
          auto cfg = config_from(config);
          py::gil_scoped_release release;
          auto trainer = run_training(cfg, out_dir, verbose ? &std::cout : nullptr, resume);
          return trainer->loss_trace();
        },
        py::arg("config") = py::none(), py::arg("out_dir"), py::arg("resume") = "",
        py::arg("verbose") = false, "Trains and writes checkpoint.pt into out_dir; returns the loss trace.");

  m.def(
      "tta_predict",
      [](PyModel& model, const torch::Tensor& image, const TTAConfig& cfg) { return tta_predict(model.net, image, cfg); },
      py::arg("model"), py::arg("image"), py::arg("tta") = TTAConfig{},
      "Log of the mean class probabilities over scales and flips, (B, 4, H, W).");
  m.def(
      "predict_image",
      [](PyModel& model, const torch::Tensor& image, const TTAConfig& cfg) {
        return predict_image(model_logits(model.net), image, cfg);
      },
      py::arg("model"), py::arg("image"), py::arg("tta") = TTAConfig{}, "Label map for one (H, W) image in [0, 1].");

  m.def("dice_score", &dice_score, py::arg("truth"), py::arg("predicted"), py::arg("cls"));
  m.def("iou_score", &iou_score, py::arg("truth"), py::arg("predicted"), py::arg("cls"));
  m.def("pixel_accuracy", &pixel_accuracy, py::arg("truth"), py::arg("predicted"), py::arg("cls"));
  m.def(
      "evaluate",
      [](const torch::Tensor& truth, const torch::Tensor& predicted, Averaging averaging) {
        return json_to_py(evaluate(truth, predicted, averaging).to_json());
      },
      py::arg("truth"), py::arg("predicted"), py::arg("averaging") = Averaging::kMicro);

  m.def("cross_entropy", &cross_entropy, py::arg("logits"), py::arg("target"), py::arg("ignore_index") = -1);
  m.def(
      "mixing_loss",
      [](const torch::Tensor& p1, const torch::Tensor& p2, const torch::Tensor& target, double alpha, double beta,
         double gamma) { return mixing_loss(p1, p2, target, LossWeights{alpha, beta, gamma}); },
      py::arg("p1"), py::arg("p2"), py::arg("target"), py::arg("alpha") = 1.0, py::arg("beta") = 0.4,
      py::arg("gamma") = 0.5);

  m.def(
      "generate_phantom",
      [](uint64_t seed, int64_t height, int64_t width) { return sample_to_dict(generate_phantom(seed, height, width)); },
      py::arg("seed"), py::arg("height") = 256, py::arg("width") = 128);
  m.def(
      "vpi_project", [](const torch::Tensor& voxels, int64_t d0, int64_t d1) { return vpi_project(Volume3D{voxels}, d0, d1); },
      py::arg("voxels"), py::arg("d0"), py::arg("d1"));
  m.def("make_folds",
        [](const std::vector<std::string>& ids, uint64_t seed, int64_t k) { return make_folds(ids, seed, k).folds; },
        py::arg("subject_ids"), py::arg("seed") = 0, py::arg("num_folds") = 3);
  m.def("load_dataset", [](const std::filesystem::path& root) {
    py::list out;
    for (const auto& s : load_dataset(root)) out.append(sample_to_dict(s));
    return out;
  });
  m.def("write_dataset", [](const std::filesystem::path& root, const py::list& samples) {
    std::vector<Sample> v;
    for (const auto& item : samples) v.push_back(sample_from_dict(item.cast<py::dict>()));
    write_dataset(root, v);
  });

  m.def(
      "gradcheck",
      [](const std::string& component, uint64_t seed) {
        const auto which = parse_gradcheck_component(component);
        GradcheckReport r;
        {
          py::gil_scoped_release release;
          r = gradcheck(which, seed);
        }
        py::dict d;
        d["component"] = r.component;
        d["max_rel_error"] = r.max_rel_error;
        d["max_abs_error"] = r.max_abs_error;
        d["worst_tensor"] = r.worst_tensor;
        d["entries"] = r.entries;
        d["seconds"] = r.seconds;
        d["passed"] = r.passed;
        return d;
      },
      py::arg("component"), py::arg("seed") = 0);
}

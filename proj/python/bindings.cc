/* Copyright (c) 2026 The mitodet Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "mitodet/augment.h"
#include "mitodet/checkpoint.h"
#include "mitodet/config.h"
#include "mitodet/data.h"
#include "mitodet/eval.h"
#include "mitodet/geometry.h"
#include "mitodet/losses.h"
#include "mitodet/train.h"

namespace py = pybind11;
using namespace mitodet;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Image to_image(const FloatArray& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) {
    throw std::invalid_argument("expected an (H, W, 3) array");
  }
  Image img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::memcpy(img.pixels.data(), a.data(), img.pixels.size() * sizeof(float));
  return img;
}

FloatArray to_array(const Image& img) {
  FloatArray a({img.height, img.width, 3});
  std::memcpy(a.mutable_data(), img.pixels.data(), img.pixels.size() * sizeof(float));
  return a;
}

py::dict report_dict(const EvalReport& r) {
  py::dict d;
  d["name"] = r.name;
  d["foreground_head"] = r.foreground_head;
  d["tumor_head"] = r.tumor_head;
  d["augmentation"] = r.augmentation;
  d["ap"] = r.ap;
  d["map"] = r.map;
  d["precision"] = r.precision;
  d["recall"] = r.recall;
  d["f1"] = r.f1;
  d["score_threshold"] = r.score_threshold;
  d["n_images"] = r.n_images;
  d["n_gt"] = r.n_gt;
  d["map_per_seed"] = r.map_per_seed;
  d["map_sd"] = r.map_sd;
  d["failed"] = r.failed;
  d["failure"] = r.failure;
  return d;
}

RunConfig config_from(const py::dict& overrides) {
  RunConfig c;
  for (const auto& [k, v] : overrides) {
    set_config_value(c, py::str(k), py::str(v));
  }
  c.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-task mitosis detector";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DatasetError>(m, "DatasetError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_IOError);

  py::class_<Box>(m, "Box")
      .def(py::init<>())
      .def(py::init([](double x1, double y1, double x2, double y2) { return Box{x1, y1, x2, y2}; }),
           py::arg("x1"), py::arg("y1"), py::arg("x2"), py::arg("y2"))
      .def_readwrite("x1", &Box::x1)
      .def_readwrite("y1", &Box::y1)
      .def_readwrite("x2", &Box::x2)
      .def_readwrite("y2", &Box::y2)
      .def("area", &Box::area)
      .def("valid", &Box::valid)
      .def("__eq__", [](const Box& a, const Box& b) { return a == b; })
      .def("__repr__", [](const Box& b) {
        return "Box(" + std::to_string(b.x1) + ", " + std::to_string(b.y1) + ", " +
               std::to_string(b.x2) + ", " + std::to_string(b.y2) + ")";
      });

  py::class_<BoxDelta>(m, "BoxDelta")
      .def(py::init<>())
      .def_readwrite("dx", &BoxDelta::dx)
      .def_readwrite("dy", &BoxDelta::dy)
      .def_readwrite("dw", &BoxDelta::dw)
      .def_readwrite("dh", &BoxDelta::dh);

  m.def("iou", &iou, py::arg("a"), py::arg("b"));
  m.def("encode", &encode, py::arg("gt"), py::arg("anchor"));
  m.def("decode", &decode, py::arg("delta"), py::arg("anchor"));
  m.def(
      "nms",
      [](const std::vector<Box>& boxes, const std::vector<double>& scores, double threshold) {
        if (boxes.size() != scores.size()) {
          throw std::invalid_argument("boxes and scores differ in length");
        }
        std::vector<ScoredBox> sb(boxes.size());
        for (std::size_t i = 0; i < boxes.size(); ++i) sb[i] = {boxes[i], scores[i]};
        return nms(sb, threshold);
      },
      py::arg("boxes"), py::arg("scores"), py::arg("iou_threshold"));
  m.def(
      "generate_anchors",
      [](int height, int width) {
        return generate_anchors(height, width, AnchorConfig::Default()).flatten();
      },
      py::arg("height"), py::arg("width"), "Default pyramid anchors for an image.");

  m.def("focal_loss", &focal_loss, py::arg("p_c"), py::arg("alpha_c"), py::arg("gamma"));
  m.def(
      "cross_entropy",
      [](const std::vector<double>& probs, int true_class) {
        return cross_entropy(probs, true_class);
      },
      py::arg("probs"), py::arg("true_class"));
  m.def("average_precision", &average_precision, py::arg("true_positive"), py::arg("n_gt"));
  m.def("f1_score", &f1_score, py::arg("precision"), py::arg("recall"));

  m.def(
      "color_jitter",
      [](const FloatArray& image, double brightness, double contrast, double saturation,
         double hue, std::uint64_t seed) {
        AugmentConfig c;
        c.brightness = brightness;
        c.contrast = contrast;
        c.saturation = saturation;
        c.hue = hue;
        auto rng = derive_rng(seed, {});
        return to_array(color_jitter(to_image(image), c, rng));
      },
      py::arg("image"), py::arg("brightness") = 0.4, py::arg("contrast") = 0.4,
      py::arg("saturation") = 0.4, py::arg("hue") = 0.1, py::arg("seed") = 0);

  m.def(
      "default_config", [] { return to_key_values(RunConfig{}); },
      "Every config key with its default value.");
  m.def(
      "parse_config", [](const std::string& text) { return to_key_values(parse_config(text)); },
      py::arg("text"));

  m.def(
      "synth",
      [](const std::filesystem::path& out, int cases, int size, std::uint64_t seed) {
        const Dataset ds = generate_synthetic_dataset(cases, size, default_palettes(), seed);
        py::dict d;
        d["manifest"] = write_dataset(ds, out);
        d["hash"] = dataset_hash(ds.records, ds.images);
        d["cases"] = ds.records.size();
        return d;
      },
      py::arg("out_dir"), py::arg("cases") = 200, py::arg("size") = 128, py::arg("seed") = 0,
      "Writes a synthetic dataset and returns its manifest path and hash.");
  m.def(
      "dataset_hash",
      [](const std::filesystem::path& manifest) {
        const Dataset ds = load_dataset_with_images(manifest);
        return dataset_hash(ds.records, ds.images);
      },
      py::arg("manifest"));

  m.def(
      "train",
      [](const py::dict& overrides, const std::filesystem::path& checkpoint_dir) {
        const RunConfig c = config_from(overrides);
        if (c.manifest.empty()) throw ConfigError("data.manifest is not set");
        const Dataset ds = load_dataset_with_images(c.manifest, c.classes);
        TrainOptions opts;
        opts.checkpoint_dir = checkpoint_dir;
        std::optional<ExperimentResult> r;
        {
          py::gil_scoped_release release;
          r.emplace(run_experiment(c, ds, opts));
        }
        py::dict d = report_dict(r->report);
        d["best_epoch"] = r->training.best_epoch;
        d["best_val_ap"] = r->training.best_val_ap;
        d["diverged"] = r->training.diverged;
        return d;
      },
      py::arg("config"), py::arg("checkpoint_dir") = std::filesystem::path(),
      "Leave-one-tumor-out training and held-out evaluation. `config` maps "
      "config keys to values.");

  m.def(
      "ablate",
      [](const py::dict& overrides) {
        const RunConfig c = config_from(overrides);
        if (c.manifest.empty()) throw ConfigError("data.manifest is not set");
        const Dataset ds = load_dataset_with_images(c.manifest, c.classes);
        std::vector<EvalReport> reports;
        {
          py::gil_scoped_release release;
          reports = run_ablation(ds, c);
        }
        py::list rows;
        for (const auto& r : reports) rows.append(report_dict(r));
        return rows;
      },
      py::arg("config"));

  m.def(
      "predict",
      [](const std::filesystem::path& checkpoint, const FloatArray& image,
         double score_threshold) {
        const Model model = load_checkpoint(checkpoint);
        PredictOptions opts;
        opts.score_threshold = score_threshold;
        py::list out;
        for (const Detection& d : model.predict(to_image(image), opts)) {
          out.append(py::make_tuple(d.box, d.score));
        }
        return out;
      },
      py::arg("checkpoint"), py::arg("image"), py::arg("score_threshold") = 0.05,
      "Detections as (Box, score) pairs for an (H, W, 3) float image in [0, 1].");
}

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <json.hpp>

#include "lht/container.hpp"
#include "lht/diagnostics.hpp"
#include "lht/error.hpp"
#include "lht/image.hpp"
#include "lht/parity.hpp"
#include "lht/pipeline.hpp"
#include "lht/segmentation.hpp"
#include "lht/strategies.hpp"
#include "lht/strategy_config.hpp"
#include "lht/weights.hpp"

namespace py = pybind11;
using namespace lht;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>;

py::array_t<float> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

Tensor to_tensor(const FloatArray& a) {
  std::vector<std::size_t> shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

Tensor to_matrix(const FloatArray& a, const char* what) {
  if (a.ndim() != 2) throw ShapeError(std::string(what) + " must be a 2-D array");
  return to_tensor(a);
}

Image to_image(const FloatArray& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw ShapeError("image must be [H, W, 3]");
  Image img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

py::array_t<float> image_to_numpy(const Image& img) {
  py::array_t<float> out({img.height, img.width, 3});
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

ClassMap to_map(const IntArray& a) {
  if (a.ndim() != 2) throw ShapeError("label map must be a 2-D array");
  ClassMap m;
  m.height = static_cast<int>(a.shape(0));
  m.width = static_cast<int>(a.shape(1));
  m.labels.assign(a.data(), a.data() + a.size());
  return m;
}

py::array_t<std::int32_t> map_to_numpy(const ClassMap& m) {
  py::array_t<std::int32_t> out({m.height, m.width});
  std::copy(m.labels.begin(), m.labels.end(), out.mutable_data());
  return out;
}

TokenSequence to_sequence(const FloatArray& tokens, int grid_h, int grid_w, int layer = 0) {
  TokenSequence x{to_matrix(tokens, "tokens"), grid_h, grid_w, layer};
  x.check();
  return x;
}

nlohmann::json to_json_value(const py::handle& obj) {
  const auto dumps = py::module_::import("json").attr("dumps");
  return nlohmann::json::parse(dumps(obj).cast<std::string>());
}

py::object from_json_value(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

/// None → plain CLIP; str → preset name; dict → JSON config.
StrategyConfig to_strategy(const py::object& obj) {
  if (obj.is_none()) return StrategyConfig::plain();
  if (py::isinstance<py::str>(obj)) {
    const auto name = obj.cast<std::string>();
    if (name == "plain") return StrategyConfig::plain();
    return StrategyConfig::preset(parse_profile(name));
  }
  return strategy_from_json(to_json_value(obj));
}

py::dict metrics_dict(const EvalMetrics& e) {
  py::dict d;
  d["intersection"] = e.intersection;
  d["union"] = e.union_;
  d["iou"] = e.iou;
  d["miou"] = e.miou;
  d["pixels"] = e.pixels;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "LHT-CLIP inference engine";

  auto base = py::register_exception<Error>(m, "LhtError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  py::class_<VitModel>(m, "Model")
      .def_property_readonly("config",
                             [](const VitModel& vm) { return from_json_value(to_json(vm.config)); })
      .def_property_readonly("layers", [](const VitModel& vm) { return vm.config.layers; })
      .def_property_readonly("heads", [](const VitModel& vm) { return vm.config.heads; })
      .def_property_readonly("width", [](const VitModel& vm) { return vm.config.width; })
      .def_property_readonly("patch_size", [](const VitModel& vm) { return vm.config.patch_size; })
      .def_property_readonly("image_size", [](const VitModel& vm) { return vm.config.image_size; })
      .def_static(
          "from_tensors",
          [](const py::object& config, const std::map<std::string, FloatArray>& tensors) {
            Container c;
            c.metadata["config"] = to_json_value(config);
            for (const auto& [name, a] : tensors) c.tensors.emplace(name, to_tensor(a));
            return model_from_container(c);
          },
          py::arg("config"), py::arg("tensors"),
          "Builds a model from a config dict and named arrays (see expected_shapes).")
      .def("tensors",
           [](const VitModel& vm) {
             py::dict d;
             for (const auto& [name, t] : model_to_container(vm).tensors)
               d[py::str(name)] = to_numpy(t);
             return d;
           })
      .def("save", [](const VitModel& vm, const std::filesystem::path& p) { save_weights(p, vm); },
           py::arg("path"));

  py::class_<TextEmbeddings>(m, "TextEmbeddings")
      .def(py::init([](std::vector<std::string> names, const FloatArray& matrix) {
             TextEmbeddings t;
             t.class_names = std::move(names);
             t.matrix = normalize_rows(to_matrix(matrix, "text embeddings"));
             if (t.matrix.rows() != t.class_names.size())
               throw ShapeError("one class name per embedding row is required");
             return t;
           }),
           py::arg("class_names"), py::arg("matrix"))
      .def_readonly("class_names", &TextEmbeddings::class_names)
      .def_property_readonly("matrix", [](const TextEmbeddings& t) { return to_numpy(t.matrix); });

  m.def("expected_shapes",
        [](const py::object& config) {
          return expected_shapes(vit_config_from_json(to_json_value(config)));
        },
        py::arg("config"), "Tensor name → shape for a config dict.");
  m.def("read_container",
        [](const std::filesystem::path& p) {
          const Container c = read_container(p);
          py::dict tensors;
          for (const auto& [name, t] : c.tensors) tensors[py::str(name)] = to_numpy(t);
          return py::make_tuple(from_json_value(c.metadata), tensors);
        },
        py::arg("path"), "Returns (metadata, {name: array}).");
  m.def("write_container",
        [](const std::filesystem::path& p, const std::map<std::string, FloatArray>& tensors,
           const py::object& metadata) {
          Container c;
          if (!metadata.is_none()) c.metadata = to_json_value(metadata);
          for (const auto& [name, a] : tensors) c.tensors.emplace(name, to_tensor(a));
          write_container(p, c);
        },
        py::arg("path"), py::arg("tensors"), py::arg("metadata") = py::none());

  m.def("load_weights", &load_weights, py::arg("path"));
  m.def("load_text_embeddings",
        [](const std::filesystem::path& p) { return load_text_embeddings(p); }, py::arg("path"));
  m.def("load_image", [](const std::filesystem::path& p) { return image_to_numpy(load_image(p)); },
        py::arg("path"));
  m.def("load_label_map",
        [](const std::filesystem::path& p) { return map_to_numpy(load_label_map(p)); },
        py::arg("path"));

  m.def("strategy_preset",
        [](const std::string& name) {
          return from_json_value(to_json(to_strategy(py::str(name))));
        },
        py::arg("name"), "Preset strategy as a JSON-shaped dict.");

  m.def("tokenize",
        [](const VitModel& vm, const FloatArray& image, int threads) {
          return to_numpy(tokenize(to_image(image), vm, threads).tokens);
        },
        py::arg("model"), py::arg("image"), py::arg("threads") = 1,
        "Embedding-layer output X^0, [1 + h*w, D].");

  m.def("layer_forward",
        [](const VitModel& vm, const FloatArray& tokens, int grid_h, int grid_w, int layer,
           float alpha, int threads) {
          const LayerMode mode = alpha < 0 ? LayerMode::standard() : LayerMode::reweighted(alpha);
          return to_numpy(
              layer_forward(to_sequence(tokens, grid_h, grid_w, layer - 1), vm, layer, mode, threads)
                  .tokens);
        },
        py::arg("model"), py::arg("tokens"), py::arg("grid_h"), py::arg("grid_w"),
        py::arg("layer"), py::arg("alpha") = -1.0F, py::arg("threads") = 1,
        "One transformer block; alpha >= 0 selects the reweighted residual.");

  m.def("forward",
        [](const VitModel& vm, const FloatArray& image, const py::object& strategy,
           std::vector<int> tap_layers, int threads) {
          TapRequest taps;
          taps.layers.insert(tap_layers.begin(), tap_layers.end());
          const ForwardResult r = forward(to_image(image), vm, to_strategy(strategy), taps, threads);
          py::dict d;
          d["features"] = to_numpy(r.features);
          d["grid_h"] = r.grid_h;
          d["grid_w"] = r.grid_w;
          py::dict layers;
          for (const auto& [l, rec] : r.taps) layers[py::int_(l)] = to_numpy(rec.output.tokens);
          d["layers"] = layers;
          d["atr_flagged"] = r.stats.atr_flagged;
          d["atr_unresolved"] = r.stats.atr_unresolved;
          return d;
        },
        py::arg("model"), py::arg("image"), py::arg("strategy") = py::none(),
        py::arg("tap_layers") = std::vector<int>{}, py::arg("threads") = 1);

  m.def("hoyer_score", [](const FloatArray& x) { return hoyer_score(to_tensor(x).values()); },
        py::arg("x"));
  m.def("detect_abnormal",
        [](const FloatArray& tokens, int grid_h, int grid_w, double tau) {
          return detect_abnormal(to_sequence(tokens, grid_h, grid_w),
                                 AbnormalCriterion::sparsity(tau));
        },
        py::arg("tokens"), py::arg("grid_h"), py::arg("grid_w"), py::arg("tau") = 0.5,
        "0-based patch positions whose Hoyer score exceeds tau.");
  m.def("atr",
        [](const FloatArray& tokens, int grid_h, int grid_w, std::vector<std::size_t> positions) {
          const AtrResult r = atr(to_sequence(tokens, grid_h, grid_w), positions);
          return py::make_tuple(to_numpy(r.tokens.tokens), r.unresolved);
        },
        py::arg("tokens"), py::arg("grid_h"), py::arg("grid_w"), py::arg("positions"),
        "Returns (tokens, unresolved_count).");

  m.def("auc_rank",
        [](const FloatArray& s, std::vector<bool> pos) { return auc_rank(to_tensor(s).values(), pos); },
        py::arg("scores"), py::arg("positive"));
  m.def("auc_brute_force",
        [](const FloatArray& s, std::vector<bool> pos) {
          return auc_brute_force(to_tensor(s).values(), pos);
        },
        py::arg("scores"), py::arg("positive"));

  m.def("she_mask",
        [](const std::vector<FloatArray>& heads, double beta, const std::string& normalization) {
          std::vector<HeadFeature> hf;
          for (std::size_t i = 0; i < heads.size(); ++i)
            hf.push_back({1, static_cast<int>(i) + 1, to_matrix(heads[i], "head features")});
          MaskNormalization norm = MaskNormalization::rows;
          if (normalization == "columns") norm = MaskNormalization::columns;
          else if (normalization != "rows")
            throw ConfigError("normalization must be 'rows' or 'columns'");
          return to_numpy(she_mask(hf, beta, norm).matrix);
        },
        py::arg("heads"), py::arg("beta") = 0.7, py::arg("normalization") = "rows",
        "Pseudo-mask from per-head features [1 + h*w, D] ([CLS] row ignored).");
  m.def("apply_she",
        [](const FloatArray& tokens, int grid_h, int grid_w, const FloatArray& mask) {
          PseudoMask pm;
          pm.matrix = to_matrix(mask, "mask");
          return to_numpy(apply_she(to_sequence(tokens, grid_h, grid_w), pm).tokens);
        },
        py::arg("tokens"), py::arg("grid_h"), py::arg("grid_w"), py::arg("mask"));

  m.def("miou",
        [](const IntArray& pred, const IntArray& gt, int classes, int ignore_index) {
          return metrics_dict(miou(to_map(pred), to_map(gt), ignore_index, classes));
        },
        py::arg("pred"), py::arg("gt"), py::arg("classes"), py::arg("ignore_index") = 255);

  m.def("slide_segment",
        [](const VitModel& vm, const FloatArray& image, const TextEmbeddings& text,
           const py::object& strategy, int short_side, int crop, int stride, int threads) {
          const StrategyConfig s = to_strategy(strategy);
          s.validate(vm.config);
          return map_to_numpy(slide_segment(to_image(image), vm, s, text,
                                            SlideConfig{short_side, crop, stride}, threads));
        },
        py::arg("model"), py::arg("image"), py::arg("text"), py::arg("strategy") = py::none(),
        py::arg("short_side") = 336, py::arg("crop") = 224, py::arg("stride") = 112,
        py::arg("threads") = 1, "Per-pixel class indices [H, W] at the input resolution.");

  m.def("check_parity",
        [](const VitModel& vm, const std::filesystem::path& probe, int threads) {
          const ParityReport r = check_parity(vm, read_container(probe), threads);
          return py::make_tuple(r.worst, r.deviation);
        },
        py::arg("model"), py::arg("probe"), py::arg("threads") = 1,
        "Returns (worst, {tensor: max relative deviation}).");
  m.def("make_probe",
        [](const VitModel& vm, const FloatArray& image, const std::filesystem::path& out) {
          write_container(out, make_probe(vm, to_image(image)));
        },
        py::arg("model"), py::arg("image"), py::arg("path"));
}

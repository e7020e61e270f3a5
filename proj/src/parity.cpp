#include "lht/parity.hpp"

#include <algorithm>
#include <cmath>

#include "lht/error.hpp"
#include "lht/pipeline.hpp"

namespace lht {
namespace {

std::string layer_key(int l) { return "layer_" + std::to_string(l); }

Image image_from(const Tensor& t) {
  if (t.rank() != 3 || t.shape()[2] != 3)
    throw ContainerError(ContainerErrc::shape_mismatch, "probe image must be [H, W, 3]",
                         "image");
  Image img(static_cast<int>(t.shape()[0]), static_cast<int>(t.shape()[1]));
  std::copy(t.values().begin(), t.values().end(), img.pixels.begin());
  return img;
}

}  // namespace

double max_relative_deviation(const Tensor& a, const Tensor& reference) {
  if (a.shape() != reference.shape())
    throw ShapeError("parity: shape " + shape_string(a.shape()) + " vs reference " +
                     shape_string(reference.shape()));
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::fabs(static_cast<double>(a[i]) - reference[i]));
    scale = std::max(scale, std::fabs(static_cast<double>(reference[i])));
  }
  return scale > 0.0 ? diff / scale : diff;
}

ParityReport check_parity(const VitModel& model, const Container& probe, int threads) {
  const Image img = image_from(probe.get("image"));
  TapRequest taps;
  for (int l = 0; l <= model.config.layers; ++l)
    if (probe.tensors.count(layer_key(l))) taps.layers.insert(l);
  if (taps.layers.empty())
    throw ContainerError(ContainerErrc::missing_tensor, "probe holds no layer outputs",
                         layer_key(0));
  const ForwardResult fr = forward(img, model, StrategyConfig::plain(), taps, threads);
  ParityReport rep;
  for (int l : taps.layers) {
    const double d = max_relative_deviation(fr.taps.at(l).output.tokens, probe.get(layer_key(l)));
    rep.deviation[layer_key(l)] = d;
    rep.worst = std::max(rep.worst, d);
  }
  if (probe.tensors.count("features")) {
    const double d = max_relative_deviation(fr.features, probe.get("features"));
    rep.deviation["features"] = d;
    rep.worst = std::max(rep.worst, d);
  }
  return rep;
}

Container make_probe(const VitModel& model, const Image& image, int threads) {
  TapRequest taps;
  for (int l = 0; l <= model.config.layers; ++l) taps.layers.insert(l);
  const ForwardResult fr = forward(image, model, StrategyConfig::plain(), taps, threads);
  Container c;
  c.metadata["probe"] = {{"layers", model.config.layers}};
  c.tensors.emplace("image", Tensor({static_cast<std::size_t>(image.height),
                                     static_cast<std::size_t>(image.width), 3},
                                    image.pixels));
  for (const auto& [l, rec] : fr.taps) c.tensors.emplace(layer_key(l), rec.output.tokens);
  c.tensors.emplace("features", fr.features);
  return c;
}

}  // namespace lht

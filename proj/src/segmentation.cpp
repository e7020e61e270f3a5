#include "lht/segmentation.hpp"

#include <cmath>
#include <limits>

#include "lht/error.hpp"
#include "lht/parallel.hpp"

namespace lht {

Tensor patch_logits(const Tensor& features, const TextEmbeddings& text) {
  return cosine_rows(features, text.matrix);
}

WindowLogits window_segment(const Image& crop, const VitModel& model,
                            const StrategyConfig& strategy,
                            const TextEmbeddings& text, int threads) {
  ForwardResult fr = forward(crop, model, strategy, {}, threads);
  return {patch_logits(fr.features, text), fr.grid_h, fr.grid_w};
}

void SlideConfig::validate(int patch_size) const {
  if (crop <= 0 || stride <= 0 || short_side <= 0)
    throw ConfigError("slide config extents must be positive");
  if (stride > crop) throw ConfigError("slide stride must not exceed the crop size");
  if (crop % patch_size != 0)
    throw ConfigError("crop size must be a multiple of the patch size");
}

std::vector<std::pair<int, int>> window_origins(int h, int w, int crop, int stride) {
  const int h_grids = std::max(h - crop + stride - 1, 0) / stride + 1;
  const int w_grids = std::max(w - crop + stride - 1, 0) / stride + 1;
  std::vector<std::pair<int, int>> out;
  for (int hi = 0; hi < h_grids; ++hi)
    for (int wi = 0; wi < w_grids; ++wi) {
      const int y2 = std::min(hi * stride + crop, h);
      const int x2 = std::min(wi * stride + crop, w);
      out.emplace_back(std::max(y2 - crop, 0), std::max(x2 - crop, 0));
    }
  return out;
}

SlideLogits slide_logits(const Image& resized, const VitModel& model,
                         const StrategyConfig& strategy, const TextEmbeddings& text,
                         const SlideConfig& cfg, int threads) {
  cfg.validate(model.config.patch_size);
  if (resized.height < cfg.crop || resized.width < cfg.crop)
    throw ShapeError("slide_logits: image smaller than the crop");
  const auto origins = window_origins(resized.height, resized.width, cfg.crop, cfg.stride);
  const int classes = static_cast<int>(text.classes());

  std::vector<WindowLogits> windows(origins.size());
  parallel_for(origins.size(), threads, [&](std::size_t i) {
    const auto [y, x] = origins[i];
    windows[i] = window_segment(crop(resized, y, x, cfg.crop, cfg.crop), model,
                                strategy, text);
  });

  SlideLogits out;
  out.height = resized.height;
  out.width = resized.width;
  out.classes = classes;
  out.logits.assign(static_cast<std::size_t>(out.height) * out.width * classes, 0.0F);
  std::vector<int> coverage(static_cast<std::size_t>(out.height) * out.width, 0);
  for (std::size_t i = 0; i < origins.size(); ++i) {
    const auto [y0, x0] = origins[i];
    const auto& wl = windows[i];
    const auto up = resize_bilinear(wl.logits.values(), wl.grid_h, wl.grid_w, classes,
                                    cfg.crop, cfg.crop);
    for (int y = 0; y < cfg.crop; ++y)
      for (int x = 0; x < cfg.crop; ++x) {
        const auto pix = static_cast<std::size_t>(y0 + y) * out.width + (x0 + x);
        ++coverage[pix];
        const float* src = &up[(static_cast<std::size_t>(y) * cfg.crop + x) * classes];
        float* dst = &out.logits[pix * classes];
        for (int c = 0; c < classes; ++c) dst[c] += src[c];
      }
  }
  for (std::size_t pix = 0; pix < coverage.size(); ++pix) {
    if (coverage[pix] == 0) throw ShapeError("slide_logits: uncovered pixel");
    for (int c = 0; c < classes; ++c)
      out.logits[pix * classes + c] /= static_cast<float>(coverage[pix]);
  }
  return out;
}

ClassMap argmax_map(const std::vector<float>& logits, int h, int w, int classes) {
  if (logits.size() != static_cast<std::size_t>(h) * w * classes)
    throw ShapeError("argmax_map: logit raster size mismatch");
  ClassMap m;
  m.height = h;
  m.width = w;
  m.classes = classes;
  m.labels.resize(static_cast<std::size_t>(h) * w);
  for (std::size_t p = 0; p < m.labels.size(); ++p) {
    const float* row = &logits[p * classes];
    int best = 0;
    for (int c = 1; c < classes; ++c)
      if (row[c] > row[best]) best = c;
    m.labels[p] = best;
  }
  return m;
}

ClassMap slide_segment(const Image& image, const VitModel& model,
                       const StrategyConfig& strategy, const TextEmbeddings& text,
                       const SlideConfig& cfg, int threads) {
  cfg.validate(model.config.patch_size);
  if (image.height <= 0 || image.width <= 0) throw DataError("empty image");
  const double scale =
      static_cast<double>(cfg.short_side) / std::min(image.height, image.width);
  int rh = static_cast<int>(image.height * scale + 0.5);
  int rw = static_cast<int>(image.width * scale + 0.5);
  if (rh < cfg.crop || rw < cfg.crop) rh = rw = cfg.crop;
  const Image resized = resize_bilinear(image, rh, rw);
  const SlideLogits sl = slide_logits(resized, model, strategy, text, cfg, threads);
  const auto full = (rh == image.height && rw == image.width)
                        ? sl.logits
                        : resize_bilinear(sl.logits, rh, rw, sl.classes,
                                          image.height, image.width);
  return argmax_map(full, image.height, image.width, sl.classes);
}

IouAccumulator::IouAccumulator(int classes)
    : classes_(classes),
      inter_(static_cast<std::size_t>(std::max(classes, 0)), 0),
      pred_(inter_.size(), 0),
      gt_(inter_.size(), 0) {
  if (classes <= 0) throw ConfigError("class count must be positive");
}

void IouAccumulator::add(const ClassMap& pred, const ClassMap& gt,
                         std::int32_t ignore_index) {
  if (pred.height != gt.height || pred.width != gt.width ||
      pred.labels.size() != gt.labels.size())
    throw ShapeError("miou: prediction " + std::to_string(pred.height) + "x" +
                     std::to_string(pred.width) + " vs ground truth " +
                     std::to_string(gt.height) + "x" + std::to_string(gt.width));
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const auto g = gt.labels[i];
    if (g == ignore_index) continue;
    const auto p = pred.labels[i];
    if (g < 0 || g >= classes_)
      throw DataError("ground-truth label " + std::to_string(g) + " outside [0, " +
                      std::to_string(classes_) + ")");
    if (p != ignore_index && (p < 0 || p >= classes_))
      throw DataError("predicted label " + std::to_string(p) + " outside [0, " +
                      std::to_string(classes_) + ")");
    ++gt_[static_cast<std::size_t>(g)];
    ++pixels_;
    if (p == ignore_index) continue;  // unpredicted: counts toward the union only
    ++pred_[static_cast<std::size_t>(p)];
    if (p == g) ++inter_[static_cast<std::size_t>(g)];
  }
}

void IouAccumulator::merge(const IouAccumulator& other) {
  if (other.classes_ != classes_) throw ShapeError("merging different class counts");
  for (std::size_t c = 0; c < inter_.size(); ++c) {
    inter_[c] += other.inter_[c];
    pred_[c] += other.pred_[c];
    gt_[c] += other.gt_[c];
  }
  pixels_ += other.pixels_;
}

EvalMetrics IouAccumulator::metrics() const {
  EvalMetrics m;
  m.intersection = inter_;
  m.pixels = pixels_;
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < inter_.size(); ++c) {
    const auto u = pred_[c] + gt_[c] - inter_[c];
    m.union_.push_back(u);
    if (u == 0) {
      m.iou.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double iou = static_cast<double>(inter_[c]) / static_cast<double>(u);
    m.iou.push_back(iou);
    sum += iou;
    ++present;
  }
  m.miou = present ? sum / static_cast<double>(present) : 0.0;
  return m;
}

EvalMetrics miou(const ClassMap& pred, const ClassMap& gt, std::int32_t ignore_index,
                 int classes) {
  IouAccumulator acc(classes);
  acc.add(pred, gt, ignore_index);
  return acc.metrics();
}

}  // namespace lht

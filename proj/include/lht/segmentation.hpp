#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lht/image.hpp"
#include "lht/pipeline.hpp"
#include "lht/weights.hpp"

namespace lht {

/// Cosine similarity of every patch feature with every class embedding,
/// (h·w) × C.
Tensor patch_logits(const Tensor& features, const TextEmbeddings& text);

struct WindowLogits {
  Tensor logits;  // (h·w) × C
  int grid_h = 0;
  int grid_w = 0;
};

WindowLogits window_segment(const Image& crop, const VitModel& model,
                            const StrategyConfig& strategy,
                            const TextEmbeddings& text, int threads = 1);

struct SlideConfig {
  int short_side = 336;
  int crop = 224;
  int stride = 112;

  /// The Cityscapes protocol resizes the short side to 560 instead.
  static SlideConfig cityscapes() { return {560, 224, 112}; }
  void validate(int patch_size) const;
};

/// Window origins (y, x) covering an h×w image; the last window in each
/// direction is snapped to the image edge.
std::vector<std::pair<int, int>> window_origins(int h, int w, int crop, int stride);

/// Averaged per-pixel logits over all windows, at the resized resolution.
struct SlideLogits {
  int height = 0;
  int width = 0;
  int classes = 0;
  std::vector<float> logits;  // H×W×C interleaved
};

SlideLogits slide_logits(const Image& resized, const VitModel& model,
                         const StrategyConfig& strategy, const TextEmbeddings& text,
                         const SlideConfig& cfg, int threads = 1);

/// Lowest class index wins ties.
ClassMap argmax_map(const std::vector<float>& logits, int h, int w, int classes);

/// Short side → cfg.short_side (bilinear), sliding windows, logit averaging,
/// bilinear resize of the averaged logits back to the input size, argmax.
ClassMap slide_segment(const Image& image, const VitModel& model,
                       const StrategyConfig& strategy, const TextEmbeddings& text,
                       const SlideConfig& cfg = {}, int threads = 1);

struct EvalMetrics {
  std::vector<std::uint64_t> intersection;
  std::vector<std::uint64_t> union_;
  std::vector<double> iou;  // NaN where the union is empty
  double miou = 0.0;        // mean over classes with nonzero union
  std::uint64_t pixels = 0;  // non-ignored pixels counted
};

/// Per-class intersection/union counts; merging is associative.
class IouAccumulator {
 public:
  explicit IouAccumulator(int classes);

  /// Pixels whose ground truth equals `ignore_index` are skipped. A
  /// prediction equal to `ignore_index` counts as "no class": it enlarges the
  /// ground-truth class's union but never intersects.
  void add(const ClassMap& pred, const ClassMap& gt, std::int32_t ignore_index);
  void merge(const IouAccumulator& other);
  EvalMetrics metrics() const;

 private:
  int classes_;
  std::vector<std::uint64_t> inter_, pred_, gt_;
  std::uint64_t pixels_ = 0;
};

EvalMetrics miou(const ClassMap& pred, const ClassMap& gt, std::int32_t ignore_index,
                 int classes);

}  // namespace lht

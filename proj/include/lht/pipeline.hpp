#pragma once

#include <map>
#include <set>
#include <vector>

#include "lht/strategies.hpp"
#include "lht/strategy_config.hpp"
#include "lht/vit.hpp"

namespace lht {

/// What to record during forward(). Layer L is only recorded for the
/// vanilla variant, where a full final block runs.
struct TapRequest {
  std::set<int> layers;
  std::set<HeadId> heads;
  bool attention = false;  // attention maps of the tapped layers
};

using LayerTap = std::map<int, LayerRecord>;

struct ForwardStats {
  std::size_t atr_flagged = 0;
  std::size_t atr_unresolved = 0;
  std::size_t head_flagged = 0;
};

struct ForwardResult {
  Tensor features;  // (h·w) × projection_dim
  int grid_h = 0;
  int grid_w = 0;
  LayerTap taps;
  ForwardStats stats;
  /// Head features after ATR, as used for the SHE mask.
  std::vector<HeadFeature> she_heads;
};

/// Full pipeline: layers 1..L−1 (reweighted inside the SSR range, skipped
/// inside the skip range) → ATR on X^{L−1} and on the selected head
/// features → SHE mask applied to X^{L−1} → final-layer variant → project.
ForwardResult forward(const Image& image, const VitModel& model,
                      const StrategyConfig& strategy, const TapRequest& taps = {},
                      int threads = 1);

}  // namespace lht

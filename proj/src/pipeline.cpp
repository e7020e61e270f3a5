#include "lht/pipeline.hpp"

#include <algorithm>

#include "lht/diagnostics.hpp"
#include "lht/error.hpp"

namespace lht {

ForwardResult forward(const Image& image, const VitModel& model,
                      const StrategyConfig& strategy, const TapRequest& taps,
                      int threads) {
  strategy.validate(model.config);
  const int last = model.config.layers;
  const bool use_she = strategy.she.enabled;

  // Heads needed per layer: SHE sources plus tapped heads.
  std::map<int, std::vector<int>> wanted;
  if (use_she)
    for (const auto& h : strategy.she.heads) wanted[h.layer].push_back(h.head);
  for (const auto& h : taps.heads) wanted[h.layer].push_back(h.head);
  for (auto& [l, hs] : wanted) {
    std::sort(hs.begin(), hs.end());
    hs.erase(std::unique(hs.begin(), hs.end()), hs.end());
  }

  ForwardResult result;
  TokenSequence x = tokenize(image, model, threads);
  result.grid_h = x.grid_h;
  result.grid_w = x.grid_w;
  if (taps.layers.count(0)) result.taps[0].output = x;

  std::map<HeadId, HeadFeature> captured;
  for (int l = 1; l <= last - 1; ++l) {
    if (strategy.skip.enabled && l >= strategy.skip.skip_from &&
        l < strategy.skip.resume_at)
      continue;
    const bool reweight = strategy.ssr.enabled && l >= strategy.ssr.start_layer &&
                          l <= strategy.ssr.end_layer;
    const LayerMode mode = reweight
                               ? LayerMode::reweighted(static_cast<float>(strategy.ssr.alpha))
                               : LayerMode::standard();
    const auto it = wanted.find(l);
    const bool tapped = taps.layers.count(l) > 0;
    LayerRecord rec = layer_forward_recorded(
        x, model, l, mode, it == wanted.end() ? std::vector<int>{} : it->second,
        tapped && taps.attention, threads);
    for (auto& hf : rec.heads) {
      const HeadId id{hf.layer, hf.head};
      if (taps.heads.count(id)) result.taps[l].heads.push_back(hf);
      captured.emplace(id, std::move(hf));
    }
    rec.heads.clear();
    x = std::move(rec.output);
    if (tapped || result.taps.count(l)) {
      auto& slot = result.taps[l];
      slot.output = x;
      slot.attention = std::move(rec.attention);
    }
  }

  // ATR on X^{L-1}.
  std::vector<std::size_t> flagged;
  if (strategy.atr.enabled) {
    flagged = detect_abnormal(x, strategy.atr.criterion);
    AtrResult r = atr(x, flagged);
    result.stats.atr_flagged = flagged.size();
    result.stats.atr_unresolved = r.unresolved;
    x = std::move(r.tokens);
  }

  if (use_she) {
    std::vector<HeadFeature> heads;
    heads.reserve(strategy.she.heads.size());
    for (const auto& id : strategy.she.heads) {
      HeadFeature hf = captured.at(id);
      if (strategy.atr.enabled && strategy.atr.apply_to_heads) {
        const auto positions =
            strategy.atr.head_detection == HeadDetection::own_map
                ? detect_abnormal_rows(hf.features, 1, x.patch_count(),
                                       strategy.atr.criterion)
                : flagged;
        result.stats.head_flagged += positions.size();
        atr_rows(hf.features, 1, x.grid_h, x.grid_w, positions);
      }
      heads.push_back(std::move(hf));
    }
    const PseudoMask mask =
        she_mask(heads, strategy.she.beta, strategy.she.normalization);
    x = apply_she(x, mask);
    result.she_heads = std::move(heads);
  }

  if (strategy.variant == FinalVariant::vanilla && taps.layers.count(last)) {
    LayerRecord rec = layer_forward_recorded(x, model, last, LayerMode::standard(),
                                             {}, taps.attention, threads);
    result.features = project(rec.output.patches(), model, threads);
    result.taps[last] = std::move(rec);
    return result;
  }
  result.features =
      project(final_layer_features(x, model, strategy.variant, threads), model, threads);
  return result;
}

}  // namespace lht

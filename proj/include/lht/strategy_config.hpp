#pragma once

#include <compare>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "lht/vit.hpp"
#include "lht/weights.hpp"

namespace lht {

/// A (layer, head) pair, both 1-based.
struct HeadId {
  int layer = 0;
  int head = 0;
  auto operator<=>(const HeadId&) const = default;
};

enum class DetectionKind { sparsity, norm };

/// Hoyer score above `threshold` (τ), or L2 norm above `threshold` (γ).
struct AbnormalCriterion {
  DetectionKind kind = DetectionKind::sparsity;
  double threshold = 0.5;

  static AbnormalCriterion sparsity(double tau) { return {DetectionKind::sparsity, tau}; }
  static AbnormalCriterion norm(double gamma) { return {DetectionKind::norm, gamma}; }
  void validate() const;
};

/// Where abnormal positions inside head feature maps come from.
enum class HeadDetection {
  own_map,           // re-detect on each head feature map
  shared_positions,  // reuse the positions flagged on X^{L-1}
};

enum class MaskNormalization {
  rows,     // each output token's weights sum to 1
  columns,  // each source token's weights sum to 1
};

enum class ModelProfile { custom, vitb, vitl };

struct AtrConfig {
  bool enabled = false;
  AbnormalCriterion criterion;
  bool apply_to_heads = true;
  HeadDetection head_detection = HeadDetection::own_map;
};

/// Layers are 1-based and inclusive.
struct SsrConfig {
  bool enabled = false;
  double alpha = 0.1;
  int start_layer = 1;
  int end_layer = 1;
};

struct SheConfig {
  bool enabled = false;
  std::vector<HeadId> heads;
  double beta = 0.7;
  MaskNormalization normalization = MaskNormalization::rows;
};

/// Layers [skip_from, resume_at - 1] are bypassed.
struct SkipConfig {
  bool enabled = false;
  int skip_from = 1;
  int resume_at = 1;
};

struct StrategyConfig {
  ModelProfile profile = ModelProfile::custom;
  AtrConfig atr;
  SsrConfig ssr;
  SheConfig she;
  SkipConfig skip;
  FinalVariant variant = FinalVariant::vanilla;

  /// Everything disabled, vanilla final layer: a plain CLIP forward.
  static StrategyConfig plain() { return {}; }
  /// Published defaults for ViT-B/16 or ViT-L/14.
  static StrategyConfig preset(ModelProfile profile);

  /// Throws ConfigError when a knob is out of range for `model`.
  void validate(const VitConfig& model) const;
};

const char* profile_name(ModelProfile p);
ModelProfile parse_profile(const std::string& name);

/// Fixed top-ranked head lists for the presets.
const std::vector<HeadId>& preset_heads(ModelProfile p);

/// Parses a config tree. Keys absent from `j` keep the values of the
/// profile named by "model_profile" (or of plain() when absent). A
/// "ranking_file" + "top_k" pair under "she" is resolved relative to
/// `base_dir` into an explicit head list.
StrategyConfig strategy_from_json(const nlohmann::json& j,
                                  const std::filesystem::path& base_dir = {});
nlohmann::json to_json(const StrategyConfig& s);
StrategyConfig load_strategy(const std::filesystem::path& path);

/// Top-k rows of a ranking CSV written by `rank-export` / `analyze-heads`.
std::vector<HeadId> read_ranking(const std::filesystem::path& path, int top_k);

}  // namespace lht

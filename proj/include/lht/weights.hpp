#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lht/container.hpp"
#include "lht/tensor.hpp"

namespace lht {

enum class Activation { gelu, quick_gelu };

struct VitConfig {
  int layers = 12;
  int heads = 12;
  int width = 768;
  int patch_size = 16;
  int image_size = 224;
  float ln_eps = 1e-5F;
  int projection_dim = 512;
  Activation activation = Activation::gelu;
  // Layer norm applied to the embedded tokens before layer 1 (CLIP's
  // ln_pre). When false the container carries no ln_pre tensors.
  bool pre_norm = false;
  // Per-channel pixel normalization applied by tokenize().
  std::array<float, 3> image_mean{0.0F, 0.0F, 0.0F};
  std::array<float, 3> image_std{1.0F, 1.0F, 1.0F};

  int head_dim() const { return width / heads; }
  int mlp_width() const { return 4 * width; }
  /// Side of the native patch grid (image_size / patch_size).
  int native_grid() const { return image_size / patch_size; }

  /// Throws ConfigError when the invariants do not hold.
  void validate() const;

  friend bool operator==(const VitConfig&, const VitConfig&) = default;
};

nlohmann::json to_json(const VitConfig& cfg);
VitConfig vit_config_from_json(const nlohmann::json& j);

/// Linear maps are stored input-major: y = x·W + b.
struct LayerWeights {
  Tensor ln1_gain, ln1_bias;
  Tensor q_weight, q_bias;
  Tensor k_weight, k_bias;
  Tensor v_weight, v_bias;
  Tensor out_weight, out_bias;
  Tensor ln2_gain, ln2_bias;
  Tensor fc1_weight, fc1_bias;  // D×4D, 4D
  Tensor fc2_weight, fc2_bias;  // 4D×D, D
};

struct VitWeights {
  Tensor patch_weight;  // D × (3·P·P), input flattened channel-major (c,y,x)
  Tensor patch_bias;    // D
  Tensor class_embedding;       // D
  Tensor positional_embedding;  // (1+g²) × D for the native grid g
  Tensor pre_norm_gain, pre_norm_bias;
  std::vector<LayerWeights> layers;
  Tensor post_norm_gain, post_norm_bias;
  Tensor projection;  // D × projection_dim
};

/// An immutable, validated model. Shared read-only between workers.
struct VitModel {
  VitConfig config;
  VitWeights weights;
};

/// Container tensor name → expected shape for a configuration.
std::map<std::string, std::vector<std::size_t>> expected_shapes(
    const VitConfig& cfg);

VitModel load_weights(const std::filesystem::path& path);
VitModel model_from_container(const Container& c);
Container model_to_container(const VitModel& model);
void save_weights(const std::filesystem::path& path, const VitModel& model);

/// Throws ContainerError when any tensor disagrees with expected_shapes().
void validate_model(const VitModel& model);

struct TextEmbeddings {
  std::vector<std::string> class_names;
  Tensor matrix;  // C × projection_dim, unit-norm rows

  std::size_t classes() const { return class_names.size(); }
};

/// Loads and re-normalizes the class embedding matrix. When
/// `projection_dim` is given, the row width must match it.
TextEmbeddings load_text_embeddings(
    const std::filesystem::path& path,
    std::optional<int> projection_dim = std::nullopt);
TextEmbeddings text_embeddings_from_container(
    const Container& c, std::optional<int> projection_dim = std::nullopt);
void save_text_embeddings(const std::filesystem::path& path,
                          const TextEmbeddings& text);

}  // namespace lht

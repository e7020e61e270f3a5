#pragma once

// Instrumented CLIP vision encoder.
//
// Layers are numbered 1..L. A TokenSequence with `layer == l` is the output
// X^l of layer l; `layer == 0` is the embedding output X^0. Head numbers are
// 1..H. Row 0 of every token matrix is the [CLS] token, rows 1..h·w are the
// patch tokens in row-major grid order.

#include <map>
#include <optional>
#include <span>
#include <vector>

#include "lht/image.hpp"
#include "lht/tensor.hpp"
#include "lht/weights.hpp"

namespace lht {

struct TokenSequence {
  Tensor tokens;  // (1 + h·w) × D
  int grid_h = 0;
  int grid_w = 0;
  int layer = 0;

  std::size_t patch_count() const {
    return static_cast<std::size_t>(grid_h) * static_cast<std::size_t>(grid_w);
  }
  std::size_t width() const { return tokens.cols(); }
  std::span<const float> cls() const { return tokens.row(0); }
  /// Patch p in row-major grid order.
  std::span<const float> patch(std::size_t p) const { return tokens.row(p + 1); }
  /// Copy of the patch rows, (h·w) × D.
  Tensor patches() const { return tokens.slice_rows(1, patch_count()); }

  /// Throws ShapeError unless rows == 1 + h·w.
  void check() const;
};

/// One head's contribution A_h V_h W_o (output bias excluded).
struct HeadFeature {
  int layer = 0;
  int head = 0;
  Tensor features;  // (1 + h·w) × D
};

enum class AttentionKind {
  standard,  // softmax(Q Kᵀ · s)
  identity,  // A = I
  qq_kk,     // softmax(Q Qᵀ · s) + softmax(K Kᵀ · s)
};

struct MsaOptions {
  AttentionKind kind = AttentionKind::standard;
  std::vector<int> capture_heads;  // 1-based head numbers
  bool keep_attention = false;
  int layer = 0;  // label stored into captured HeadFeatures
  int threads = 1;
};

struct MsaResult {
  Tensor output;  // Σ_h A_h V_h W_o + b_o
  std::vector<HeadFeature> heads;
  std::vector<Tensor> attention;  // per head, when requested
};

/// Multi-head self-attention on an already layer-normalised token matrix.
/// The scale is 1/sqrt(D/H) for every attention kind.
MsaResult msa_forward(const Tensor& normed, const LayerWeights& lw,
                      const VitConfig& cfg, const MsaOptions& opts = {});

/// FFN(x) = fc2(act(fc1(x))) on an already normalised input.
Tensor ffn_forward(const Tensor& normed, const LayerWeights& lw,
                   const VitConfig& cfg, int threads = 1);

struct LayerMode {
  bool ssr = false;
  float alpha = 0.0F;

  static LayerMode standard() { return {}; }
  /// Residual ×(1+α), submodules ×(1−α). Throws ConfigError for α ∉ [0,1].
  static LayerMode reweighted(float alpha);
};

struct LayerRecord {
  TokenSequence output;
  std::vector<HeadFeature> heads;
  std::vector<Tensor> attention;
};

/// One encoder block. `capture_heads` and `keep_attention` populate the
/// record's head features / attention maps for this layer.
LayerRecord layer_forward_recorded(const TokenSequence& x, const VitModel& model,
                                   int layer, LayerMode mode,
                                   const std::vector<int>& capture_heads = {},
                                   bool keep_attention = false, int threads = 1);

TokenSequence layer_forward(const TokenSequence& x, const VitModel& model,
                            int layer, LayerMode mode = LayerMode::standard(),
                            int threads = 1);

enum class FinalVariant {
  vanilla,      // full block, [CLS] dropped
  identity,     // value path only: (LN(x)·W_v + b_v)·W_o + b_o
  sclip_qqkk,   // QQᵀ + KKᵀ attention over the value path
  clearclip,    // standard attention over the value path
};

const char* variant_name(FinalVariant v);
FinalVariant parse_variant(const std::string& name);

/// Final-layer patch features (h·w) × D. The non-vanilla variants keep both
/// the value and output biases, drop the residual and the FFN.
Tensor final_layer_features(const TokenSequence& x, const VitModel& model,
                            FinalVariant variant, int threads = 1);

/// Final layer norm then visual projection, per row.
Tensor project(const Tensor& features, const VitModel& model, int threads = 1);

/// Patch embedding, [CLS] prepend, positional embeddings, pre-norm.
/// Image sides must be multiples of the patch size. Non-native grids get
/// bicubically interpolated positional embeddings.
TokenSequence tokenize(const Image& image, const VitModel& model, int threads = 1);

/// Positional embeddings resized to an h×w grid; row 0 ([CLS]) verbatim.
Tensor interpolate_positions(const Tensor& positional, int native_grid,
                             int grid_h, int grid_w);

}  // namespace lht

#pragma once

// Layer/head/token measurements: Hoyer sparsity, abnormal-token detection
// and statistics, pairwise visual discriminability (ROC AUC), semantic
// alignment accuracy and head ranking.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lht/image.hpp"
#include "lht/strategy_config.hpp"
#include "lht/vit.hpp"
#include "lht/weights.hpp"

namespace lht {

/// (√D − ‖x‖₁/‖x‖₂)/(√D − 1), in [0,1]. Throws NumericError for x = 0.
/// For D = 1 every nonzero vector is one-hot and scores 1.
double hoyer_score(std::span<const float> x);

/// Row-major patch indices (0-based, [CLS] excluded) whose score strictly
/// exceeds the threshold.
std::vector<std::size_t> detect_abnormal(const TokenSequence& x,
                                         const AbnormalCriterion& criterion);

/// Same, over rows [row_offset, row_offset + count) of a token matrix.
std::vector<std::size_t> detect_abnormal_rows(const Tensor& tokens,
                                              std::size_t row_offset,
                                              std::size_t count,
                                              const AbnormalCriterion& criterion);

/// Abnormal tokens of one layer of one sample.
struct AbnormalObservation {
  int sample = 0;
  int layer = 0;
  TokenSequence tokens;
  std::vector<std::size_t> positions;
};

struct AbnormalStats {
  std::size_t tokens = 0;  // abnormal tokens pooled
  std::size_t pairs = 0;
  double mean_cosine = 0.0;  // among abnormal tokens, all pairs pooled
  double min_cosine = 0.0;
  double mean_cosine_to_cls = 0.0;          // vs the [CLS] of the same map
  double mean_cosine_to_normal_mean = 0.0;  // vs mean of unflagged patches
};

/// Pairwise cosine summary across positions, layers and samples. Empty
/// when fewer than two abnormal tokens are present.
std::optional<AbnormalStats> replace_stats(
    const std::vector<AbnormalObservation>& observations);

/// Per-patch labels on the token grid. kIgnore marks unlabelled patches.
struct PatchLabels {
  static constexpr std::int32_t kIgnore = -1;
  int grid_h = 0;
  int grid_w = 0;
  std::vector<std::int32_t> labels;

  std::size_t count() const { return labels.size(); }
};

/// Majority class among the patch_size² pixels under each patch (ties go
/// to the lower class index). Patches whose majority is `ignore_index`
/// become kIgnore. The map must be an exact multiple of patch_size.
PatchLabels patch_labels_from_pixels(const ClassMap& gt, int patch_size,
                                     std::int32_t ignore_index);

/// ROC AUC of `scores` for the binary target `positive`, via the
/// rank-sum statistic with tied scores sharing their mean rank. Throws
/// DataError when either class is empty.
double auc_rank(std::span<const float> scores, const std::vector<bool>& positive);

/// Brute force: (concordant + ½·ties) / (positives·negatives).
double auc_brute_force(std::span<const float> scores,
                       const std::vector<bool>& positive);

/// Collects the within-image pair scores of one image: cosine similarity
/// of every unordered pair of labelled patches and whether their labels
/// agree. Zero-norm rows have cosine 0 with everything.
struct PairScores {
  std::vector<float> scores;
  std::vector<bool> same;
};
PairScores pair_scores(const Tensor& features, const PatchLabels& labels);

/// AUC of within-image patch pairs. Throws DataError for a labelling with
/// no same-class or no cross-class pair.
double discriminability_auc(const Tensor& features, const PatchLabels& labels);

/// Eq.-3 accuracy of intermediate tokens pushed through the identity-
/// attention final layer and the projection.
double alignment_accuracy(const TokenSequence& x, const VitModel& model,
                          const TextEmbeddings& text, const PatchLabels& labels,
                          int threads = 1);

struct LabeledSample {
  Image image;
  PatchLabels labels;
  std::string dataset;
};

struct HeadScore {
  HeadId id;
  double mean_auc = 0.0;
  std::map<std::string, double> dataset_auc;
};

struct HeadRankingOptions {
  AbnormalCriterion criterion = AbnormalCriterion::sparsity(0.5);
  bool apply_atr = true;
  int threads = 1;  // workers over samples
};

/// Heads of layers 1..L−1 sorted by mean AUC (per-dataset means averaged
/// across datasets), descending; ties by (layer, head) ascending.
std::vector<HeadScore> rank_heads(const std::vector<LabeledSample>& samples,
                                  const VitModel& model,
                                  const HeadRankingOptions& opts = {});

/// Per-image head AUCs, the building block of rank_heads.
std::map<HeadId, double> head_aucs(const LabeledSample& sample,
                                   const VitModel& model,
                                   const HeadRankingOptions& opts);

/// Averages per-dataset then across datasets, sorts as rank_heads does.
std::vector<HeadScore> aggregate_head_scores(
    const std::vector<std::pair<std::string, std::map<HeadId, double>>>& per_image);

struct DiscriminabilityReport {
  std::vector<double> layer_auc;         // layers 1..L−1, per-image mean
  std::vector<double> layer_auc_pooled;  // all images' pairs pooled
  std::vector<double> layer_alignment;   // empty when no text was given
  std::size_t samples = 0;
};

/// Layer sweep over X^1..X^{L−1} of a plain forward pass.
DiscriminabilityReport analyze_layers(const std::vector<LabeledSample>& samples,
                                      const VitModel& model,
                                      const TextEmbeddings* text, int threads = 1);

}  // namespace lht

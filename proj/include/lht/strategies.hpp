#pragma once

#include <vector>

#include "lht/strategy_config.hpp"
#include "lht/vit.hpp"

namespace lht {

struct AtrResult {
  TokenSequence tokens;
  /// Flagged positions left unchanged because every in-grid neighbour
  /// was flagged as well.
  std::size_t unresolved = 0;
};

/// Replaces each flagged patch by the unweighted mean of its unflagged
/// in-grid 8-neighbours. [CLS] and unflagged patches are copied verbatim.
AtrResult atr(const TokenSequence& x, const std::vector<std::size_t>& positions);

/// In-place variant over a token matrix whose patch rows start at
/// `row_offset` (1 when row 0 is [CLS]). Returns the unresolved count.
std::size_t atr_rows(Tensor& tokens, std::size_t row_offset, int grid_h,
                     int grid_w, const std::vector<std::size_t>& positions);

/// Runs layers x.layer+1 .. L−1, reweighting those in [start, end].
TokenSequence ssr_range(const TokenSequence& x, const VitModel& model,
                        double alpha, int start, int end, int threads = 1);

struct PseudoMask {
  Tensor matrix;  // (h·w) × (h·w)
  double beta = 0.0;
  MaskNormalization normalization = MaskNormalization::rows;
  std::vector<HeadId> sources;
};

/// Thresholded cosine-similarity mask over the mean of the given head
/// features' patch rows ([CLS] row dropped). Entries below `beta` are
/// zeroed, then rows (or columns) are normalised to sum to 1.
PseudoMask she_mask(const std::vector<HeadFeature>& heads, double beta,
                    MaskNormalization normalization = MaskNormalization::rows);

/// patches ← mask · patches; [CLS] untouched.
TokenSequence apply_she(const TokenSequence& x, const PseudoMask& mask);

/// Runs the full stack from X^0 with layers [skip_from, resume_at − 1]
/// bypassed, returning X^L. An empty range (skip_from == resume_at) runs
/// every layer.
TokenSequence direct_skip(const TokenSequence& x0, const VitModel& model,
                          int skip_from, int resume_at, int threads = 1);

}  // namespace lht

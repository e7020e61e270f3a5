#include "lht/strategies.hpp"

#include <cmath>

#include "lht/error.hpp"

namespace lht {

std::size_t atr_rows(Tensor& tokens, std::size_t row_offset, int grid_h,
                     int grid_w, const std::vector<std::size_t>& positions) {
  const auto hw = static_cast<std::size_t>(grid_h) * grid_w;
  if (tokens.rows() < row_offset + hw)
    throw ShapeError("atr: token matrix smaller than the grid");
  std::vector<bool> flagged(hw, false);
  for (auto p : positions) {
    if (p >= hw)
      throw ShapeError("atr: position " + std::to_string(p) + " outside the " +
                       std::to_string(grid_h) + "x" + std::to_string(grid_w) +
                       " grid");
    flagged[p] = true;
  }
  // Replacements read only unflagged rows, which are never written, so
  // updating in place is order-independent.
  const auto d = tokens.cols();
  std::size_t unresolved = 0;
  std::vector<double> acc(d);
  for (std::size_t p = 0; p < hw; ++p) {
    if (!flagged[p]) continue;
    const int m = static_cast<int>(p) / grid_w;
    const int n = static_cast<int>(p) % grid_w;
    std::fill(acc.begin(), acc.end(), 0.0);
    int count = 0;
    for (int i = m - 1; i <= m + 1; ++i)
      for (int j = n - 1; j <= n + 1; ++j) {
        if (i < 0 || j < 0 || i >= grid_h || j >= grid_w) continue;
        const auto q = static_cast<std::size_t>(i) * grid_w + j;
        if (flagged[q]) continue;
        auto src = tokens.row(row_offset + q);
        for (std::size_t k = 0; k < d; ++k) acc[k] += src[k];
        ++count;
      }
    if (count == 0) {
      ++unresolved;
      continue;
    }
    auto dst = tokens.row(row_offset + p);
    for (std::size_t k = 0; k < d; ++k) dst[k] = static_cast<float>(acc[k] / count);
  }
  return unresolved;
}

AtrResult atr(const TokenSequence& x, const std::vector<std::size_t>& positions) {
  x.check();
  AtrResult r{x, 0};
  r.unresolved = atr_rows(r.tokens.tokens, 1, x.grid_h, x.grid_w, positions);
  return r;
}

TokenSequence ssr_range(const TokenSequence& x, const VitModel& model,
                        double alpha, int start, int end, int threads) {
  const int last = model.config.layers;
  if (!(1 <= start && start <= end && end <= last - 1))
    throw ConfigError("reweighting range must satisfy 1 <= start <= end <= " +
                      std::to_string(last - 1));
  const auto mode = LayerMode::reweighted(static_cast<float>(alpha));
  TokenSequence cur = x;
  for (int l = x.layer + 1; l <= last - 1; ++l)
    cur = layer_forward(cur, model, l,
                        (l >= start && l <= end) ? mode : LayerMode::standard(),
                        threads);
  return cur;
}

PseudoMask she_mask(const std::vector<HeadFeature>& heads, double beta,
                    MaskNormalization normalization) {
  if (heads.empty()) throw ConfigError("she_mask: empty head list");
  const auto n = heads.front().features.rows();
  const auto d = heads.front().features.cols();
  if (n < 2) throw ShapeError("she_mask: head features hold no patch rows");
  const auto hw = n - 1;
  Tensor mean({hw, d});
  {
    std::vector<double> acc(hw * d, 0.0);
    for (const auto& h : heads) {
      if (h.features.shape() != heads.front().features.shape())
        throw ShapeError("she_mask: head feature shapes differ");
      for (std::size_t r = 0; r < hw; ++r) {
        auto src = h.features.row(r + 1);
        for (std::size_t k = 0; k < d; ++k) acc[r * d + k] += src[k];
      }
    }
    const double k = static_cast<double>(heads.size());
    for (std::size_t i = 0; i < hw * d; ++i)
      mean[i] = static_cast<float>(acc[i] / k);
  }
  PseudoMask mask;
  mask.beta = beta;
  mask.normalization = normalization;
  for (const auto& h : heads) mask.sources.push_back({h.layer, h.head});
  mask.matrix = cosine_rows(mean, mean);  // throws on a zero-norm row
  for (auto& v : mask.matrix.data())
    if (!(v >= beta)) v = 0.0F;
  // cos(i,i) = 1 may round just under 1; the diagonal always survives.
  for (std::size_t i = 0; i < hw; ++i) mask.matrix.at(i, i) = 1.0F;

  if (normalization == MaskNormalization::rows) {
    for (std::size_t i = 0; i < hw; ++i) {
      auto row = mask.matrix.row(i);
      double s = 0.0;
      for (float v : row) s += v;
      if (!(s > 0.0)) throw NumericError("she_mask: empty mask row");
      for (auto& v : row) v = static_cast<float>(v / s);
    }
  } else {
    for (std::size_t j = 0; j < hw; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < hw; ++i) s += mask.matrix.at(i, j);
      if (!(s > 0.0)) throw NumericError("she_mask: empty mask column");
      for (std::size_t i = 0; i < hw; ++i)
        mask.matrix.at(i, j) = static_cast<float>(mask.matrix.at(i, j) / s);
    }
  }
  return mask;
}

TokenSequence apply_she(const TokenSequence& x, const PseudoMask& mask) {
  x.check();
  const auto hw = x.patch_count();
  if (mask.matrix.rank() != 2 || mask.matrix.rows() != hw || mask.matrix.cols() != hw)
    throw ShapeError("apply_she: mask " + shape_string(mask.matrix.shape()) +
                     " does not match " + std::to_string(hw) + " patches");
  const Tensor mixed = matmul(mask.matrix, x.patches());
  TokenSequence out = x;
  for (std::size_t r = 0; r < hw; ++r) {
    auto src = mixed.row(r);
    std::copy(src.begin(), src.end(), out.tokens.row(r + 1).begin());
  }
  return out;
}

TokenSequence direct_skip(const TokenSequence& x0, const VitModel& model,
                          int skip_from, int resume_at, int threads) {
  const int last = model.config.layers;
  if (!(1 <= skip_from && skip_from <= resume_at && resume_at <= last))
    throw ConfigError("skip range must satisfy 1 <= from <= resume <= " +
                      std::to_string(last));
  TokenSequence cur = x0;
  for (int l = x0.layer + 1; l <= last; ++l) {
    if (l >= skip_from && l < resume_at) continue;
    cur = layer_forward(cur, model, l, LayerMode::standard(), threads);
  }
  return cur;
}

}  // namespace lht

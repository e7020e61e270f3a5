#include "lht/strategies.hpp"

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "lht/diagnostics.hpp"
#include "lht/error.hpp"
#include "toy_model.hpp"

namespace lht {
namespace {

using testing::max_abs_diff;
using testing::random_model;
using testing::random_tensor;
using testing::toy_config;

TokenSequence seq(const Tensor& t, int gh, int gw) { return {t, gh, gw, 11}; }

std::vector<double> mean_of(const TokenSequence& x, std::initializer_list<std::size_t> ps) {
  std::vector<double> m(x.width(), 0.0);
  for (auto p : ps)
    for (std::size_t k = 0; k < m.size(); ++k) m[k] += x.patch(p)[k];
  for (auto& v : m) v /= static_cast<double>(ps.size());
  return m;
}

TEST(AtrTest, EmptySetIsNoOp) {
  const TokenSequence x = seq(random_tensor({10, 5}, 1), 3, 3);
  const AtrResult r = atr(x, {});
  EXPECT_EQ(r.tokens.tokens, x.tokens);
  EXPECT_EQ(r.unresolved, 0U);
}

TEST(AtrTest, CenterGetsEightNeighbourMean) {
  const TokenSequence x = seq(random_tensor({10, 5}, 2), 3, 3);
  const AtrResult r = atr(x, {4});
  const auto m = mean_of(x, {0, 1, 2, 3, 5, 6, 7, 8});
  for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(r.tokens.patch(4)[k], m[k], 1e-6);
  for (std::size_t p : {0U, 3U, 8U})
    for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(r.tokens.patch(p)[k], x.patch(p)[k]);
  for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(r.tokens.cls()[k], x.cls()[k]);
}

TEST(AtrTest, CornerAndEdgeNeighbourhoods) {
  const TokenSequence x = seq(random_tensor({17, 4}, 3), 4, 4);
  const AtrResult corner = atr(x, {0});
  const auto mc = mean_of(x, {1, 4, 5});
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(corner.tokens.patch(0)[k], mc[k], 1e-6);
  const AtrResult edge = atr(x, {2});
  const auto me = mean_of(x, {1, 3, 5, 6, 7});
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(edge.tokens.patch(2)[k], me[k], 1e-6);
}

TEST(AtrTest, FlaggedNeighboursAreExcluded) {
  const TokenSequence x = seq(random_tensor({10, 3}, 4), 3, 3);
  const AtrResult r = atr(x, {4, 0, 1});
  const auto m = mean_of(x, {2, 3, 5, 6, 7, 8});
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(r.tokens.patch(4)[k], m[k], 1e-6);
  // Replacement uses original values, not already-replaced ones.
  const auto m0 = mean_of(x, {3});
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(r.tokens.patch(0)[k], m0[k], 1e-6);
}

TEST(AtrTest, FullyFlaggedNeighbourhoodLeavesTokenUnchanged) {
  const TokenSequence x = seq(random_tensor({5, 3}, 5), 2, 2);
  const AtrResult r = atr(x, {0, 1, 2, 3});
  EXPECT_EQ(r.tokens.tokens, x.tokens);
  EXPECT_EQ(r.unresolved, 4U);
}

TEST(AtrTest, SpikeInGaussianGrid) {
  Tensor t = random_tensor({197, 768}, 6);
  const std::size_t spike = 5 * 14 + 9;
  std::fill(t.row(spike + 1).begin(), t.row(spike + 1).end(), 0.0F);
  t.row(spike + 1)[3] = 50.0F;
  const TokenSequence x = seq(t, 14, 14);
  const auto hits = detect_abnormal(x, AbnormalCriterion::sparsity(0.5));
  ASSERT_EQ(hits, std::vector<std::size_t>{spike});
  const AtrResult r = atr(x, hits);
  const auto m = mean_of(x, {spike - 15, spike - 14, spike - 13, spike - 1, spike + 1,
                             spike + 13, spike + 14, spike + 15});
  for (std::size_t k = 0; k < 768; ++k) EXPECT_NEAR(r.tokens.patch(spike)[k], m[k], 1e-6);
}

TEST(AtrTest, OutOfGridPositionThrows) {
  const TokenSequence x = seq(random_tensor({5, 3}, 5), 2, 2);
  EXPECT_THROW(atr(x, {4}), ShapeError);
}

HeadFeature head_of(const Tensor& patches) {
  Tensor f({patches.rows() + 1, patches.cols()});
  for (std::size_t r = 0; r < patches.rows(); ++r)
    std::copy(patches.row(r).begin(), patches.row(r).end(), f.row(r + 1).begin());
  f.row(0)[0] = 1.0F;
  return {9, 4, f};
}

void expect_rows_sum_to_one(const Tensor& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double s = 0;
    for (float v : m.row(i)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
}

TEST(SheTest, IdenticalTokensGiveUniformMask) {
  Tensor p({6, 3});
  for (std::size_t r = 0; r < 6; ++r) p.at(r, 0) = p.at(r, 2) = 2.0F;
  const PseudoMask m = she_mask({head_of(p)}, 0.7);
  for (float v : m.matrix.values()) EXPECT_NEAR(v, 1.0 / 6, 1e-7);
}

TEST(SheTest, OrthogonalClustersGiveBlockMask) {
  const Tensor p = Tensor::matrix(5, 2, {1, 0, 2, 0, 0, 1, 0, 3, 0.5F, 0});
  const PseudoMask m = she_mask({head_of(p)}, 0.7);
  expect_rows_sum_to_one(m.matrix);
  const std::vector<int> cluster{0, 0, 1, 1, 0};
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      EXPECT_NEAR(m.matrix.at(i, j),
                  cluster[i] == cluster[j] ? (cluster[i] == 0 ? 1.0 / 3 : 0.5) : 0.0, 1e-7);

  // Applying it replaces each patch by its cluster mean.
  Tensor tok = random_tensor({6, 4}, 7);
  const TokenSequence x{tok, 1, 5, 11};
  const TokenSequence y = apply_she(x, m);
  const auto a = mean_of(x, {0, 1, 4});
  const auto b = mean_of(x, {2, 3});
  for (std::size_t p2 = 0; p2 < 5; ++p2)
    for (std::size_t k = 0; k < 4; ++k)
      EXPECT_NEAR(y.patch(p2)[k], (cluster[p2] == 0 ? a : b)[k], 1e-6);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(y.cls()[k], x.cls()[k]);
}

TEST(SheTest, HandSetCosines) {
  const double t2 = std::acos(0.9), t3 = -std::acos(0.5);
  const Tensor p = Tensor::matrix(4, 2, {1, 0, 3, 0, float(std::cos(t2)), float(std::sin(t2)),
                                         float(std::cos(t3)), float(std::sin(t3))});
  const PseudoMask m = she_mask({head_of(p)}, 0.7);
  const double raw[4][4] = {{1, 1, 0.9, 0}, {1, 1, 0.9, 0}, {0.9, 0.9, 1, 0}, {0, 0, 0, 1}};
  for (int i = 0; i < 4; ++i) {
    double s = 0;
    for (int j = 0; j < 4; ++j) s += raw[i][j];
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(m.matrix.at(i, j), raw[i][j] / s, 1e-6);
  }
}

TEST(SheTest, HighBetaIsIdentity) {
  const Tensor p = random_tensor({9, 6}, 8);
  const PseudoMask m = she_mask({head_of(p)}, 0.9999);
  const TokenSequence x{random_tensor({10, 6}, 9), 3, 3, 11};
  EXPECT_LE(max_abs_diff(apply_she(x, m).tokens, x.tokens), 1e-6);
}

TEST(SheTest, UniformMaskGivesGlobalMean) {
  Tensor p({4, 2});
  for (std::size_t r = 0; r < 4; ++r) p.at(r, 1) = 1.0F;
  const TokenSequence x{random_tensor({5, 3}, 10), 2, 2, 11};
  const TokenSequence y = apply_she(x, she_mask({head_of(p)}, 0.7));
  const auto g = mean_of(x, {0, 1, 2, 3});
  for (std::size_t q = 0; q < 4; ++q)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(y.patch(q)[k], g[k], 1e-6);
}

TEST(SheTest, MeanOverHeadsAndColumnNormalization) {
  const Tensor a = random_tensor({6, 4}, 11);
  const Tensor b = random_tensor({6, 4}, 12);
  Tensor avg({6, 4});
  for (std::size_t i = 0; i < avg.size(); ++i) avg[i] = (a[i] + b[i]) / 2;
  const PseudoMask two = she_mask({head_of(a), head_of(b)}, 0.3);
  const PseudoMask ref = she_mask({head_of(avg)}, 0.3);
  EXPECT_LE(max_abs_diff(two.matrix, ref.matrix), 1e-6);
  EXPECT_EQ(two.sources.size(), 2U);

  const PseudoMask col = she_mask({head_of(a)}, 0.3, MaskNormalization::columns);
  for (std::size_t j = 0; j < 6; ++j) {
    double s = 0;
    for (std::size_t i = 0; i < 6; ++i) s += col.matrix.at(i, j);
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
}

TEST(SheTest, RandomMasksAreRowStochastic) {
  for (std::uint64_t seed = 20; seed < 30; ++seed)
    expect_rows_sum_to_one(she_mask({head_of(random_tensor({16, 8}, seed))}, 0.2).matrix);
}

TEST(SsrRangeTest, AlphaZeroMatchesStandardStack) {
  const VitModel m = random_model(toy_config(5, 2, 16, 4, 16, 8), 13);
  const TokenSequence x0 = tokenize(testing::random_image(16, 16, 14), m);
  TokenSequence ref = x0;
  for (int l = 1; l <= 4; ++l) ref = layer_forward(ref, m, l);
  const TokenSequence got = ssr_range(x0, m, 0.0, 2, 4);
  EXPECT_EQ(got.layer, 4);
  EXPECT_LE(max_abs_diff(got.tokens, ref.tokens), 1e-6);
  EXPECT_THROW(ssr_range(x0, m, 0.1, 3, 5), ConfigError);
}

TEST(SsrRangeTest, ReweightsOnlyInsideTheRange) {
  const VitModel m = random_model(toy_config(5, 2, 16, 4, 16, 8), 15);
  const TokenSequence x0 = tokenize(testing::random_image(16, 16, 16), m);
  TokenSequence ref = x0;
  for (int l = 1; l <= 4; ++l)
    ref = layer_forward(ref, m, l, l == 3 ? LayerMode::reweighted(0.1F) : LayerMode::standard());
  EXPECT_EQ(ssr_range(x0, m, 0.1, 3, 3).tokens, ref.tokens);
}

TEST(DirectSkipTest, EmptyRangeAndManualComposition) {
  const VitModel m = random_model(toy_config(3, 2, 16, 4, 16, 8), 17);
  const TokenSequence x0 = tokenize(testing::random_image(16, 16, 18), m);
  TokenSequence full = x0;
  for (int l = 1; l <= 3; ++l) full = layer_forward(full, m, l);
  EXPECT_EQ(direct_skip(x0, m, 2, 2).tokens, full.tokens);
  const TokenSequence manual = layer_forward(layer_forward(x0, m, 1), m, 3);
  EXPECT_EQ(direct_skip(x0, m, 2, 3).tokens, manual.tokens);
  EXPECT_THROW(direct_skip(x0, m, 3, 2), ConfigError);
}

}  // namespace
}  // namespace lht

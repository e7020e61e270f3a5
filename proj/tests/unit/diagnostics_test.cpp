#include "lht/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "lht/error.hpp"
#include "toy_model.hpp"

namespace lht {
namespace {

using testing::random_model;
using testing::random_tensor;
using testing::toy_config;

TEST(HoyerTest, ClosedForms) {
  const std::vector<float> one_hot{0, 0, 1, 0};
  const std::vector<float> flat{1, -1, 1, -1};
  const std::vector<float> mixed{3, 1, 0, 0};
  EXPECT_NEAR(hoyer_score(one_hot), 1.0, 1e-7);
  EXPECT_NEAR(hoyer_score(flat), 0.0, 1e-7);
  EXPECT_NEAR(hoyer_score(mixed), 2.0 - 4.0 / 3.1622777, 1e-6);
  EXPECT_NEAR(hoyer_score(mixed), 0.7350889, 1e-6);
}

TEST(HoyerTest, EdgeCases) {
  const std::vector<float> zero{0, 0, 0};
  const std::vector<float> single{-2};
  EXPECT_THROW(hoyer_score(zero), NumericError);
  EXPECT_EQ(hoyer_score(single), 1.0);
}

TEST(HoyerTest, ScoresStayInUnitInterval) {
  const Tensor t = random_tensor({200, 13}, 3, 5.0F);
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const double h = hoyer_score(t.row(r));
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, 1.0);
  }
}

TEST(HoyerTest, GaussianTokensSitNearTheAnalyticMean) {
  const Tensor t = random_tensor({64, 768}, 4);
  double mean = 0;
  for (std::size_t r = 0; r < t.rows(); ++r) mean += hoyer_score(t.row(r));
  mean /= 64;
  const double root = std::sqrt(768.0);
  const double expected = (1.0 - std::sqrt(2.0 / M_PI)) * root / (root - 1.0);
  EXPECT_NEAR(mean, expected, 0.01);
  EXPECT_LT(mean, 0.5);
}

TokenSequence grid_of(const Tensor& patches, int gh, int gw) {
  Tensor tokens({patches.rows() + 1, patches.cols()});
  for (std::size_t r = 0; r < patches.rows(); ++r)
    std::copy(patches.row(r).begin(), patches.row(r).end(), tokens.row(r + 1).begin());
  std::fill(tokens.row(0).begin(), tokens.row(0).end(), 1.0F);
  return {tokens, gh, gw, 5};
}

TEST(DetectTest, UniformTokensAreNeverFlagged) {
  Tensor p({9, 8});
  for (auto& v : p.data()) v = 0.3F;
  EXPECT_TRUE(detect_abnormal(grid_of(p, 3, 3), AbnormalCriterion::sparsity(0.5)).empty());
}

TEST(DetectTest, PlantedOneHotIsTheOnlyHit) {
  Tensor p = random_tensor({196, 768}, 5);
  std::fill(p.row(77).begin(), p.row(77).end(), 0.0F);
  p.row(77)[10] = 40.0F;
  const auto hits = detect_abnormal(grid_of(p, 14, 14), AbnormalCriterion::sparsity(0.5));
  EXPECT_EQ(hits, std::vector<std::size_t>{77});
}

TEST(DetectTest, NormCriterion) {
  Tensor p({2, 4});
  p.row(0)[0] = 10.0F;
  p.row(1)[1] = 15.0F;
  EXPECT_EQ(detect_abnormal(grid_of(p, 1, 2), AbnormalCriterion::norm(14)),
            std::vector<std::size_t>{1});
}

TEST(DetectTest, InvalidThresholds) {
  const TokenSequence x = grid_of(random_tensor({4, 4}, 1), 2, 2);
  EXPECT_THROW(detect_abnormal(x, AbnormalCriterion::sparsity(1.5)), ConfigError);
  EXPECT_THROW(detect_abnormal(x, AbnormalCriterion::norm(-1)), ConfigError);
}

TEST(ReplaceStatsTest, DuplicatesAndOrthogonals) {
  Tensor p = random_tensor({4, 6}, 6);
  for (std::size_t r : {1U, 3U}) {
    std::fill(p.row(r).begin(), p.row(r).end(), 0.0F);
    p.row(r)[2] = 7.0F;
  }
  AbnormalObservation obs{0, 5, grid_of(p, 2, 2), {1, 3}};
  auto s = replace_stats({obs});
  ASSERT_TRUE(s.has_value());
  EXPECT_NEAR(s->mean_cosine, 1.0, 1e-7);
  EXPECT_EQ(s->pairs, 1U);

  p.row(3)[2] = 0.0F;
  p.row(3)[4] = 7.0F;
  obs.tokens = grid_of(p, 2, 2);
  s = replace_stats({obs});
  EXPECT_NEAR(s->mean_cosine, 0.0, 1e-7);
  // Pooled across observations.
  AbnormalObservation other{1, 6, grid_of(p, 2, 2), {1}};
  s = replace_stats({obs, other});
  EXPECT_EQ(s->tokens, 3U);
  EXPECT_EQ(s->pairs, 3U);
  EXPECT_NEAR(s->mean_cosine, 1.0 / 3.0, 1e-7);

  EXPECT_FALSE(replace_stats({AbnormalObservation{0, 5, grid_of(p, 2, 2), {1}}}).has_value());
}

TEST(AucTest, PerfectAndHandCases) {
  const std::vector<float> s{0.9F, 0.8F, 0.1F, 0.2F};
  const std::vector<bool> y{true, true, false, false};
  EXPECT_EQ(auc_rank(s, y), 1.0);
  // 6 scores, one tie across classes: pairs (pos,neg) = 3×3 = 9.
  const std::vector<float> t{0.9F, 0.5F, 0.3F, 0.5F, 0.2F, 0.1F};
  const std::vector<bool> z{true, true, true, false, false, false};
  // concordant: 0.9>all 3; 0.5>0.2,0.1 and ties 0.5; 0.3>0.2,0.1 → 7 + 0.5
  EXPECT_EQ(auc_brute_force(t, z), 7.5 / 9.0);
  EXPECT_EQ(auc_rank(t, z), 7.5 / 9.0);
  EXPECT_THROW(auc_rank(t, std::vector<bool>(6, true)), DataError);
}

TEST(AucTest, RankEqualsBruteForceExactly) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 49);
    std::vector<float> s(n);
    std::vector<bool> y(n);
    for (int i = 0; i < n; ++i) {
      s[i] = static_cast<float>(rng() % 7) / 7.0F;  // plenty of ties
      y[i] = rng() % 2;
    }
    y[0] = true;
    y[1] = false;
    EXPECT_EQ(auc_rank(s, y), auc_brute_force(s, y)) << "trial " << trial;
  }
}

PatchLabels labels_of(std::vector<std::int32_t> l, int gh, int gw) {
  return {gh, gw, std::move(l)};
}

TEST(DiscriminabilityTest, TwoClustersScoreOne) {
  const Tensor f = Tensor::matrix(4, 2, {1, 0, 1, 0.01F, 0, 1, 0.01F, 1});
  EXPECT_EQ(discriminability_auc(f, labels_of({0, 0, 1, 1}, 2, 2)), 1.0);
}

TEST(DiscriminabilityTest, PermutedLabelsAverageToHalf) {
  const Tensor f = random_tensor({36, 8}, 9);
  std::vector<std::int32_t> l(36);
  for (int i = 0; i < 36; ++i) l[i] = i % 3;
  std::mt19937_64 rng(10);
  double sum = 0;
  for (int k = 0; k < 200; ++k) {
    std::shuffle(l.begin(), l.end(), rng);
    sum += discriminability_auc(f, labels_of(l, 6, 6));
  }
  EXPECT_NEAR(sum / 200, 0.5, 0.02);
}

TEST(DiscriminabilityTest, IgnoredPatchesAndDegenerateLabels) {
  const Tensor f = Tensor::matrix(4, 2, {1, 0, 1, 0, 0, 1, 5, 5});
  EXPECT_EQ(discriminability_auc(f, labels_of({0, 0, 1, PatchLabels::kIgnore}, 2, 2)), 1.0);
  EXPECT_THROW(discriminability_auc(f, labels_of({0, 0, 0, 0}, 2, 2)), DataError);
}

TEST(DiscriminabilityTest, ZeroRowsCountAsCosineZero) {
  const Tensor f = Tensor::matrix(3, 2, {1, 0, 0, 0, 1, 0});
  const PairScores ps = pair_scores(f, labels_of({0, 1, 0}, 1, 3));
  EXPECT_EQ(ps.scores, (std::vector<float>{0.0F, 1.0F, 0.0F}));
}

TEST(PatchLabelsTest, MajorityWithLowestTieBreakAndIgnore) {
  ClassMap gt;
  gt.height = 2;
  gt.width = 6;
  gt.labels = {3, 1, 5, 5, 255, 255,
               1, 3, 5, 2, 255, 0};
  const PatchLabels p = patch_labels_from_pixels(gt, 2, 255);
  EXPECT_EQ(p.labels, (std::vector<std::int32_t>{1, 5, PatchLabels::kIgnore}));
  EXPECT_THROW(patch_labels_from_pixels(gt, 4, 255), DataError);
}

TEST(AlignmentTest, SelfMatchIsPerfect) {
  const VitModel m = random_model(toy_config(), 11);
  const TokenSequence x{random_tensor({17, 16}, 12), 4, 4, 2};
  const Tensor feats = project(final_layer_features(x, m, FinalVariant::identity), m);
  TextEmbeddings text;
  text.matrix = normalize_rows(feats);
  std::vector<std::int32_t> l(16);
  for (int i = 0; i < 16; ++i) {
    l[i] = i;
    text.class_names.push_back("c" + std::to_string(i));
  }
  EXPECT_EQ(alignment_accuracy(x, m, text, labels_of(l, 4, 4)), 1.0);
}

TEST(AlignmentTest, AntipodalClassesMatchSignOracle) {
  const VitModel m = random_model(toy_config(), 13);
  const TokenSequence x{random_tensor({17, 16}, 14), 4, 4, 2};
  const Tensor feats = project(final_layer_features(x, m, FinalVariant::identity), m);
  const Tensor t = normalize_rows(random_tensor({1, 8}, 15));
  TextEmbeddings text;
  text.class_names = {"pos", "neg"};
  text.matrix = Tensor({2, 8});
  for (std::size_t j = 0; j < 8; ++j) {
    text.matrix.at(0, j) = t[j];
    text.matrix.at(1, j) = -t[j];
  }
  std::vector<std::int32_t> l(16, 0);
  int correct = 0;
  for (std::size_t i = 0; i < 16; ++i) {
    double dot = 0;
    for (std::size_t j = 0; j < 8; ++j) dot += double(feats.at(i, j)) * t[j];
    if (i % 3 == 0) l[i] = 1;
    correct += (dot > 0) == (l[i] == 0);
  }
  EXPECT_DOUBLE_EQ(alignment_accuracy(x, m, text, labels_of(l, 4, 4)), correct / 16.0);
}

TEST(HeadRankingTest, CopyingHeadRanksFirst) {
  const VitModel m = testing::two_cluster_model();
  LabeledSample s{testing::two_cluster_image(),
                  patch_labels_from_pixels(testing::two_cluster_labels(), 4, 255), "toy"};
  const auto ranking = rank_heads({s}, m);
  ASSERT_EQ(ranking.size(), 4U);  // layers 1..2 × 2 heads
  EXPECT_EQ(ranking[0].id, (HeadId{1, 1}));
  EXPECT_EQ(ranking[0].mean_auc, 1.0);
  for (std::size_t i = 1; i < ranking.size(); ++i) EXPECT_EQ(ranking[i].mean_auc, 0.5);
  EXPECT_EQ(ranking[1].id, (HeadId{1, 2}));
  EXPECT_EQ(ranking[3].id, (HeadId{2, 2}));
}

TEST(HeadRankingTest, SizesAndDeterminism) {
  const VitModel one = random_model(toy_config(2, 1, 8, 4, 16, 4), 16);
  const LabeledSample s{testing::random_image(16, 16, 17),
                        labels_of({0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 1, 1, 2, 2, 0, 0}, 4, 4),
                        "a"};
  EXPECT_EQ(rank_heads({s}, one).size(), 1U);
  const VitModel two = random_model(toy_config(2, 2, 16, 4, 16, 8), 18);
  const auto r1 = rank_heads({s, s}, two);
  ASSERT_EQ(r1.size(), 2U);
  HeadRankingOptions opts;
  opts.threads = 3;
  const auto r2 = rank_heads({s, s}, two, opts);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(r1[i].id, r2[i].id);
    EXPECT_EQ(r1[i].mean_auc, r2[i].mean_auc);
  }
}

TEST(HeadRankingTest, DatasetMeansAreAveraged) {
  const HeadId a{1, 1}, b{1, 2};
  const auto out = aggregate_head_scores({{"voc", {{a, 0.9}, {b, 0.7}}},
                                          {"voc", {{a, 0.7}, {b, 0.7}}},
                                          {"ctx", {{a, 0.5}, {b, 0.8}}}});
  ASSERT_EQ(out.size(), 2U);
  EXPECT_EQ(out[0].id, b);
  EXPECT_DOUBLE_EQ(out[0].mean_auc, 0.75);
  EXPECT_DOUBLE_EQ(out[1].mean_auc, (0.8 + 0.5) / 2);
}

TEST(LayerAnalysisTest, TwoClusterModelScoresOneEverywhere) {
  const VitModel m = testing::two_cluster_model();
  LabeledSample s{testing::two_cluster_image(),
                  patch_labels_from_pixels(testing::two_cluster_labels(), 4, 255), "toy"};
  const auto rep = analyze_layers({s}, m, nullptr);
  ASSERT_EQ(rep.layer_auc.size(), 2U);
  for (double v : rep.layer_auc) EXPECT_EQ(v, 1.0);
  for (double v : rep.layer_auc_pooled) EXPECT_EQ(v, 1.0);
  EXPECT_TRUE(rep.layer_alignment.empty());
}

TEST(LayerAnalysisTest, TwoLayerModelHasOneRow) {
  const VitModel m = random_model(toy_config(2, 2, 16, 4, 16, 8), 19);
  const LabeledSample s{testing::random_image(16, 16, 20),
                        labels_of({0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1}, 4, 4),
                        "a"};
  const TextEmbeddings text = testing::random_text(2, 8, 21);
  const auto rep = analyze_layers({s}, m, &text);
  EXPECT_EQ(rep.layer_auc.size(), 1U);
  EXPECT_EQ(rep.layer_alignment.size(), 1U);
  const auto again = analyze_layers({s, s}, m, &text, 2);
  EXPECT_EQ(again.layer_auc, rep.layer_auc);
}

}  // namespace
}  // namespace lht

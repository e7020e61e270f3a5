#include "lht/parity.hpp"

#include <gtest/gtest.h>

#include "lht/error.hpp"
#include "toy_model.hpp"

namespace lht {
namespace {

TEST(ParityTest, SelfProbeMatchesExactly) {
  const VitModel m = testing::random_model(testing::toy_config(), 1);
  const Container probe = make_probe(m, testing::random_image(16, 16, 2));
  EXPECT_EQ(probe.tensors.size(), 1U + 4U + 1U);
  const ParityReport r = check_parity(m, probe);
  EXPECT_EQ(r.worst, 0.0);
  EXPECT_EQ(r.deviation.size(), 5U);
  EXPECT_TRUE(r.passed(1e-3));
}

TEST(ParityTest, WrongLayerNormEpsilonIsDetected) {
  VitModel m = testing::random_model(testing::toy_config(), 3);
  // Small activations make the epsilon matter.
  for (auto& lw : m.weights.layers) lw.ln1_gain = Tensor(lw.ln1_gain.shape(), std::vector<float>(16, 1.0F));
  m.weights.patch_weight = testing::random_tensor(m.weights.patch_weight.shape(), 4, 0.001F);
  m.weights.positional_embedding = testing::random_tensor(m.weights.positional_embedding.shape(), 5, 0.001F);
  const Container probe = make_probe(m, testing::random_image(16, 16, 6));
  VitModel wrong = m;
  wrong.config.ln_eps = 1e-2F;
  EXPECT_FALSE(check_parity(wrong, probe).passed(1e-3));
}

TEST(ParityTest, DeviationMeasure) {
  EXPECT_DOUBLE_EQ(max_relative_deviation(Tensor::vector({1, 2.5F}), Tensor::vector({1, 2})), 0.25);
  EXPECT_THROW(max_relative_deviation(Tensor::vector({1}), Tensor::vector({1, 2})), ShapeError);
  Container empty;
  empty.tensors.emplace("image", Tensor({16, 16, 3}));
  EXPECT_THROW(check_parity(testing::random_model(testing::toy_config(), 7), empty),
               ContainerError);
}

}  // namespace
}  // namespace lht

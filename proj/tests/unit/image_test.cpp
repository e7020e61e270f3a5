#include "lht/image.hpp"

#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "lht/container.hpp"
#include "lht/error.hpp"
#include "toy_model.hpp"

namespace lht {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const char* name) {
  const auto d = fs::temp_directory_path() / "lht_image_test";
  fs::create_directories(d);
  return d / name;
}

TEST(ResizeTest, SameSizeIsIdentity) {
  const Image img = testing::random_image(5, 7, 1);
  EXPECT_EQ(resize_bilinear(img, 5, 7).pixels, img.pixels);
}

TEST(ResizeTest, HalfPixelCentres) {
  // 1×2 → 1×4: samples at x = -0.25, 0.25, 0.75, 1.25 (clamped).
  const auto out = resize_bilinear({0.0F, 1.0F}, 1, 2, 1, 1, 4);
  EXPECT_FLOAT_EQ(out[0], 0.0F);
  EXPECT_FLOAT_EQ(out[1], 0.25F);
  EXPECT_FLOAT_EQ(out[2], 0.75F);
  EXPECT_FLOAT_EQ(out[3], 1.0F);
  const auto down = resize_bilinear({0.0F, 1.0F, 2.0F, 3.0F}, 1, 4, 1, 1, 2);
  EXPECT_FLOAT_EQ(down[0], 0.5F);
  EXPECT_FLOAT_EQ(down[1], 2.5F);
}

TEST(ResizeTest, NearestLabels) {
  ClassMap m;
  m.height = 2;
  m.width = 2;
  m.labels = {1, 2, 3, 4};
  const ClassMap up = resize_nearest(m, 4, 4);
  EXPECT_EQ(up.labels, (std::vector<std::int32_t>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}));
}

TEST(CropTest, Window) {
  const Image img = testing::random_image(6, 6, 2);
  const Image c = crop(img, 2, 3, 3, 2);
  EXPECT_EQ(c.height, 3);
  EXPECT_EQ(c.at(1, 1, 2), img.at(3, 4, 2));
  EXPECT_THROW(crop(img, 5, 0, 3, 3), ShapeError);
}

TEST(PngTest, ImageRoundTripIsEightBitExact) {
  Image img(3, 4);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = (i * 17 % 256) / 255.0F;
  save_image_png(scratch("rgb.png"), img);
  const Image r = load_image(scratch("rgb.png"));
  ASSERT_EQ(r.height, 3);
  ASSERT_EQ(r.width, 4);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(r.pixels[i], img.pixels[i], 1e-6);
}

TEST(PngTest, LabelRoundTripEightAndSixteenBit) {
  ClassMap m;
  m.height = 2;
  m.width = 3;
  m.labels = {0, 1, 2, 255, 7, 0};
  save_label_png(scratch("l8.png"), m);
  EXPECT_EQ(load_label_map(scratch("l8.png")).labels, m.labels);
  m.labels[4] = 1000;
  save_label_png(scratch("l16.png"), m);
  EXPECT_EQ(load_label_map(scratch("l16.png")).labels, m.labels);
}

TEST(PnmTest, BinaryPpmAndPgm) {
  {
    std::ofstream f(scratch("a.ppm"), std::ios::binary);
    f << "P6\n# c\n2 1\n255\n";
    const unsigned char px[6] = {255, 0, 0, 0, 0, 255};
    f.write(reinterpret_cast<const char*>(px), 6);
    std::ofstream g(scratch("a.pgm"), std::ios::binary);
    g << "P5 2 1 255\n";
    const unsigned char lb[2] = {3, 255};
    g.write(reinterpret_cast<const char*>(lb), 2);
  }
  const Image img = load_image(scratch("a.ppm"));
  EXPECT_EQ(img.at(0, 0, 0), 1.0F);
  EXPECT_EQ(img.at(0, 1, 2), 1.0F);
  EXPECT_EQ(load_label_map(scratch("a.pgm")).labels, (std::vector<std::int32_t>{3, 255}));
}

TEST(ContainerImageTest, ImageTensor) {
  Container c;
  c.tensors.emplace("image", Tensor({2, 2, 3}, std::vector<float>(12, 0.25F)));
  write_container(scratch("img.lhtw"), c);
  const Image img = load_image(scratch("img.lhtw"));
  EXPECT_EQ(img.height, 2);
  EXPECT_EQ(img.at(1, 1, 1), 0.25F);
}

TEST(LoadTest, MissingAndGarbageFilesAreDataErrors) {
  EXPECT_THROW(load_image(scratch("none.png")), DataError);
  {
    std::ofstream f(scratch("junk.png"));
    f << "not an image";
  }
  EXPECT_THROW(load_image(scratch("junk.png")), DataError);
}

}  // namespace
}  // namespace lht

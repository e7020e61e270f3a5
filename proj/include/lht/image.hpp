#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace lht {

/// Interleaved H×W×3 image with values in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, float fill = 0.0F);

  float& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  float at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

/// Per-pixel class indices. Also used for ground-truth maps, where values
/// may include an ignore index.
struct ClassMap {
  int height = 0;
  int width = 0;
  int classes = 0;  // 0 when unknown (e.g. raw ground truth)
  std::vector<std::int32_t> labels;

  std::int32_t at(int y, int x) const {
    return labels[static_cast<std::size_t>(y) * width + x];
  }
};

/// Bilinear resampling of an interleaved H×W×C float raster, using
/// half-pixel centres without antialiasing (align_corners = false).
std::vector<float> resize_bilinear(const std::vector<float>& src, int h, int w,
                                   int channels, int out_h, int out_w);

Image resize_bilinear(const Image& img, int out_h, int out_w);

/// Nearest-neighbour resampling for label rasters.
ClassMap resize_nearest(const ClassMap& map, int out_h, int out_w);

Image crop(const Image& img, int y, int x, int h, int w);

/// Reads PNG (8/16-bit gray, gray+alpha, RGB, RGBA, palette), binary
/// PPM/PGM, or an `.lhtw` container holding an `image` tensor [H,W,3].
Image load_image(const std::filesystem::path& path);

/// Reads a single-channel label raster: 8/16-bit gray or palette PNG
/// (palette indices are taken verbatim), or binary PGM.
ClassMap load_label_map(const std::filesystem::path& path);

/// Writes labels as 8-bit gray PNG, or 16-bit when any value exceeds 255.
void save_label_png(const std::filesystem::path& path, const ClassMap& map);

void save_image_png(const std::filesystem::path& path, const Image& img);

}  // namespace lht

#include "lht/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>

#include <png.h>

#include "lht/container.hpp"
#include "lht/error.hpp"

namespace lht {
namespace {

std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e;
}

// Raw decoded raster: interleaved samples normalised to [0, max].
struct Raster {
  int height = 0, width = 0, channels = 0;
  int max_value = 255;
  std::vector<std::uint16_t> samples;
};

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

Raster read_png(const std::filesystem::path& path, bool expand_palette) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError("cannot open image " + path.string());
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("libpng initialisation failed");
  }
  Raster r;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE && expand_palette) png_set_palette_to_rgb(png);
  if (depth < 8) {
    if (color == PNG_COLOR_TYPE_PALETTE && !expand_palette)
      png_set_packing(png);
    else if (color == PNG_COLOR_TYPE_GRAY)
      png_set_expand_gray_1_2_4_to_8(png);
    else
      png_set_packing(png);
  }
  if (png_get_valid(png, info, PNG_INFO_tRNS) && expand_palette)
    png_set_tRNS_to_alpha(png);
  if (depth == 16) png_set_swap(png);  // host order
  png_set_interlace_handling(png);
  png_read_update_info(png, info);
  r.width = static_cast<int>(png_get_image_width(png, info));
  r.height = static_cast<int>(png_get_image_height(png, info));
  r.channels = png_get_channels(png, info);
  depth = png_get_bit_depth(png, info);
  r.max_value = depth == 16 ? 65535 : 255;
  const auto rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * static_cast<std::size_t>(r.height));
  rows.resize(static_cast<std::size_t>(r.height));
  for (int y = 0; y < r.height; ++y)
    rows[static_cast<std::size_t>(y)] = buffer.data() + rowbytes * static_cast<std::size_t>(y);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t n = static_cast<std::size_t>(r.width) * r.height * r.channels;
  r.samples.resize(n);
  if (depth == 16) {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint16_t v;
      std::memcpy(&v, buffer.data() + 2 * i, 2);
      r.samples[i] = v;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) r.samples[i] = buffer[i];
  }
  return r;
}

int read_pnm_int(std::istream& in) {
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  int v = 0;
  bool any = false;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    any = true;
    c = in.get();
  }
  if (!any) throw DataError("malformed PNM header");
  return v;
}

Raster read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  char magic[2];
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
    throw DataError(path.string() + ": only binary P5/P6 PNM is supported");
  Raster r;
  r.channels = magic[1] == '6' ? 3 : 1;
  r.width = read_pnm_int(in);
  r.height = read_pnm_int(in);
  r.max_value = read_pnm_int(in);
  if (r.width <= 0 || r.height <= 0 || r.max_value <= 0 || r.max_value > 65535)
    throw DataError(path.string() + ": bad PNM dimensions");
  const std::size_t n = static_cast<std::size_t>(r.width) * r.height * r.channels;
  const int bytes = r.max_value > 255 ? 2 : 1;
  std::vector<unsigned char> raw(n * static_cast<std::size_t>(bytes));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw DataError(path.string() + ": truncated PNM payload");
  r.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    r.samples[i] = bytes == 2 ? static_cast<std::uint16_t>(raw[2 * i] << 8 | raw[2 * i + 1])
                              : raw[i];
  return r;
}

void write_png(const std::filesystem::path& path, int width, int height,
               int channels, int depth, const std::vector<unsigned char>& data) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw DataError("cannot write " + path.string());
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("failed writing PNG " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width),
               static_cast<png_uint_32>(height), depth,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  // No timestamps or text chunks: output bytes depend only on the pixels.
  png_write_info(png, info);
  const std::size_t rowbytes =
      static_cast<std::size_t>(width) * channels * (depth / 8);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(data.data() + rowbytes * static_cast<std::size_t>(y)));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Image::Image(int h, int w, float fill)
    : height(h), width(w),
      pixels(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * 3, fill) {}

std::vector<float> resize_bilinear(const std::vector<float>& src, int h, int w,
                                   int channels, int out_h, int out_w) {
  if (h <= 0 || w <= 0 || out_h <= 0 || out_w <= 0)
    throw ShapeError("resize_bilinear: extents must be positive");
  if (src.size() != static_cast<std::size_t>(h) * w * channels)
    throw ShapeError("resize_bilinear: raster size mismatch");
  std::vector<float> out(static_cast<std::size_t>(out_h) * out_w * channels);
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  struct Tap {
    int i0, i1;
    double f;
  };
  const auto taps = [](int n_out, int n_in, double scale) {
    std::vector<Tap> t(static_cast<std::size_t>(n_out));
    for (int o = 0; o < n_out; ++o) {
      double s = (o + 0.5) * scale - 0.5;
      if (s < 0) s = 0;
      int i0 = static_cast<int>(std::floor(s));
      if (i0 > n_in - 1) i0 = n_in - 1;
      const int i1 = std::min(i0 + 1, n_in - 1);
      t[static_cast<std::size_t>(o)] = {i0, i1, s - i0};
    }
    return t;
  };
  const auto ty = taps(out_h, h, sy);
  const auto tx = taps(out_w, w, sx);
  const auto px = [&](int y, int x, int c) {
    return static_cast<double>(src[(static_cast<std::size_t>(y) * w + x) * channels + c]);
  };
  for (int y = 0; y < out_h; ++y) {
    const Tap& a = ty[static_cast<std::size_t>(y)];
    for (int x = 0; x < out_w; ++x) {
      const Tap& b = tx[static_cast<std::size_t>(x)];
      float* o = &out[(static_cast<std::size_t>(y) * out_w + x) * channels];
      for (int c = 0; c < channels; ++c) {
        const double top = px(a.i0, b.i0, c) * (1 - b.f) + px(a.i0, b.i1, c) * b.f;
        const double bot = px(a.i1, b.i0, c) * (1 - b.f) + px(a.i1, b.i1, c) * b.f;
        o[c] = static_cast<float>(top * (1 - a.f) + bot * a.f);
      }
    }
  }
  return out;
}

Image resize_bilinear(const Image& img, int out_h, int out_w) {
  if (img.height == out_h && img.width == out_w) return img;
  Image out;
  out.height = out_h;
  out.width = out_w;
  out.pixels = resize_bilinear(img.pixels, img.height, img.width, 3, out_h, out_w);
  return out;
}

ClassMap resize_nearest(const ClassMap& map, int out_h, int out_w) {
  ClassMap out;
  out.height = out_h;
  out.width = out_w;
  out.classes = map.classes;
  out.labels.resize(static_cast<std::size_t>(out_h) * out_w);
  for (int y = 0; y < out_h; ++y) {
    const int sy = std::min(map.height - 1, static_cast<int>(std::floor(
        (y + 0.5) * map.height / static_cast<double>(out_h))));
    for (int x = 0; x < out_w; ++x) {
      const int sx = std::min(map.width - 1, static_cast<int>(std::floor(
          (x + 0.5) * map.width / static_cast<double>(out_w))));
      out.labels[static_cast<std::size_t>(y) * out_w + x] = map.at(sy, sx);
    }
  }
  return out;
}

Image crop(const Image& img, int y, int x, int h, int w) {
  if (y < 0 || x < 0 || y + h > img.height || x + w > img.width || h <= 0 || w <= 0)
    throw ShapeError("crop window outside the image");
  Image out(h, w);
  for (int r = 0; r < h; ++r) {
    const auto* src = &img.pixels[(static_cast<std::size_t>(y + r) * img.width + x) * 3];
    std::copy(src, src + static_cast<std::ptrdiff_t>(w) * 3,
              &out.pixels[static_cast<std::size_t>(r) * w * 3]);
  }
  return out;
}

Image load_image(const std::filesystem::path& path) {
  const auto ext = lower_ext(path);
  if (ext == ".lhtw") {
    const auto c = read_container(path);
    const Tensor& t = c.get("image");
    if (t.rank() != 3 || t.shape()[2] != 3)
      throw DataError(path.string() + ": image tensor must be [H,W,3]");
    Image img;
    img.height = static_cast<int>(t.shape()[0]);
    img.width = static_cast<int>(t.shape()[1]);
    img.pixels = t.values();
    return img;
  }
  Raster r;
  if (ext == ".png")
    r = read_png(path, true);
  else if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm")
    r = read_pnm(path);
  else
    throw DataError("unsupported image format: " + path.string());
  Image img(r.height, r.width);
  const float scale = 1.0F / static_cast<float>(r.max_value);
  for (std::size_t p = 0; p < static_cast<std::size_t>(r.height) * r.width; ++p) {
    const auto* s = &r.samples[p * static_cast<std::size_t>(r.channels)];
    for (int c = 0; c < 3; ++c) {
      // gray and gray+alpha replicate the first sample; alpha is dropped.
      const int src_c = r.channels >= 3 ? c : 0;
      img.pixels[p * 3 + static_cast<std::size_t>(c)] = s[src_c] * scale;
    }
  }
  return img;
}

ClassMap load_label_map(const std::filesystem::path& path) {
  const auto ext = lower_ext(path);
  Raster r;
  if (ext == ".png")
    r = read_png(path, false);
  else if (ext == ".pgm" || ext == ".pnm")
    r = read_pnm(path);
  else
    throw DataError("unsupported label format: " + path.string());
  if (r.channels != 1)
    throw DataError(path.string() + ": label maps must be single-channel");
  ClassMap m;
  m.height = r.height;
  m.width = r.width;
  m.labels.assign(r.samples.begin(), r.samples.end());
  return m;
}

void save_label_png(const std::filesystem::path& path, const ClassMap& map) {
  const bool wide = std::any_of(map.labels.begin(), map.labels.end(),
                                [](std::int32_t v) { return v > 255; });
  for (auto v : map.labels)
    if (v < 0 || v > 65535)
      throw DataError("label value out of PNG range: " + std::to_string(v));
  std::vector<unsigned char> data;
  data.reserve(map.labels.size() * (wide ? 2 : 1));
  for (auto v : map.labels) {
    if (wide) data.push_back(static_cast<unsigned char>(v >> 8));
    data.push_back(static_cast<unsigned char>(v & 0xFF));
  }
  write_png(path, map.width, map.height, 1, wide ? 16 : 8, data);
}

void save_image_png(const std::filesystem::path& path, const Image& img) {
  std::vector<unsigned char> data(img.pixels.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    data[i] = static_cast<unsigned char>(
        std::lround(std::clamp(img.pixels[i], 0.0F, 1.0F) * 255.0F));
  write_png(path, img.width, img.height, 3, 8, data);
}

}  // namespace lht

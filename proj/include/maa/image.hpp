#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "maa/errors.hpp"
#include "maa/tensor.hpp"

namespace maa {

// H x W x 3 image with interleaved RGB values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, float fill = 0.0f) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

  float& operator()(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float operator()(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  friend bool operator==(const Image& a, const Image& b) {
    return a.height == b.height && a.width == b.width && a.pixels == b.pixels;
  }
};

// Quantizes to 8 bits per channel, the precision images have on disk.
inline Image quantize8(const Image& img) {
  Image out = img;
  for (auto& v : out.pixels) v = std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f;
  return out;
}

template <typename T>
Tensor<T> images_to_tensor(const std::vector<Image>& imgs) {
  require(!imgs.empty(), "images_to_tensor: empty batch");
  const int h = imgs[0].height, w = imgs[0].width;
  Tensor<T> t({static_cast<int>(imgs.size()), 3, h, w});
  for (std::size_t n = 0; n < imgs.size(); ++n) {
    require(imgs[n].height == h && imgs[n].width == w, "images_to_tensor: images differ in size");
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) t.at(static_cast<int>(n), c, y, x) = static_cast<T>(imgs[n](y, x, c));
  }
  return t;
}

template <typename T>
std::vector<Image> tensor_to_images(const Tensor<T>& t) {
  require(t.rank() == 4 && t.dim(1) == 3, "tensor_to_images: expected (N, 3, H, W)");
  std::vector<Image> out;
  for (int n = 0; n < t.dim(0); ++n) {
    Image img(t.dim(2), t.dim(3));
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) img(y, x, c) = static_cast<float>(t.at(n, c, y, x));
    out.push_back(std::move(img));
  }
  return out;
}

namespace detail {
struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace detail

// Writes an 8-bit RGB PNG through a temporary file and rename, so readers never
// see a partial file.
inline void write_png(const std::filesystem::path& path, const Image& img) {
  const auto tmp = path.string() + ".tmp";
  {
    detail::FilePtr fp(std::fopen(tmp.c_str(), "wb"));
    if (!fp) throw IoError("cannot open for writing: " + tmp);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
      png_destroy_write_struct(&png, &info);
      throw IoError("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      throw IoError("libpng failed writing " + tmp);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    std::vector<png_byte> row(static_cast<std::size_t>(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width * 3; ++x)
        row[static_cast<std::size_t>(x)] = static_cast<png_byte>(
            std::lround(std::clamp(img.pixels[static_cast<std::size_t>(y) * img.width * 3 + x], 0.0f, 1.0f) * 255.0f));
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp + " to " + path.string() + ": " + ec.message());
}

inline Image read_png(const std::filesystem::path& path) {
  detail::FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw IoError("cannot open image: " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("not a readable PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const png_byte color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  Image img(h, w);
  std::vector<png_byte> row(png_get_rowbytes(png, info));
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w * 3; ++x)
      img.pixels[static_cast<std::size_t>(y) * w * 3 + x] = static_cast<float>(row[static_cast<std::size_t>(x)]) / 255.0f;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

}  // namespace maa

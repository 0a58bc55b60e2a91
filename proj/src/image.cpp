// SPDX-License-Identifier: Apache-2.0
#include "ttslam/image.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace ttslam {

Image::Image(int w, int h, const Vec3& fill) : width(w), height(h) {
  data.resize(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i < data.size(); i += 3) {
    data[i] = fill.x();
    data[i + 1] = fill.y();
    data[i + 2] = fill.z();
  }
}

std::optional<BilinearSample> sample_bilinear(const Image& image, const Vec2& pixel) {
  const double x = pixel.x();
  const double y = pixel.y();
  if (!(x >= 0.0 && y >= 0.0 && x <= image.width - 1 && y <= image.height - 1)) return std::nullopt;
  const int x0 = std::min(static_cast<int>(x), image.width - 2);
  const int y0 = std::min(static_cast<int>(y), image.height - 2);
  const double fx = x - x0;
  const double fy = y - y0;
  const Vec3 c00 = image.at(x0, y0);
  const Vec3 c10 = image.at(x0 + 1, y0);
  const Vec3 c01 = image.at(x0, y0 + 1);
  const Vec3 c11 = image.at(x0 + 1, y0 + 1);
  BilinearSample s;
  s.color = (1 - fx) * (1 - fy) * c00 + fx * (1 - fy) * c10 + (1 - fx) * fy * c01 + fx * fy * c11;
  s.jacobian.col(0) = (1 - fy) * (c10 - c00) + fy * (c11 - c01);
  s.jacobian.col(1) = (1 - fx) * (c01 - c00) + fx * (c11 - c10);
  return s;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_png(const std::filesystem::path& path, const Image& image) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw std::runtime_error("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng initialization failed");
  }
  std::vector<png_byte> row(static_cast<std::size_t>(image.width) * 3);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("failed to write " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width * 3; ++x) {
      const double v = image.data[static_cast<std::size_t>(y) * image.width * 3 + static_cast<std::size_t>(x)];
      row[static_cast<std::size_t>(x)] = static_cast<png_byte>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw std::runtime_error("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng initialization failed");
  }
  Image image;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("failed to decode " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const png_byte color_type = png_get_color_type(png, info);
  const png_byte bit_depth = png_get_bit_depth(png, info);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  image.width = static_cast<int>(png_get_image_width(png, info));
  image.height = static_cast<int>(png_get_image_height(png, info));
  image.data.resize(static_cast<std::size_t>(image.width) * image.height * 3);
  std::vector<png_byte> row(png_get_rowbytes(png, info));
  for (int y = 0; y < image.height; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < image.width * 3; ++x) {
      image.data[static_cast<std::size_t>(y) * image.width * 3 + static_cast<std::size_t>(x)] =
          row[static_cast<std::size_t>(x)] / 255.0;
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

void write_depth(const std::filesystem::path& path, const DepthMap& depth) {
  static_assert(std::endian::native == std::endian::little, "depth files are little-endian");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(depth.data.data()),
           static_cast<std::streamsize>(depth.data.size() * sizeof(float)));
  if (!os) throw std::runtime_error("failed to write " + path.string());
}

DepthMap read_depth(const std::filesystem::path& path, int width, int height) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  DepthMap d;
  d.width = width;
  d.height = height;
  d.data.resize(static_cast<std::size_t>(width) * height);
  is.read(reinterpret_cast<char*>(d.data.data()), static_cast<std::streamsize>(d.data.size() * sizeof(float)));
  if (is.gcount() != static_cast<std::streamsize>(d.data.size() * sizeof(float))) {
    throw std::runtime_error("depth file " + path.string() + " is truncated");
  }
  return d;
}

}  // namespace ttslam

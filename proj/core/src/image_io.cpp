#include "esc/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>

#include "esc/error.hpp"

namespace esc::io {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void png_warn(png_structp, png_const_charp) {}

}  // namespace

void write_png(const std::filesystem::path& path, const Image8& img) {
  if (img.channels != 1 && img.channels != 3) throw InputError("write_png: 1 or 3 channels supported");
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * img.channels) {
    throw InputError("write_png: pixel buffer size mismatch");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr f(std::fopen(path.string().c_str(), "wb"));
  if (!f) throw InputError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warn);
  png_infop info = png_create_info_struct(png);
  const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("png: failed writing " + path.string());
  }
  {
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y) {
      png_write_row(png, const_cast<png_bytep>(img.pixels.data() + y * stride));
    }
    png_write_end(png, nullptr);
  }
  png_destroy_write_struct(&png, &info);
}

Image8 read_png(const std::filesystem::path& path) {
  FilePtr f(std::fopen(path.string().c_str(), "rb"));
  if (!f) throw InputError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warn);
  png_infop info = png_create_info_struct(png);
  Image8 img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("png: failed reading " + path.string());
  }
  {
    png_init_io(png, f.get());
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.channels = png_get_channels(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    img.pixels.resize(stride * img.height);
    for (int y = 0; y < img.height; ++y) png_read_row(png, img.pixels.data() + y * stride, nullptr);
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

Image8 to_image8(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.channels() != 3) throw InputError("to_image8 expects {3,H,W}");
  Image8 img{rgb.width(), rgb.height(), 3, {}};
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(rgb.at(c, y, x), 0.0, 1.0);
        img.pixels[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] =
            static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  return img;
}

Tensor from_image8(const Image8& img) {
  Tensor t({3, img.height, img.width});
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const int src = img.channels == 1 ? 0 : c;
        t.at(c, y, x) = img.pixels[(static_cast<std::size_t>(y) * img.width + x) * img.channels + src] / 255.0;
      }
    }
  }
  return t;
}

}  // namespace esc::io

#include "uniwetok/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "uniwetok/errors.hpp"

namespace uniwetok {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void on_png_error(png_structp png, png_const_charp message) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  if (text) *text = message;
  png_longjmp(png, 1);
}

void on_png_warning(png_structp, png_const_charp) {}

}  // namespace

torch::Tensor read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw DataError("cannot open image " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw DataError("not a PNG file: " + path.string());
  }
  std::string message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, on_png_error,
                                           on_png_warning);
  if (!png) throw DataError("libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("libpng initialization failed");
  }

  std::vector<uint8_t> rgb;
  std::vector<png_bytep> rows;
  png_uint_32 width = 0, height = 0;
  // No objects with destructors may be created between setjmp and the reads.
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG " + path.string() + ": " + message);
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  if (png_get_rowbytes(png, info) != width * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("unsupported PNG layout in " + path.string());
  }
  rgb.resize(static_cast<size_t>(width) * height * 3);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = rgb.data() + static_cast<size_t>(y) * width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return from_pixels(rgb, height, width);
}

std::vector<uint8_t> to_pixels(const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(2) != 3) throw ValidationError("expected an [H, W, 3] image");
  auto q = ((image.detach().to(torch::kFloat64) + 1.0) * 127.5).round().clamp(0.0, 255.0);
  q = q.to(torch::kUInt8).contiguous();
  const auto* p = q.data_ptr<uint8_t>();
  return std::vector<uint8_t>(p, p + q.numel());
}

torch::Tensor from_pixels(const std::vector<uint8_t>& rgb, int64_t height, int64_t width) {
  if (static_cast<int64_t>(rgb.size()) != height * width * 3) {
    throw ValidationError("pixel buffer size does not match image dimensions");
  }
  auto bytes = torch::from_blob(const_cast<uint8_t*>(rgb.data()), {height, width, 3}, torch::kUInt8);
  return bytes.to(torch::kFloat32) / 127.5 - 1.0;
}

void write_png(const std::filesystem::path& path, const torch::Tensor& image) {
  auto rgb = to_pixels(image);
  const auto height = static_cast<png_uint_32>(image.size(0));
  const auto width = static_cast<png_uint_32>(image.size(1));
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot write image " + path.string());
  std::string message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, on_png_error,
                                            on_png_warning);
  if (!png) throw IoError("libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = rgb.data() + static_cast<size_t>(y) * width * 3;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing PNG " + path.string() + ": " + message);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace uniwetok

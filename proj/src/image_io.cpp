#include "paintlapse/image_io.hpp"

#include <cmath>
#include <cstdio>
#include <memory>

#include <png.h>

namespace paintlapse {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

struct RawImage {
  uint32_t width = 0;
  uint32_t height = 0;
  int channels = 0;
  std::vector<uint8_t> pixels;
};

void write_raw(const std::filesystem::path& path, const RawImage& img) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw ImageIOError("cannot open '" + path.string() + "' for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw ImageIOError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageIOError("failed to encode '" + path.string() + "'");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width, img.height, 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const size_t stride = static_cast<size_t>(img.width) * img.channels;
  for (uint32_t y = 0; y < img.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + y * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

RawImage read_raw(const std::filesystem::path& path, bool want_gray) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw ImageIOError("cannot open '" + path.string() + "'");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw ImageIOError("'" + path.string() + "' is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageIOError("libpng initialisation failed");
  }
  RawImage img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageIOError("corrupt PNG '" + path.string() + "'");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (png_get_valid(png, info, PNG_INFO_tRNS) || (color & PNG_COLOR_MASK_ALPHA)) {
    png_set_strip_alpha(png);
  }
  const bool is_gray = (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA);
  if (!want_gray && is_gray) png_set_gray_to_rgb(png);
  if (want_gray && !is_gray) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageIOError("'" + path.string() + "' is not a single-channel label image");
  }
  png_read_update_info(png, info);

  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.channels = png_get_channels(png, info);
  const size_t stride = png_get_rowbytes(png, info);
  img.pixels.resize(stride * img.height);
  rows.resize(img.height);
  for (uint32_t y = 0; y < img.height; ++y) rows[y] = img.pixels.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

}  // namespace

Frame read_png(const std::filesystem::path& path) {
  RawImage img = read_raw(path, /*want_gray=*/false);
  auto hwc = torch::from_blob(img.pixels.data(),
                              {static_cast<int64_t>(img.height), static_cast<int64_t>(img.width),
                               static_cast<int64_t>(img.channels)},
                              torch::kUInt8)
                 .to(torch::kFloat32)
                 .div_(255.0f);
  return Frame(hwc.permute({2, 0, 1}).contiguous());
}

void write_png(const std::filesystem::path& path, const Frame& frame) {
  auto hwc = frame.tensor()
                 .mul(255.0f)
                 .round()
                 .clamp(0.0, 255.0)
                 .to(torch::kUInt8)
                 .permute({1, 2, 0})
                 .contiguous();
  RawImage img;
  img.height = static_cast<uint32_t>(frame.height());
  img.width = static_cast<uint32_t>(frame.width());
  img.channels = 3;
  const auto* p = hwc.data_ptr<uint8_t>();
  img.pixels.assign(p, p + hwc.numel());
  write_raw(path, img);
}

void write_label_png(const std::filesystem::path& path, const LabelImage& image) {
  if (image.labels.size() != static_cast<size_t>(image.height * image.width)) {
    throw std::invalid_argument("write_label_png: label buffer does not match dimensions");
  }
  RawImage img;
  img.height = static_cast<uint32_t>(image.height);
  img.width = static_cast<uint32_t>(image.width);
  img.channels = 1;
  img.pixels = image.labels;
  write_raw(path, img);
}

LabelImage read_label_png(const std::filesystem::path& path) {
  RawImage img = read_raw(path, /*want_gray=*/true);
  LabelImage out;
  out.height = img.height;
  out.width = img.width;
  out.labels = std::move(img.pixels);
  return out;
}

}  // namespace paintlapse

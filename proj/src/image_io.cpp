#include "pm/image_io.hpp"

#include <png.h>

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "float binary io assumes a little-endian host");

namespace pm {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw std::runtime_error(path + ": " + what);
}

uint16_t quantize(float v, float scale, float cap) {
  const float x = std::lround(std::fmin(std::fmax(v * scale, 0.0f), cap));
  return static_cast<uint16_t>(x);
}

void write_png(const std::string& path, long h, long w, int color_type, int bit_depth,
               const std::vector<png_bytep>& rows, bool swap16) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) fail(path, "cannot open for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(path, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(path, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(path, "png write error");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), bit_depth,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (swap16) png_set_swap(png);  // rows hold native little-endian 16-bit samples
  png_write_image(png, const_cast<png_bytep*>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct PngImage {
  long h = 0, w = 0;
  long channels = 0;      // after transforms
  long bytes_per_sample = 1;
  std::vector<png_byte> bytes;  // row-major, packed
};

PngImage read_png(const std::string& path, bool want_rgb8) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) fail(path, "cannot open");
  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
    fail(path, "not a png file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(path, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(path, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(path, "png read error");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (want_rgb8) {
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (depth == 16) png_set_strip_16(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
      png_set_gray_to_rgb(png);
  } else {
    if (color != PNG_COLOR_TYPE_GRAY || depth != 16) {
      png_destroy_read_struct(&png, &info, nullptr);
      fail(path, "expected 16-bit grayscale depth png");
    }
    png_set_swap(png);  // stored big-endian on disk
  }
  png_read_update_info(png, info);

  PngImage img;
  img.h = png_get_image_height(png, info);
  img.w = png_get_image_width(png, info);
  img.channels = png_get_channels(png, info);
  img.bytes_per_sample = png_get_bit_depth(png, info) / 8;
  const size_t stride = png_get_rowbytes(png, info);
  img.bytes.resize(stride * static_cast<size_t>(img.h));
  std::vector<png_bytep> rows(static_cast<size_t>(img.h));
  for (long y = 0; y < img.h; ++y) rows[static_cast<size_t>(y)] = img.bytes.data() + stride * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

}  // namespace

void write_rgb_png(const std::string& path, const Tensor<float>& chw) {
  if (chw.shape().size() != 3 || chw.dim(0) != 3)
    throw std::invalid_argument("write_rgb_png: want (3,H,W)");
  const long h = chw.dim(1), w = chw.dim(2);
  std::vector<png_byte> buf(static_cast<size_t>(h * w * 3));
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      for (long c = 0; c < 3; ++c)
        buf[static_cast<size_t>((y * w + x) * 3 + c)] =
            static_cast<png_byte>(quantize(chw.at(c, y, x), 255.0f, 255.0f));
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (long y = 0; y < h; ++y) rows[static_cast<size_t>(y)] = buf.data() + y * w * 3;
  write_png(path, h, w, PNG_COLOR_TYPE_RGB, 8, rows, false);
}

Tensor<float> read_rgb_png(const std::string& path) {
  PngImage img = read_png(path, true);
  if (img.channels != 3 || img.bytes_per_sample != 1) fail(path, "could not decode as 8-bit RGB");
  Tensor<float> out({3, img.h, img.w});
  for (long y = 0; y < img.h; ++y)
    for (long x = 0; x < img.w; ++x)
      for (long c = 0; c < 3; ++c)
        out.at(c, y, x) =
            static_cast<float>(img.bytes[static_cast<size_t>((y * img.w + x) * 3 + c)]) / 255.0f;
  return out;
}

void write_depth_png16(const std::string& path, const Tensor<float>& depth_m) {
  if (depth_m.shape().size() != 3 || depth_m.dim(0) != 1)
    throw std::invalid_argument("write_depth_png16: want (1,H,W)");
  const long h = depth_m.dim(1), w = depth_m.dim(2);
  std::vector<uint16_t> buf(static_cast<size_t>(h * w));
  for (long i = 0; i < h * w; ++i) buf[static_cast<size_t>(i)] = quantize(depth_m[i], 1000.0f, 65535.0f);
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (long y = 0; y < h; ++y)
    rows[static_cast<size_t>(y)] = reinterpret_cast<png_bytep>(buf.data() + y * w);
  write_png(path, h, w, PNG_COLOR_TYPE_GRAY, 16, rows, true);
}

Tensor<float> read_depth_png16(const std::string& path) {
  PngImage img = read_png(path, false);
  if (img.channels != 1 || img.bytes_per_sample != 2) fail(path, "could not decode as 16-bit gray");
  Tensor<float> out({1, img.h, img.w});
  const uint16_t* px = reinterpret_cast<const uint16_t*>(img.bytes.data());
  for (long i = 0; i < img.h * img.w; ++i) out[i] = static_cast<float>(px[i]) / 1000.0f;
  return out;
}

void write_float_bin(const std::string& path, const Tensor<float>& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(path, "cannot open for writing");
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!out) fail(path, "write failed");
}

Tensor<float> read_float_bin(const std::string& path, const Shape& shape) {
  Tensor<float> t(shape);
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!in) fail(path, "truncated float array");
  char extra;
  if (in.read(&extra, 1)) fail(path, "size does not match the expected shape");
  return t;
}

}  // namespace pm

#pragma once

#include <png.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "hyperfield/common.hpp"

namespace hyperfield {

// Row-major float image in [0,1]; channels is 1 or 3.
struct Image {
  int width = 0, height = 0, channels = 3;
  std::vector<float> data;

  float& at(int x, int y, int c) { return data[size_t((y * width + x) * channels + c)]; }
  float at(int x, int y, int c) const { return data[size_t((y * width + x) * channels + c)]; }
  size_t pixel_count() const { return size_t(width) * size_t(height); }

  static Image zeros(int w, int h, int c = 3) {
    Image im;
    im.width = w;
    im.height = h;
    im.channels = c;
    im.data.assign(size_t(w) * h * c, 0.f);
    return im;
  }
};

inline uint8_t to_byte(float v) {
  float c = clamp01(v);
  return uint8_t(c * 255.f + 0.5f);
}

namespace detail {

struct PngWriteCtx {
  FILE* fp = nullptr;
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriteCtx() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    if (fp) std::fclose(fp);
  }
};

struct PngReadCtx {
  FILE* fp = nullptr;
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReadCtx() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    if (fp) std::fclose(fp);
  }
};

}  // namespace detail

inline void write_png_rgb8(const std::string& path, const Image& im) {
  if (im.channels != 3) throw IoError("write_png_rgb8: expected 3 channels");
  detail::PngWriteCtx ctx;
  ctx.fp = std::fopen(path.c_str(), "wb");
  if (!ctx.fp) throw IoError("cannot open for writing: " + path);
  ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  ctx.info = png_create_info_struct(ctx.png);
  if (setjmp(png_jmpbuf(ctx.png))) throw IoError("png write failed: " + path);
  png_init_io(ctx.png, ctx.fp);
  png_set_IHDR(ctx.png, ctx.info, png_uint_32(im.width), png_uint_32(im.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(ctx.png, ctx.info);
  std::vector<uint8_t> row(size_t(im.width) * 3);
  for (int y = 0; y < im.height; ++y) {
    for (int x = 0; x < im.width; ++x)
      for (int c = 0; c < 3; ++c) row[size_t(x * 3 + c)] = to_byte(im.at(x, y, c));
    png_write_row(ctx.png, row.data());
  }
  png_write_end(ctx.png, nullptr);
}

inline void write_png_gray16(const std::string& path, int width, int height,
                             const std::vector<uint16_t>& values) {
  if (values.size() != size_t(width) * size_t(height))
    throw IoError("write_png_gray16: size mismatch");
  detail::PngWriteCtx ctx;
  ctx.fp = std::fopen(path.c_str(), "wb");
  if (!ctx.fp) throw IoError("cannot open for writing: " + path);
  ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  ctx.info = png_create_info_struct(ctx.png);
  if (setjmp(png_jmpbuf(ctx.png))) throw IoError("png write failed: " + path);
  png_init_io(ctx.png, ctx.fp);
  png_set_IHDR(ctx.png, ctx.info, png_uint_32(width), png_uint_32(height), 16,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(ctx.png, ctx.info);
  png_set_swap(ctx.png);  // host is little-endian
  for (int y = 0; y < height; ++y)
    png_write_row(ctx.png,
                  reinterpret_cast<png_const_bytep>(values.data() + size_t(y) * width));
  png_write_end(ctx.png, nullptr);
}

inline Image read_png(const std::string& path) {
  detail::PngReadCtx ctx;
  ctx.fp = std::fopen(path.c_str(), "rb");
  if (!ctx.fp) throw IoError("cannot open image: " + path);
  ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  ctx.info = png_create_info_struct(ctx.png);
  if (setjmp(png_jmpbuf(ctx.png))) throw IoError("png read failed: " + path);
  png_init_io(ctx.png, ctx.fp);
  png_read_info(ctx.png, ctx.info);
  png_uint_32 w, h;
  int bit_depth, color_type;
  png_get_IHDR(ctx.png, ctx.info, &w, &h, &bit_depth, &color_type, nullptr, nullptr, nullptr);

  bool gray16 = (color_type == PNG_COLOR_TYPE_GRAY && bit_depth == 16);
  if (!gray16) {
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(ctx.png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
      png_set_gray_to_rgb(ctx.png);
    if (png_get_valid(ctx.png, ctx.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(ctx.png);
    if (bit_depth == 16) png_set_strip_16(ctx.png);
    png_set_strip_alpha(ctx.png);
  } else {
    png_set_swap(ctx.png);
  }
  png_read_update_info(ctx.png, ctx.info);

  Image im;
  im.width = int(w);
  im.height = int(h);
  im.channels = gray16 ? 1 : 3;
  im.data.resize(size_t(w) * h * im.channels);
  if (gray16) {
    std::vector<uint16_t> row(w);
    for (png_uint_32 y = 0; y < h; ++y) {
      png_read_row(ctx.png, reinterpret_cast<png_bytep>(row.data()), nullptr);
      for (png_uint_32 x = 0; x < w; ++x)
        im.data[size_t(y * w + x)] = float(row[x]) / 65535.f;
    }
  } else {
    std::vector<uint8_t> row(size_t(w) * 3);
    for (png_uint_32 y = 0; y < h; ++y) {
      png_read_row(ctx.png, row.data(), nullptr);
      for (size_t i = 0; i < row.size(); ++i)
        im.data[size_t(y) * w * 3 + i] = float(row[i]) / 255.f;
    }
  }
  return im;
}

// P6 fallback when PNG output is not wanted.
inline void write_ppm(const std::string& path, const Image& im) {
  if (im.channels != 3) throw IoError("write_ppm: expected 3 channels");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "P6\n" << im.width << " " << im.height << "\n255\n";
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x)
      for (int c = 0; c < 3; ++c) {
        uint8_t b = to_byte(im.at(x, y, c));
        os.write(reinterpret_cast<const char*>(&b), 1);
      }
  if (!os) throw IoError("ppm write failed: " + path);
}

inline Image read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open image: " + path);
  std::string magic;
  int w, h, maxv;
  is >> magic >> w >> h >> maxv;
  if (magic != "P6" || maxv != 255) throw IoError("unsupported ppm: " + path);
  is.get();  // single whitespace after header
  Image im = Image::zeros(w, h);
  std::vector<uint8_t> buf(size_t(w) * h * 3);
  is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
  if (!is) throw IoError("truncated ppm: " + path);
  for (size_t i = 0; i < buf.size(); ++i) im.data[i] = float(buf[i]) / 255.f;
  return im;
}

inline Image read_image(const std::string& path) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".ppm") return read_ppm(path);
  return read_png(path);
}

inline void write_image(const std::string& path, const Image& im) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".ppm")
    write_ppm(path, im);
  else
    write_png_rgb8(path, im);
}

// Scalar plane -> 16-bit png, with the value range in a sidecar text file so
// the plane can be reconstructed exactly enough for visualization.
template <typename T>
void write_scalar_plane(const std::string& path, int width, int height, const Vec<T>& plane) {
  if (plane.size() != int64_t(width) * height) throw IoError("write_scalar_plane: size mismatch");
  T lo = plane.minCoeff(), hi = plane.maxCoeff();
  T span = hi - lo;
  if (!(span > T(0))) span = T(1);
  std::vector<uint16_t> q(plane.size());
  for (int64_t i = 0; i < plane.size(); ++i)
    q[size_t(i)] = uint16_t(clamp01(double((plane(i) - lo) / span)) * 65535.0 + 0.5);
  write_png_gray16(path, width, height, q);
  std::ofstream os(path + ".range.txt");
  os << double(lo) << " " << double(hi) << "\n";
}

}  // namespace hyperfield

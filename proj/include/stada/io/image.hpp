#pragma once

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "stada/core/error.hpp"
#include "stada/core/tensor.hpp"

namespace stada::io {

/// Interleaved 8-bit RGB image.
struct Image8 {
  int h = 0, w = 0;
  std::vector<std::uint8_t> rgb;  // h * w * 3

  Image8() = default;
  Image8(int h_, int w_) : h(h_), w(w_), rgb(static_cast<std::size_t>(h_) * w_ * 3, 0) {}

  std::uint8_t* px(int y, int x) { return rgb.data() + (static_cast<std::size_t>(y) * w + x) * 3; }
  const std::uint8_t* px(int y, int x) const {
    return rgb.data() + (static_cast<std::size_t>(y) * w + x) * 3;
  }
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char msg[JMSG_LENGTH_MAX] = {0};
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->msg);
  std::longjmp(err->jump, 1);
}

inline Image8 read_png_file(std::FILE* f, const std::string& name) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png reader init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png reader init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw CorruptFileError("cannot decode PNG: " + name);
  }
  png_init_io(png, f);
  png_read_info(png, info);
  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  png_byte color = png_get_color_type(png, info);
  png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  Image8 img(static_cast<int>(h), static_cast<int>(w));
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = img.rgb.data() + static_cast<std::size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline Image8 read_jpeg_file(std::FILE* f, const std::string& name) {
  jpeg_decompress_struct cinfo;
  JpegErrorMgr jerr;
  cinfo.err = jpeg_std_error(&jerr.pub);
  jerr.pub.error_exit = jpeg_error_exit;
  if (setjmp(jerr.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw CorruptFileError("cannot decode JPEG: " + name + " (" + jerr.msg + ")");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  Image8 img(static_cast<int>(cinfo.output_height), static_cast<int>(cinfo.output_width));
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = img.rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * img.w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

}  // namespace detail

/// Decode a PNG or JPEG file (sniffed by signature).
inline Image8 read_image(const std::filesystem::path& path) {
  detail::FilePtr f(std::fopen(path.string().c_str(), "rb"));
  if (!f) throw IoError("cannot open image: " + path.string());
  unsigned char sig[8] = {0};
  std::size_t n = std::fread(sig, 1, 8, f.get());
  std::rewind(f.get());
  if (n >= 8 && !png_sig_cmp(sig, 0, 8)) return detail::read_png_file(f.get(), path.string());
  if (n >= 2 && sig[0] == 0xFF && sig[1] == 0xD8) return detail::read_jpeg_file(f.get(), path.string());
  throw CorruptFileError("unsupported image format: " + path.string());
}

inline bool is_decodable_image(const std::filesystem::path& path) {
  try {
    read_image(path);
    return true;
  } catch (const Error&) {
    return false;
  }
}

/// Write an 8-bit RGB PNG. Settings are pinned so identical pixels produce
/// identical bytes; the write is atomic (temp file + rename).
inline void write_png(const std::filesystem::path& path, const Image8& img) {
  require(img.h > 0 && img.w > 0, "write_png: empty image");
  auto tmp = path;
  tmp += ".tmp";
  detail::FilePtr f(std::fopen(tmp.string().c_str(), "wb"));
  if (!f) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png writer init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png writer init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png write failed: " + path.string());
  }
  png_init_io(png, f.get());
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(img.h);
  for (int y = 0; y < img.h; ++y)
    rows[y] = const_cast<png_bytep>(img.rgb.data() + static_cast<std::size_t>(y) * img.w * 3);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  f.reset();
  std::filesystem::rename(tmp, path);
}

inline Image8 resize_bilinear(const Image8& src, int oh, int ow) {
  require(oh >= 1 && ow >= 1, "resize: target size must be >= 1");
  if (oh == src.h && ow == src.w) return src;
  Image8 out(oh, ow);
  const double sy = static_cast<double>(src.h) / oh;
  const double sx = static_cast<double>(src.w) / ow;
  for (int y = 0; y < oh; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int y0c = std::clamp(y0, 0, src.h - 1), y1c = std::clamp(y0 + 1, 0, src.h - 1);
    for (int x = 0; x < ow; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int x0c = std::clamp(x0, 0, src.w - 1), x1c = std::clamp(x0 + 1, 0, src.w - 1);
      for (int c = 0; c < 3; ++c) {
        double v = (1 - wy) * ((1 - wx) * src.px(y0c, x0c)[c] + wx * src.px(y0c, x1c)[c]) +
                   wy * ((1 - wx) * src.px(y1c, x0c)[c] + wx * src.px(y1c, x1c)[c]);
        out.px(y, x)[c] = static_cast<std::uint8_t>(std::clamp(v + 0.5, 0.0, 255.0));
      }
    }
  }
  return out;
}

/// Image8 -> (1, 3, h, w) float tensor in byte range, RGB planes.
inline ImageTensor to_tensor(const Image8& img) {
  Tensor4<float> t(1, 3, img.h, img.w);
  for (int c = 0; c < 3; ++c) {
    float* p = t.plane(0, c);
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) p[y * img.w + x] = img.px(y, x)[c];
  }
  return ImageTensor(std::move(t));
}

/// One batch element of a byte-range RGB tensor -> Image8, rounding and
/// clamping to [0, 255].
inline Image8 to_image8(const ImageTensor& img, int item = 0) {
  require(img.data.c == 3, "to_image8: expected 3 channels");
  require(item >= 0 && item < img.data.n, "to_image8: batch index out of range");
  Image8 out(img.data.h, img.data.w);
  for (int c = 0; c < 3; ++c) {
    const float* p = img.data.plane(item, c);
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x)
        out.px(y, x)[c] =
            static_cast<std::uint8_t>(std::clamp(std::lround(p[y * out.w + x]), 0l, 255l));
  }
  return out;
}

}  // namespace stada::io

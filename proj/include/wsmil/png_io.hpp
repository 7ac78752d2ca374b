#pragma once

// PNG read/write for 8- and 16-bit grayscale or RGB images, backed by libpng.
// Pixel values are normalized to [0, 1] on load.

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "wsmil/raster.hpp"

namespace wsmil {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngErrorSink {
  std::jmp_buf jump;
  char message[256] = {0};
};

inline void wsmil_png_error(png_structp png, png_const_charp msg) {
  auto* sink = static_cast<PngErrorSink*>(png_get_error_ptr(png));
  std::snprintf(sink->message, sizeof(sink->message), "%s", msg);
  std::longjmp(sink->jump, 1);
}

inline void wsmil_png_warning(png_structp, png_const_charp) {}

struct RawPng {
  std::size_t height = 0, width = 0, channels = 0;
  int bit_depth = 0;
  std::vector<std::uint8_t> bytes;  // packed rows, big-endian samples
};

// All libpng calls live here; nothing with a destructor is created between
// setjmp and the last libpng call. Returns an empty string on success.
inline std::string read_png_raw(std::FILE* fp, RawPng& out) {
  PngErrorSink sink;
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, &sink, wsmil_png_error, wsmil_png_warning);
  if (!png) return "cannot allocate PNG reader";
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return "cannot allocate PNG info";
  }
  if (setjmp(sink.jump)) {
    png_destroy_read_struct(&png, &info, nullptr);
    return std::string("corrupt PNG: ") + sink.message;
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (png_get_interlace_type(png, info) != PNG_INTERLACE_NONE) {
    png_destroy_read_struct(&png, &info, nullptr);
    return "unsupported PNG: interlaced images are not supported";
  }
  if ((depth != 8 && depth != 16) || (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_RGB)) {
    png_destroy_read_struct(&png, &info, nullptr);
    return "unsupported PNG format (need 8/16-bit grayscale or RGB), bit depth " +
           std::to_string(depth) + ", color type " + std::to_string(color);
  }
  out.height = h;
  out.width = w;
  out.channels = color == PNG_COLOR_TYPE_RGB ? 3 : 1;
  out.bit_depth = depth;
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  out.bytes.resize(rowbytes * h);
  for (png_uint_32 r = 0; r < h; ++r) png_read_row(png, out.bytes.data() + r * rowbytes, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return {};
}

inline std::string write_png_raw(std::FILE* fp, const RawPng& in, int compression) {
  PngErrorSink sink;
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, &sink, wsmil_png_error, wsmil_png_warning);
  if (!png) return "cannot allocate PNG writer";
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    return "cannot allocate PNG info";
  }
  if (setjmp(sink.jump)) {
    png_destroy_write_struct(&png, &info);
    return std::string("PNG write failed: ") + sink.message;
  }
  png_init_io(png, fp);
  png_set_compression_level(png, compression);
  png_set_IHDR(png, info, static_cast<png_uint_32>(in.width), static_cast<png_uint_32>(in.height),
               in.bit_depth, in.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t rowbytes = in.width * in.channels * static_cast<std::size_t>(in.bit_depth / 8);
  for (std::size_t r = 0; r < in.height; ++r)
    png_write_row(png, in.bytes.data() + r * rowbytes);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return {};
}

inline RawPng read_png_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  unsigned char sig[8] = {0};
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw IoError("not a PNG file: " + path.string());
  std::rewind(fp.get());
  RawPng raw;
  if (auto err = read_png_raw(fp.get(), raw); !err.empty())
    throw IoError(err + " (" + path.string() + ")");
  return raw;
}

inline void write_png_file(const std::filesystem::path& path, const RawPng& raw) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open for writing: " + path.string());
  if (auto err = write_png_raw(fp.get(), raw, 3); !err.empty())
    throw IoError(err + " (" + path.string() + ")");
  if (std::fflush(fp.get()) != 0) throw IoError("write failed: " + path.string());
}

}  // namespace detail

/// Loads an 8- or 16-bit grayscale/RGB PNG; sample s maps to s / (2^depth - 1).
inline ImageTensor load_image(const std::filesystem::path& path) {
  const auto raw = detail::read_png_file(path);
  const std::size_t n = raw.height * raw.width * raw.channels;
  std::vector<float> data(n);
  if (raw.bit_depth == 8) {
    for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<float>(raw.bytes[i]) / 255.0f;
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const auto v = static_cast<std::uint16_t>((raw.bytes[2 * i] << 8) | raw.bytes[2 * i + 1]);
      data[i] = static_cast<float>(static_cast<double>(v) / 65535.0);
    }
  }
  return ImageTensor(raw.height, raw.width, raw.channels, std::move(data));
}

/// Writes `img` as PNG with the requested bit depth (8 or 16), rounding to
/// the nearest code.
inline void save_image(const ImageTensor& img, const std::filesystem::path& path,
                       int bit_depth = 16) {
  if (bit_depth != 8 && bit_depth != 16)
    throw std::invalid_argument("save_image: bit depth must be 8 or 16");
  detail::RawPng raw;
  raw.height = img.height();
  raw.width = img.width();
  raw.channels = img.channels();
  raw.bit_depth = bit_depth;
  auto src = img.data();
  if (bit_depth == 8) {
    raw.bytes.resize(src.size());
    for (std::size_t i = 0; i < src.size(); ++i)
      raw.bytes[i] = static_cast<std::uint8_t>(std::lround(src[i] * 255.0));
  } else {
    raw.bytes.resize(2 * src.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
      const auto v = static_cast<std::uint16_t>(std::lround(static_cast<double>(src[i]) * 65535.0));
      raw.bytes[2 * i] = static_cast<std::uint8_t>(v >> 8);
      raw.bytes[2 * i + 1] = static_cast<std::uint8_t>(v & 0xff);
    }
  }
  detail::write_png_file(path, raw);
}

}  // namespace wsmil

#pragma once

// Class activation maps for a GAP + linear head, upsampling to image
// resolution, and saliency file I/O (raw "SALM" float format or 16-bit PNG).

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "wsmil/png_io.hpp"
#include "wsmil/raster.hpp"

namespace wsmil {

/// Feature maps of a convolutional stage: fheight x fwidth x channels,
/// row-major and channel-last.
struct FeatureStack {
  std::size_t fheight = 0;
  std::size_t fwidth = 0;
  std::size_t channels = 0;
  std::vector<float> data;

  FeatureStack() = default;
  FeatureStack(std::size_t h, std::size_t w, std::size_t c)
      : fheight(h), fwidth(w), channels(c), data(h * w * c, 0.0f) {
    if (h == 0 || w == 0 || c == 0) throw std::invalid_argument("FeatureStack: zero dimension");
  }
  FeatureStack(std::size_t h, std::size_t w, std::size_t c, std::vector<float> values)
      : fheight(h), fwidth(w), channels(c), data(std::move(values)) {
    if (h == 0 || w == 0 || c == 0) throw std::invalid_argument("FeatureStack: zero dimension");
    if (data.size() != h * w * c)
      throw std::invalid_argument("FeatureStack: data length does not match dimensions");
  }

  float operator()(std::size_t r, std::size_t c, std::size_t ch) const {
    return data[(r * fwidth + c) * channels + ch];
  }
  float& operator()(std::size_t r, std::size_t c, std::size_t ch) {
    return data[(r * fwidth + c) * channels + ch];
  }
};

enum class SaliencySource { computed_cam, external_file };

struct SaliencyMap {
  Raster map;
  SaliencySource source = SaliencySource::computed_cam;
  std::string image_id;
};

/// Weighted channel sum before rectification. CAM is linear in the stack up
/// to this point.
inline Raster cam_pre_relu(const FeatureStack& features, std::span<const double> class_weights) {
  if (class_weights.size() != features.channels)
    throw std::invalid_argument("compute_cam: " + std::to_string(class_weights.size()) +
                                " class weights for " + std::to_string(features.channels) +
                                " channels");
  const std::size_t n = features.fheight * features.fwidth;
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float* px = features.data.data() + i * features.channels;
    double acc = 0.0;
    for (std::size_t ch = 0; ch < features.channels; ++ch) acc += class_weights[ch] * px[ch];
    out[i] = static_cast<float>(acc);
  }
  return Raster(features.fheight, features.fwidth, std::move(out));
}

/// out(i,j) = max(0, sum_ch w[ch] * F(i,j,ch)), at feature resolution.
inline SaliencyMap compute_cam(const FeatureStack& features, std::span<const double> class_weights,
                               std::string image_id = {}) {
  Raster map = cam_pre_relu(features, class_weights);
  for (float& v : map.data()) v = std::max(v, 0.0f);
  return {std::move(map), SaliencySource::computed_cam, std::move(image_id)};
}

/// Bilinear (align-corners) upsampling; downsampling is rejected.
inline SaliencyMap upsample_to_image(const SaliencyMap& sal, std::size_t h, std::size_t w) {
  if (h < sal.map.height() || w < sal.map.width())
    throw std::invalid_argument("upsample_to_image: target " + std::to_string(h) + "x" +
                                std::to_string(w) + " is smaller than the " +
                                std::to_string(sal.map.height()) + "x" +
                                std::to_string(sal.map.width()) + " map");
  return {resize_bilinear(sal.map, h, w), sal.source, sal.image_id};
}

/// Row-major first occurrence of the maximum.
inline std::pair<std::size_t, std::size_t> argmax(const Raster& r) {
  auto d = r.data();
  const auto idx = static_cast<std::size_t>(std::distance(d.begin(), std::max_element(d.begin(), d.end())));
  return {idx / r.width(), idx % r.width()};
}

/// Min-max normalization to [0, 1]; a constant map becomes all zeros.
inline Raster normalize_unit(const Raster& r) {
  const float lo = r.min(), hi = r.max();
  Raster out = r;
  const double span = static_cast<double>(hi) - static_cast<double>(lo);
  for (float& v : out.data())
    v = span > 0.0 ? static_cast<float>((static_cast<double>(v) - lo) / span) : 0.0f;
  return out;
}

// ---------------------------------------------------------------------------
// Raw format: "SALM", u32le height, u32le width, height*width f32le row-major.

inline void save_saliency_raw(const SaliencyMap& sal, const std::filesystem::path& path) {
  std::vector<char> buf;
  buf.reserve(12 + 4 * sal.map.size());
  buf.insert(buf.end(), {'S', 'A', 'L', 'M'});
  auto put_u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  put_u32(static_cast<std::uint32_t>(sal.map.height()));
  put_u32(static_cast<std::uint32_t>(sal.map.width()));
  for (float v : sal.map.data()) put_u32(std::bit_cast<std::uint32_t>(v));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

/// Exports the min-max normalized map as a 16-bit grayscale PNG.
inline void save_saliency_png(const SaliencyMap& sal, const std::filesystem::path& path) {
  save_image(to_image(normalize_unit(sal.map)), path, 16);
}

namespace detail {

inline SaliencyMap load_saliency_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12) throw IoError("corrupt saliency file (truncated header): " + path.string());
  auto get_u32 = [&](std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[off + i]) << (8 * i);
    return v;
  };
  const std::uint64_t h = get_u32(4), w = get_u32(8);
  if (h == 0 || w == 0) throw IoError("corrupt saliency file (zero dimension): " + path.string());
  const std::uint64_t payload = bytes.size() - 12;
  if (payload != 4 * h * w)
    throw IoError("corrupt saliency file: header declares " + std::to_string(h) + "x" +
                  std::to_string(w) + " (" + std::to_string(h * w) + " floats) but payload holds " +
                  std::to_string(payload / 4) + (payload % 4 ? " floats plus stray bytes" : " floats") +
                  ": " + path.string());
  std::vector<float> data(h * w);
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = std::bit_cast<float>(get_u32(12 + 4 * i));
    if (!std::isfinite(data[i]))
      throw IoError("corrupt saliency file (non-finite value): " + path.string());
  }
  return {Raster(h, w, std::move(data)), SaliencySource::external_file, path.stem().string()};
}

}  // namespace detail

/// Loads a raw SALM map verbatim or a grayscale PNG mapped to [0, 1].
inline SaliencyMap load_saliency(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  char magic[4] = {0};
  {
    std::ifstream in(path, std::ios::binary);
    in.read(magic, 4);
  }
  if (std::memcmp(magic, "SALM", 4) == 0) return detail::load_saliency_raw(path);
  const ImageTensor img = load_image(path);
  if (img.channels() != 1)
    throw IoError("saliency PNG must be grayscale: " + path.string());
  return {to_raster(img), SaliencySource::external_file, path.stem().string()};
}

}  // namespace wsmil

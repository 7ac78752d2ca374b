#pragma once

// Raster and image containers plus the geometric operations the pipeline
// needs: bilinear resizing, centered cropping and training-time augmentation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace wsmil {

/// 2-D scalar grid, row-major, finite 32-bit values.
class Raster {
 public:
  Raster() = default;

  Raster(std::size_t height, std::size_t width, float value = 0.0f)
      : height_(height), width_(width), data_(height * width, value) {
    check_dims();
    check_finite();
  }

  Raster(std::size_t height, std::size_t width, std::vector<float> data)
      : height_(height), width_(width), data_(std::move(data)) {
    check_dims();
    if (data_.size() != height_ * width_)
      throw std::invalid_argument("Raster: data length " + std::to_string(data_.size()) +
                                  " does not match " + std::to_string(height_) + "x" +
                                  std::to_string(width_));
    check_finite();
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float operator()(std::size_t r, std::size_t c) const { return data_[r * width_ + c]; }
  float& operator()(std::size_t r, std::size_t c) { return data_[r * width_ + c]; }

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }

  float min() const { return *std::min_element(data_.begin(), data_.end()); }
  float max() const { return *std::max_element(data_.begin(), data_.end()); }

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  void check_dims() const {
    if (height_ == 0 || width_ == 0) throw std::invalid_argument("Raster: zero dimension");
  }
  void check_finite() const {
    for (float v : data_)
      if (!std::isfinite(v)) throw std::invalid_argument("Raster: non-finite value");
  }

  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<float> data_;
};

/// H x W x C image, row-major and channel-last, values in [0, 1].
class ImageTensor {
 public:
  ImageTensor() = default;

  ImageTensor(std::size_t height, std::size_t width, std::size_t channels, float value = 0.0f)
      : height_(height), width_(width), channels_(channels),
        data_(height * width * channels, value) {
    check();
  }

  ImageTensor(std::size_t height, std::size_t width, std::size_t channels,
              std::vector<float> data)
      : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
    check();
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }

  float operator()(std::size_t r, std::size_t c, std::size_t ch = 0) const {
    return data_[(r * width_ + c) * channels_ + ch];
  }
  float& operator()(std::size_t r, std::size_t c, std::size_t ch = 0) {
    return data_[(r * width_ + c) * channels_ + ch];
  }

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

 private:
  void check() const {
    if (height_ == 0 || width_ == 0) throw std::invalid_argument("ImageTensor: zero dimension");
    if (channels_ != 1 && channels_ != 3)
      throw std::invalid_argument("ImageTensor: channels must be 1 or 3, got " +
                                  std::to_string(channels_));
    if (data_.size() != height_ * width_ * channels_)
      throw std::invalid_argument("ImageTensor: data length does not match dimensions");
    for (float v : data_)
      if (!(v >= 0.0f && v <= 1.0f))
        throw std::invalid_argument("ImageTensor: value outside [0, 1]");
  }

  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<float> data_;
};

/// Single-channel image -> raster (values copied verbatim).
inline Raster to_raster(const ImageTensor& img) {
  if (img.channels() != 1) throw std::invalid_argument("to_raster: image must have one channel");
  return Raster(img.height(), img.width(), std::vector<float>(img.data().begin(), img.data().end()));
}

/// Raster -> single-channel image. Values must already lie in [0, 1].
inline ImageTensor to_image(const Raster& r) {
  return ImageTensor(r.height(), r.width(), 1,
                     std::vector<float>(r.data().begin(), r.data().end()));
}

/// ITU-R BT.601 luma for RGB, passthrough for grayscale.
inline Raster luminance(const ImageTensor& img) {
  std::vector<float> out(img.height() * img.width());
  auto src = img.data();
  if (img.channels() == 1) {
    std::copy(src.begin(), src.end(), out.begin());
  } else {
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = 0.299f * src[3 * i] + 0.587f * src[3 * i + 1] + 0.114f * src[3 * i + 2];
  }
  return Raster(img.height(), img.width(), std::move(out));
}

namespace detail {

// Bilinear sample with clamped-to-frame neighbours. Caller guarantees
// 0 <= y <= h-1 and 0 <= x <= w-1. std::lerp keeps results inside the hull.
inline float bilinear_at(std::span<const float> src, std::size_t h, std::size_t w,
                         std::size_t ch, std::size_t c, double y, double x) {
  auto y0 = static_cast<std::size_t>(std::floor(y));
  auto x0 = static_cast<std::size_t>(std::floor(x));
  y0 = std::min(y0, h - 1);
  x0 = std::min(x0, w - 1);
  const std::size_t y1 = std::min(y0 + 1, h - 1);
  const std::size_t x1 = std::min(x0 + 1, w - 1);
  const double ty = y - static_cast<double>(y0);
  const double tx = x - static_cast<double>(x0);
  auto at = [&](std::size_t r, std::size_t col) {
    return static_cast<double>(src[(r * w + col) * ch + c]);
  };
  const double top = std::lerp(at(y0, x0), at(y0, x1), tx);
  const double bot = std::lerp(at(y1, x0), at(y1, x1), tx);
  return static_cast<float>(std::lerp(top, bot, ty));
}

inline std::vector<float> resize_bilinear(std::span<const float> src, std::size_t h,
                                          std::size_t w, std::size_t ch, std::size_t new_h,
                                          std::size_t new_w) {
  if (new_h == 0 || new_w == 0)
    throw std::invalid_argument("resize_bilinear: requested dimension is zero");
  if (new_h == h && new_w == w) return {src.begin(), src.end()};
  // align-corners: output index i maps to i * (in - 1) / (out - 1)
  const double sy = new_h > 1 ? static_cast<double>(h - 1) / static_cast<double>(new_h - 1) : 0.0;
  const double sx = new_w > 1 ? static_cast<double>(w - 1) / static_cast<double>(new_w - 1) : 0.0;
  std::vector<float> out(new_h * new_w * ch);
  for (std::size_t r = 0; r < new_h; ++r) {
    const double y = std::min(static_cast<double>(r) * sy, static_cast<double>(h - 1));
    for (std::size_t c = 0; c < new_w; ++c) {
      const double x = std::min(static_cast<double>(c) * sx, static_cast<double>(w - 1));
      for (std::size_t k = 0; k < ch; ++k)
        out[(r * new_w + c) * ch + k] = bilinear_at(src, h, w, ch, k, y, x);
    }
  }
  return out;
}

}  // namespace detail

/// Align-corners bilinear resize. Same dimensions is a bitwise copy.
inline Raster resize_bilinear(const Raster& img, std::size_t new_h, std::size_t new_w) {
  return Raster(new_h, new_w,
                detail::resize_bilinear(img.data(), img.height(), img.width(), 1, new_h, new_w));
}

inline ImageTensor resize_bilinear(const ImageTensor& img, std::size_t new_h, std::size_t new_w) {
  return ImageTensor(new_h, new_w, img.channels(),
                     detail::resize_bilinear(img.data(), img.height(), img.width(),
                                             img.channels(), new_h, new_w));
}

/// Crops rows [center_row - half, center_row + half) and the same column range.
/// The window must lie inside the image; callers clamp the center first.
inline ImageTensor crop_centered(const ImageTensor& img, std::size_t center_row,
                                 std::size_t center_col, std::size_t half) {
  if (half == 0) throw std::invalid_argument("crop_centered: half must be positive");
  if (center_row < half || center_row + half > img.height() || center_col < half ||
      center_col + half > img.width())
    throw std::out_of_range("crop_centered: window centered at (" + std::to_string(center_row) +
                            "," + std::to_string(center_col) + ") with half " +
                            std::to_string(half) + " leaves the " +
                            std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                            " frame");
  const std::size_t side = 2 * half;
  const std::size_t ch = img.channels();
  std::vector<float> out(side * side * ch);
  auto src = img.data();
  for (std::size_t r = 0; r < side; ++r) {
    const std::size_t sr = center_row - half + r;
    const auto* row = src.data() + (sr * img.width() + (center_col - half)) * ch;
    std::copy(row, row + side * ch, out.begin() + static_cast<std::ptrdiff_t>(r * side * ch));
  }
  return ImageTensor(side, side, ch, std::move(out));
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentSpec {
  double zoom = 1.0;          // [0.6, 1.4]
  int rotation_deg = 0;       // multiple of 15 in [0, 360), counter-clockwise
  bool flip_h = false;        // mirror columns
  bool flip_v = false;        // mirror rows
  std::array<int, 2> translate_px{0, 0};  // (rows, cols), each in [-4, 4]

  void validate() const {
    if (!(zoom >= 0.6 && zoom <= 1.4))
      throw std::invalid_argument("AugmentSpec: zoom must lie in [0.6, 1.4]");
    if (rotation_deg < 0 || rotation_deg >= 360 || rotation_deg % 15 != 0)
      throw std::invalid_argument("AugmentSpec: rotation must be a multiple of 15 in [0, 360)");
    for (int t : translate_px)
      if (t < -4 || t > 4) throw std::invalid_argument("AugmentSpec: translation outside [-4, 4]");
  }

  bool is_identity() const {
    return zoom == 1.0 && rotation_deg == 0 && !flip_h && !flip_v && translate_px[0] == 0 &&
           translate_px[1] == 0;
  }
};

/// Draws a spec uniformly over the training-time augmentation ranges.
template <class Rng>
AugmentSpec random_augment_spec(Rng& rng) {
  AugmentSpec s;
  s.zoom = std::uniform_real_distribution<double>(0.6, 1.4)(rng);
  s.rotation_deg = 15 * std::uniform_int_distribution<int>(0, 23)(rng);
  std::bernoulli_distribution coin(0.5);
  s.flip_h = coin(rng);
  s.flip_v = coin(rng);
  std::uniform_int_distribution<int> shift(-4, 4);
  s.translate_px = {shift(rng), shift(rng)};
  return s;
}

namespace detail {

// Inverse-mapped affine resampling about the image center: output pixel p
// samples the input at center + M * (p - center). Samples leaving the frame
// take `fill`.
inline ImageTensor resample_affine(const ImageTensor& img, const std::array<double, 4>& m,
                                   float fill) {
  const std::size_t h = img.height(), w = img.width(), ch = img.channels();
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  const double tol = 1e-9;
  std::vector<float> out(h * w * ch, fill);
  auto src = img.data();
  for (std::size_t r = 0; r < h; ++r) {
    const double dy = static_cast<double>(r) - cy;
    for (std::size_t c = 0; c < w; ++c) {
      const double dx = static_cast<double>(c) - cx;
      double y = cy + m[0] * dy + m[1] * dx;
      double x = cx + m[2] * dy + m[3] * dx;
      if (y < -tol || x < -tol || y > static_cast<double>(h - 1) + tol ||
          x > static_cast<double>(w - 1) + tol)
        continue;
      y = std::clamp(y, 0.0, static_cast<double>(h - 1));
      x = std::clamp(x, 0.0, static_cast<double>(w - 1));
      for (std::size_t k = 0; k < ch; ++k)
        out[(r * w + c) * ch + k] = bilinear_at(src, h, w, ch, k, y, x);
    }
  }
  return ImageTensor(h, w, ch, std::move(out));
}

inline ImageTensor zoom(const ImageTensor& img, double factor, float fill) {
  if (factor == 1.0) return img;
  const double inv = 1.0 / factor;
  return resample_affine(img, {inv, 0.0, 0.0, inv}, fill);
}

inline std::pair<double, double> sin_cos_deg(int deg) {
  switch (((deg % 360) + 360) % 360) {
    case 0: return {0.0, 1.0};
    case 90: return {1.0, 0.0};
    case 180: return {0.0, -1.0};
    case 270: return {-1.0, 0.0};
    default: {
      const double rad = static_cast<double>(deg) * std::numbers::pi / 180.0;
      return {std::sin(rad), std::cos(rad)};
    }
  }
}

/// Bilinear rotation (counter-clockwise as displayed) about the center.
inline ImageTensor rotate_bilinear(const ImageTensor& img, int deg, float fill) {
  const auto [s, c] = sin_cos_deg(deg);
  // source offset = (dy*cos + dx*sin, -dy*sin + dx*cos)
  return resample_affine(img, {c, s, -s, c}, fill);
}

/// Lossless rotation by a multiple of 90 degrees. Requires a square image
/// unless the angle is 0 or 180.
inline ImageTensor rotate_right_angle(const ImageTensor& img, int deg) {
  const int q = (((deg % 360) + 360) % 360) / 90;
  const std::size_t h = img.height(), w = img.width(), ch = img.channels();
  if (q == 0) return img;
  if (q % 2 == 1 && h != w)
    throw std::invalid_argument("rotate_right_angle: quarter turns need a square image");
  std::vector<float> out(h * w * ch);
  auto src = img.data();
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      std::size_t sr = r, sc = c;
      switch (q) {
        case 1: sr = c; sc = w - 1 - r; break;
        case 2: sr = h - 1 - r; sc = w - 1 - c; break;
        case 3: sr = h - 1 - c; sc = r; break;
      }
      for (std::size_t k = 0; k < ch; ++k)
        out[(r * w + c) * ch + k] = src[(sr * w + sc) * ch + k];
    }
  return ImageTensor(h, w, ch, std::move(out));
}

inline ImageTensor flip(const ImageTensor& img, bool horizontal, bool vertical) {
  if (!horizontal && !vertical) return img;
  const std::size_t h = img.height(), w = img.width(), ch = img.channels();
  std::vector<float> out(h * w * ch);
  auto src = img.data();
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t sr = vertical ? h - 1 - r : r;
      const std::size_t sc = horizontal ? w - 1 - c : c;
      for (std::size_t k = 0; k < ch; ++k)
        out[(r * w + c) * ch + k] = src[(sr * w + sc) * ch + k];
    }
  return ImageTensor(h, w, ch, std::move(out));
}

inline ImageTensor translate(const ImageTensor& img, int dr, int dc, float fill) {
  if (dr == 0 && dc == 0) return img;
  const auto h = static_cast<long>(img.height()), w = static_cast<long>(img.width());
  const std::size_t ch = img.channels();
  std::vector<float> out(img.size(), fill);
  auto src = img.data();
  for (long r = 0; r < h; ++r) {
    const long sr = r - dr;
    if (sr < 0 || sr >= h) continue;
    for (long c = 0; c < w; ++c) {
      const long sc = c - dc;
      if (sc < 0 || sc >= w) continue;
      for (std::size_t k = 0; k < ch; ++k)
        out[static_cast<std::size_t>(r * w + c) * ch + k] =
            src[static_cast<std::size_t>(sr * w + sc) * ch + k];
    }
  }
  return ImageTensor(img.height(), img.width(), ch, std::move(out));
}

}  // namespace detail

/// Applies zoom, rotation, flips and translation in that order. Output keeps
/// the input dimensions; pixels mapped from outside the frame become `fill`.
inline ImageTensor augment(const ImageTensor& img, const AugmentSpec& spec, float fill = 0.0f) {
  spec.validate();
  if (!(fill >= 0.0f && fill <= 1.0f)) throw std::invalid_argument("augment: fill outside [0, 1]");
  if (spec.is_identity()) return img;

  ImageTensor out = detail::zoom(img, spec.zoom, fill);
  if (spec.rotation_deg != 0) {
    const bool lossless = spec.rotation_deg % 90 == 0 &&
                          (spec.rotation_deg == 180 || out.height() == out.width());
    out = lossless ? detail::rotate_right_angle(out, spec.rotation_deg)
                   : detail::rotate_bilinear(out, spec.rotation_deg, fill);
  }
  out = detail::flip(out, spec.flip_h, spec.flip_v);
  return detail::translate(out, spec.translate_px[0], spec.translate_px[1], fill);
}

}  // namespace wsmil

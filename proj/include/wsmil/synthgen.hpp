#pragma once

// Synthetic tiny-ROI benchmark: textured, occasionally blurred backgrounds
// with a few small Gaussian blobs on positive images. Ground-truth blob
// centers are written for test oracles only.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "wsmil/common.hpp"
#include "wsmil/png_io.hpp"
#include "wsmil/raster.hpp"

namespace wsmil {

struct SynthConfig {
  std::size_t n_images = 600;
  std::size_t image_side = 256;
  double radius_min = 3.0;
  double radius_max = 5.0;
  int blobs_min = 1;
  int blobs_max = 3;
  double positive_ratio = 0.5;
  double contrast = 0.22;  // peak blob intensity above the local background
  // background texture
  double base_min = 0.3, base_max = 0.6;
  double coarse_amp_min = 0.015, coarse_amp_max = 0.025;
  double fine_amp_min = 0.0, fine_amp_max = 0.004;
  double pixel_noise = 0.003;
  int blur_max = 2;  // box-blur radius drawn from [0, blur_max]
  int bit_depth = 16;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_images == 0) throw std::invalid_argument("SynthConfig: n_images must be positive");
    if (image_side < 16) throw std::invalid_argument("SynthConfig: image_side must be >= 16");
    if (!(radius_min > 0.0 && radius_min <= radius_max))
      throw std::invalid_argument("SynthConfig: need 0 < radius_min <= radius_max");
    if (radius_max > static_cast<double>(image_side) / 16.0)
      throw std::invalid_argument("SynthConfig: blob radius must not exceed image_side / 16");
    if (blobs_min < 1 || blobs_min > blobs_max)
      throw std::invalid_argument("SynthConfig: need 1 <= blobs_min <= blobs_max");
    if (!(positive_ratio > 0.0 && positive_ratio < 1.0))
      throw std::invalid_argument("SynthConfig: positive_ratio must lie in (0, 1)");
    if (!(contrast > 0.0 && contrast <= 1.0))
      throw std::invalid_argument("SynthConfig: contrast must lie in (0, 1]");
    if (blur_max < 0) throw std::invalid_argument("SynthConfig: blur_max must be >= 0");
    if (bit_depth != 8 && bit_depth != 16)
      throw std::invalid_argument("SynthConfig: bit_depth must be 8 or 16");
  }

  std::size_t n_positive() const {
    return static_cast<std::size_t>(std::llround(static_cast<double>(n_images) * positive_ratio));
  }
};

struct Blob {
  double row = 0.0;
  double col = 0.0;
  double radius = 0.0;
};

struct SynthImage {
  std::string bag_id;
  Label label = Label::negative;
  ImageTensor image;
  std::vector<Blob> blobs;
};

namespace detail {

// Value noise: uniform [-1, 1] lattice every `cell` pixels, smoothstep
// interpolated.
inline std::vector<double> value_noise(std::size_t side, double cell, std::mt19937_64& rng) {
  const auto n = static_cast<std::size_t>(std::ceil(static_cast<double>(side) / cell)) + 2;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> lattice(n * n);
  for (double& v : lattice) v = u(rng);
  std::vector<double> out(side * side);
  auto smooth = [](double t) { return t * t * (3.0 - 2.0 * t); };
  for (std::size_t r = 0; r < side; ++r) {
    const double y = static_cast<double>(r) / cell;
    const auto y0 = static_cast<std::size_t>(y);
    const double ty = smooth(y - static_cast<double>(y0));
    for (std::size_t c = 0; c < side; ++c) {
      const double x = static_cast<double>(c) / cell;
      const auto x0 = static_cast<std::size_t>(x);
      const double tx = smooth(x - static_cast<double>(x0));
      const double top = std::lerp(lattice[y0 * n + x0], lattice[y0 * n + x0 + 1], tx);
      const double bot = std::lerp(lattice[(y0 + 1) * n + x0], lattice[(y0 + 1) * n + x0 + 1], tx);
      out[r * side + c] = std::lerp(top, bot, ty);
    }
  }
  return out;
}

inline void box_blur(std::vector<double>& img, std::size_t side, int radius) {
  if (radius <= 0) return;
  std::vector<double> tmp(img.size());
  const auto s = static_cast<long>(side);
  auto pass = [&](const std::vector<double>& src, std::vector<double>& dst, bool horizontal) {
    for (long r = 0; r < s; ++r)
      for (long c = 0; c < s; ++c) {
        double acc = 0.0;
        for (long d = -radius; d <= radius; ++d) {
          const long rr = horizontal ? r : std::clamp(r + d, 0L, s - 1);
          const long cc = horizontal ? std::clamp(c + d, 0L, s - 1) : c;
          acc += src[static_cast<std::size_t>(rr * s + cc)];
        }
        dst[static_cast<std::size_t>(r * s + c)] = acc / static_cast<double>(2 * radius + 1);
      }
  };
  pass(img, tmp, true);
  pass(tmp, img, false);
}

}  // namespace detail

inline std::string synth_bag_id(Label label, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%04zu", label == Label::positive ? "pos" : "neg", index);
  return buf;
}

/// Renders image `index`. The first n_positive() indices are positive.
/// Deterministic per (config.seed, index).
inline SynthImage generate_image(const SynthConfig& cfg, std::size_t index) {
  cfg.validate();
  const std::size_t side = cfg.image_side;
  SynthImage out;
  out.label = index < cfg.n_positive() ? Label::positive : Label::negative;
  out.bag_id = synth_bag_id(out.label, index);
  std::mt19937_64 rng(derive_seed(cfg.seed, "synth/" + std::to_string(index)));
  auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };

  const double base = uni(cfg.base_min, cfg.base_max);
  const double coarse_amp = uni(cfg.coarse_amp_min, cfg.coarse_amp_max);
  const double coarse_cell = uni(12.0, 32.0);
  const double fine_amp = uni(cfg.fine_amp_min, cfg.fine_amp_max);
  const double fine_cell = uni(3.0, 6.0);
  const int blur = std::uniform_int_distribution<int>(0, cfg.blur_max)(rng);

  const auto coarse = detail::value_noise(side, coarse_cell, rng);
  const auto fine = detail::value_noise(side, fine_cell, rng);
  std::normal_distribution<double> grain(0.0, cfg.pixel_noise);
  std::vector<double> px(side * side);
  for (std::size_t i = 0; i < px.size(); ++i)
    px[i] = base + coarse_amp * coarse[i] + fine_amp * fine[i] + grain(rng);
  detail::box_blur(px, side, blur);

  if (out.label == Label::positive) {
    const int n_blobs = std::uniform_int_distribution<int>(cfg.blobs_min, cfg.blobs_max)(rng);
    for (int b = 0; b < n_blobs; ++b) {
      Blob blob;
      blob.radius = uni(cfg.radius_min, cfg.radius_max);
      blob.row = uni(blob.radius, static_cast<double>(side - 1) - blob.radius);
      blob.col = uni(blob.radius, static_cast<double>(side - 1) - blob.radius);
      const double amp = cfg.contrast * uni(0.8, 1.2);
      const double sigma = blob.radius / 2.0;
      const auto reach = static_cast<long>(std::ceil(3.0 * sigma));
      const auto r0 = static_cast<long>(std::lround(blob.row));
      const auto c0 = static_cast<long>(std::lround(blob.col));
      for (long r = std::max(0L, r0 - reach); r <= std::min<long>(side - 1, r0 + reach); ++r)
        for (long c = std::max(0L, c0 - reach); c <= std::min<long>(side - 1, c0 + reach); ++c) {
          const double dy = static_cast<double>(r) - blob.row;
          const double dx = static_cast<double>(c) - blob.col;
          px[static_cast<std::size_t>(r) * side + static_cast<std::size_t>(c)] +=
              amp * std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
        }
      out.blobs.push_back(blob);
    }
  }

  std::vector<float> data(px.size());
  for (std::size_t i = 0; i < px.size(); ++i) data[i] = static_cast<float>(std::clamp(px[i], 0.0, 1.0));
  out.image = ImageTensor(side, side, 1, std::move(data));
  return out;
}

inline nlohmann::json synth_config_json(const SynthConfig& c) {
  return {{"n_images", c.n_images},       {"image_side", c.image_side},
          {"radius_min", c.radius_min},   {"radius_max", c.radius_max},
          {"blobs_min", c.blobs_min},     {"blobs_max", c.blobs_max},
          {"positive_ratio", c.positive_ratio}, {"contrast", c.contrast},
          {"base_min", c.base_min},       {"base_max", c.base_max},
          {"coarse_amp_min", c.coarse_amp_min}, {"coarse_amp_max", c.coarse_amp_max},
          {"fine_amp_min", c.fine_amp_min}, {"fine_amp_max", c.fine_amp_max},
          {"pixel_noise", c.pixel_noise}, {"blur_max", c.blur_max},
          {"bit_depth", c.bit_depth},     {"seed", c.seed}};
}

/// Overrides fields of `c` present in `j`.
inline void update_synth_config(SynthConfig& c, const nlohmann::json& j) {
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  take("n_images", c.n_images);
  take("image_side", c.image_side);
  take("radius_min", c.radius_min);
  take("radius_max", c.radius_max);
  take("blobs_min", c.blobs_min);
  take("blobs_max", c.blobs_max);
  take("positive_ratio", c.positive_ratio);
  take("contrast", c.contrast);
  take("base_min", c.base_min);
  take("base_max", c.base_max);
  take("coarse_amp_min", c.coarse_amp_min);
  take("coarse_amp_max", c.coarse_amp_max);
  take("fine_amp_min", c.fine_amp_min);
  take("fine_amp_max", c.fine_amp_max);
  take("pixel_noise", c.pixel_noise);
  take("blur_max", c.blur_max);
  take("bit_depth", c.bit_depth);
  take("seed", c.seed);
}

struct GroundTruthEntry {
  std::string bag_id;
  Label label = Label::negative;
  std::vector<Blob> blobs;
};

/// Writes root/{positive,negative}/<bag_id>.png and root/ground_truth.json.
inline std::vector<GroundTruthEntry> generate_dataset(const SynthConfig& cfg,
                                                      const std::filesystem::path& root) {
  cfg.validate();
  std::error_code ec;
  for (const char* sub : {"positive", "negative"}) {
    std::filesystem::create_directories(root / sub, ec);
    if (ec) throw IoError("cannot create " + (root / sub).string() + ": " + ec.message());
  }
  std::vector<GroundTruthEntry> truth;
  nlohmann::json images = nlohmann::json::array();
  for (std::size_t i = 0; i < cfg.n_images; ++i) {
    const auto img = generate_image(cfg, i);
    save_image(img.image, root / to_string(img.label) / (img.bag_id + ".png"), cfg.bit_depth);
    nlohmann::json blobs = nlohmann::json::array();
    for (const auto& b : img.blobs) blobs.push_back({{"row", b.row}, {"col", b.col}, {"radius", b.radius}});
    images.push_back({{"bag_id", img.bag_id}, {"label", to_string(img.label)}, {"blobs", blobs}});
    truth.push_back({img.bag_id, img.label, img.blobs});
  }
  std::ofstream out(root / "ground_truth.json");
  if (!out) throw IoError("cannot open for writing: " + (root / "ground_truth.json").string());
  out << nlohmann::json{{"config", synth_config_json(cfg)}, {"images", images}}.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + (root / "ground_truth.json").string());
  return truth;
}

inline std::vector<GroundTruthEntry> load_ground_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  const auto j = nlohmann::json::parse(in);
  std::vector<GroundTruthEntry> out;
  for (const auto& e : j.at("images")) {
    GroundTruthEntry g;
    g.bag_id = e.at("bag_id").get<std::string>();
    g.label = parse_label(e.at("label").get<std::string>());
    for (const auto& b : e.at("blobs"))
      g.blobs.push_back({b.at("row").get<double>(), b.at("col").get<double>(), b.at("radius").get<double>()});
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace wsmil

#pragma once

// Instance extraction from bag images: saliency-guided selection with
// occlusion (Patch-SaliMap), uniform random patches for negative training
// bags, and the non-overlapping grid used by the patch baseline.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "wsmil/raster.hpp"
#include "wsmil/saliency.hpp"

namespace wsmil {

enum class PatchMode { salimap, random, grid };

inline std::string to_string(PatchMode m) {
  switch (m) {
    case PatchMode::salimap: return "salimap";
    case PatchMode::random: return "random";
    case PatchMode::grid: return "grid";
  }
  return "?";
}

/// One extracted instance. `center_row`/`center_col` are the clamped center;
/// the patch covers [center - side_l/2, center + side_l/2) on both axes.
struct PatchRecord {
  std::string bag_id;
  int rank_j = 0;
  std::size_t center_row = 0;
  std::size_t center_col = 0;
  std::size_t side_l = 0;
  ImageTensor patch;
  double selection_saliency = 0.0;
  bool degenerate_flag = false;
};

struct PatchPolicy {
  int k = 5;
  std::size_t l = 0;
  PatchMode mode = PatchMode::salimap;
  std::uint64_t seed = 0;

  void validate(std::size_t h, std::size_t w) const {
    if (k < 1) throw std::invalid_argument("PatchPolicy: k must be >= 1");
    if (l == 0 || l % 2 != 0)
      throw std::invalid_argument("PatchPolicy: patch side l must be a positive even integer, got " +
                                  std::to_string(l));
    if (l > std::min(h, w))
      throw std::invalid_argument("PatchPolicy: patch side " + std::to_string(l) +
                                  " exceeds the image (" + std::to_string(h) + "x" +
                                  std::to_string(w) + ")");
  }
};

namespace detail {

inline std::size_t clamp_center(std::size_t v, std::size_t half, std::size_t extent) {
  return std::clamp(v, half, extent - half);
}

}  // namespace detail

/// Patch-SaliMap. Each round takes the row-major-first argmax of a private
/// working copy of the map, clamps it so the l x l window fits, crops, and
/// overwrites the window in the working map with its global minimum.
inline std::vector<PatchRecord> patch_salimap(const ImageTensor& img, const SaliencyMap& sal,
                                              int k, std::size_t l, const std::string& bag_id = {}) {
  const std::size_t h = img.height(), w = img.width();
  if (sal.map.height() != h || sal.map.width() != w)
    throw std::invalid_argument("patch_salimap: saliency is " + std::to_string(sal.map.height()) +
                                "x" + std::to_string(sal.map.width()) + " but image is " +
                                std::to_string(h) + "x" + std::to_string(w));
  PatchPolicy{k, l, PatchMode::salimap, 0}.validate(h, w);

  const std::size_t half = l / 2;
  Raster work = sal.map;
  std::vector<PatchRecord> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int j = 1; j <= k; ++j) {
    const auto [peak_r, peak_c] = argmax(work);
    const float selected = work(peak_r, peak_c);
    const std::size_t a = detail::clamp_center(peak_r, half, h);
    const std::size_t b = detail::clamp_center(peak_c, half, w);

    PatchRecord rec;
    rec.bag_id = bag_id;
    rec.rank_j = j;
    rec.center_row = a;
    rec.center_col = b;
    rec.side_l = l;
    rec.patch = crop_centered(img, a, b, half);
    rec.selection_saliency = selected;

    const float floor_value = work.min();
    rec.degenerate_flag = selected == floor_value;
    for (std::size_t r = a - half; r < a + half; ++r)
      for (std::size_t c = b - half; c < b + half; ++c) work(r, c) = floor_value;
    out.push_back(std::move(rec));
  }
  return out;
}

/// Centers drawn uniformly from [l/2, h - l/2] x [l/2, w - l/2]; row first,
/// then column, for each patch in turn.
inline std::vector<PatchRecord> random_patches(const ImageTensor& img, int k, std::size_t l,
                                               std::uint64_t seed, const std::string& bag_id = {}) {
  const std::size_t h = img.height(), w = img.width();
  PatchPolicy{k, l, PatchMode::random, seed}.validate(h, w);
  const std::size_t half = l / 2;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> rows(half, h - half);
  std::uniform_int_distribution<std::size_t> cols(half, w - half);
  std::vector<PatchRecord> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int j = 1; j <= k; ++j) {
    PatchRecord rec;
    rec.bag_id = bag_id;
    rec.rank_j = j;
    rec.center_row = rows(rng);
    rec.center_col = cols(rng);
    rec.side_l = l;
    rec.patch = crop_centered(img, rec.center_row, rec.center_col, half);
    out.push_back(std::move(rec));
  }
  return out;
}

/// Non-overlapping l x l tiling in row-major order.
inline std::vector<PatchRecord> grid_patches(const ImageTensor& img, std::size_t l,
                                             const std::string& bag_id = {}) {
  const std::size_t h = img.height(), w = img.width();
  PatchPolicy{1, l, PatchMode::grid, 0}.validate(h, w);
  if (h % l != 0 || w % l != 0)
    throw std::invalid_argument("grid_patches: " + std::to_string(h) + "x" + std::to_string(w) +
                                " is not divisible by patch side " + std::to_string(l) +
                                "; resize the image to a multiple of l first");
  const std::size_t half = l / 2;
  std::vector<PatchRecord> out;
  int j = 0;
  for (std::size_t r = half; r < h; r += l)
    for (std::size_t c = half; c < w; c += l) {
      PatchRecord rec;
      rec.bag_id = bag_id;
      rec.rank_j = ++j;
      rec.center_row = r;
      rec.center_col = c;
      rec.side_l = l;
      rec.patch = crop_centered(img, r, c, half);
      out.push_back(std::move(rec));
    }
  return out;
}

// ---------------------------------------------------------------------------
// Patch manifests (JSON lines)

struct PatchManifestEntry {
  std::string bag_id;
  int rank_j = 0;
  std::size_t a = 0;
  std::size_t b = 0;
  std::size_t side_l = 0;
  double selection_saliency = 0.0;
  bool degenerate_flag = false;
  std::string patch_path;

  friend bool operator==(const PatchManifestEntry&, const PatchManifestEntry&) = default;
};

inline PatchManifestEntry manifest_entry(const PatchRecord& rec, std::string patch_path) {
  return {rec.bag_id,     rec.rank_j,          rec.center_row, rec.center_col, rec.side_l,
          rec.selection_saliency, rec.degenerate_flag, std::move(patch_path)};
}

inline void to_json(nlohmann::json& j, const PatchManifestEntry& e) {
  j = nlohmann::json{{"bag_id", e.bag_id},
                     {"rank_j", e.rank_j},
                     {"a", e.a},
                     {"b", e.b},
                     {"side_l", e.side_l},
                     {"selection_saliency", e.selection_saliency},
                     {"degenerate_flag", e.degenerate_flag},
                     {"patch_path", e.patch_path}};
}

inline void from_json(const nlohmann::json& j, PatchManifestEntry& e) {
  j.at("bag_id").get_to(e.bag_id);
  j.at("rank_j").get_to(e.rank_j);
  j.at("a").get_to(e.a);
  j.at("b").get_to(e.b);
  j.at("side_l").get_to(e.side_l);
  j.at("selection_saliency").get_to(e.selection_saliency);
  j.at("degenerate_flag").get_to(e.degenerate_flag);
  j.at("patch_path").get_to(e.patch_path);
}

inline void write_patch_manifest(const std::vector<PatchManifestEntry>& entries,
                                 const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  for (const auto& e : entries) out << nlohmann::json(e).dump() << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<PatchManifestEntry> read_patch_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<PatchManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<PatchManifestEntry>());
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace wsmil

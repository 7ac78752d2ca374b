#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "test_util.hpp"
#include "wsmil/patcher.hpp"

using namespace wsmil;
using wsmil::testing::TempDir;

namespace {

// Pixel value encodes its own coordinates so crops can be checked exactly.
ImageTensor coord_image(std::size_t h, std::size_t w) {
  ImageTensor img(h, w, 1);
  const float n = static_cast<float>(h * w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) img(r, c) = static_cast<float>(r * w + c) / n;
  return img;
}

SaliencyMap sal_of(Raster r) { return {std::move(r), SaliencySource::external_file, "s"}; }

struct Center {
  std::size_t a, b;
  bool operator==(const Center&) const = default;
};

// Independent straight-line transcription of the selection loop.
std::vector<Center> oracle_centers(const Raster& s, int k, std::size_t l) {
  std::vector<std::vector<float>> m(s.height(), std::vector<float>(s.width()));
  for (std::size_t r = 0; r < s.height(); ++r)
    for (std::size_t c = 0; c < s.width(); ++c) m[r][c] = s(r, c);
  const long half = static_cast<long>(l / 2);
  const long h = static_cast<long>(s.height()), w = static_cast<long>(s.width());
  std::vector<Center> out;
  for (int j = 0; j < k; ++j) {
    long br = 0, bc = 0;
    float best = m[0][0], lo = m[0][0];
    for (long r = 0; r < h; ++r)
      for (long c = 0; c < w; ++c) {
        if (m[r][c] > best) {
          best = m[r][c];
          br = r;
          bc = c;
        }
        lo = std::min(lo, m[r][c]);
      }
    if (br < half) br = half;
    if (br > h - half) br = h - half;
    if (bc < half) bc = half;
    if (bc > w - half) bc = w - half;
    for (long r = br - half; r < br + half; ++r)
      for (long c = bc - half; c < bc + half; ++c) m[r][c] = lo;
    out.push_back({static_cast<std::size_t>(br), static_cast<std::size_t>(bc)});
  }
  return out;
}

}  // namespace

TEST(PatchSaliMap, HandExampleSingleSpike) {
  Raster s(6, 6, 1.0f);
  s(2, 3) = 9.0f;
  const auto recs = patch_salimap(coord_image(6, 6), sal_of(s), 2, 4, "b");
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].center_row, 2u);
  EXPECT_EQ(recs[0].center_col, 3u);
  EXPECT_EQ(recs[0].selection_saliency, 9.0);
  EXPECT_FALSE(recs[0].degenerate_flag);
  EXPECT_EQ(recs[0].patch(0, 0), coord_image(6, 6)(0, 1));  // rows [0,4) x cols [1,5)
  EXPECT_EQ(recs[1].center_row, 2u);
  EXPECT_EQ(recs[1].center_col, 2u);
  EXPECT_EQ(recs[1].patch(0, 0), coord_image(6, 6)(0, 0));  // rows [0,4) x cols [0,4)
  EXPECT_EQ(recs[1].selection_saliency, 1.0);
  EXPECT_TRUE(recs[1].degenerate_flag);
  EXPECT_EQ(recs[0].rank_j, 1);
  EXPECT_EQ(recs[1].rank_j, 2);
  EXPECT_EQ(recs[0].bag_id, "b");
}

TEST(PatchSaliMap, ConstantMapIsDegenerate) {
  for (int k : {1, 3, 5}) {
    const auto recs = patch_salimap(coord_image(10, 12), sal_of(Raster(10, 12, 0.3f)), k, 6);
    ASSERT_EQ(recs.size(), static_cast<std::size_t>(k));
    for (const auto& r : recs) {
      EXPECT_EQ(r.center_row, 3u);
      EXPECT_EQ(r.center_col, 3u);
      EXPECT_TRUE(r.degenerate_flag);
    }
  }
}

TEST(PatchSaliMap, ClampsBothPeaks) {
  Raster s(8, 8, 0.0f);
  s(6, 6) = 9.0f;
  s(1, 1) = 8.0f;
  const auto recs = patch_salimap(coord_image(8, 8), sal_of(s), 2, 4);
  EXPECT_EQ((Center{recs[0].center_row, recs[0].center_col}), (Center{6, 6}));
  EXPECT_EQ((Center{recs[1].center_row, recs[1].center_col}), (Center{2, 2}));
  EXPECT_EQ(recs[1].selection_saliency, 8.0);
  EXPECT_FALSE(recs[1].degenerate_flag);
}

TEST(PatchSaliMap, DoesNotMutateInput) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Raster s(20, 20);
  for (float& v : s.data()) v = u(rng);
  const SaliencyMap sal = sal_of(s);
  const SaliencyMap copy = sal;
  patch_salimap(coord_image(20, 20), sal, 5, 6);
  EXPECT_EQ(sal.map, copy.map);
}

TEST(PatchSaliMap, Errors) {
  const ImageTensor img(8, 8, 1);
  EXPECT_THROW(patch_salimap(img, sal_of(Raster(8, 7)), 2, 4), std::invalid_argument);
  EXPECT_THROW(patch_salimap(img, sal_of(Raster(8, 8)), 2, 3), std::invalid_argument);
  EXPECT_THROW(patch_salimap(img, sal_of(Raster(8, 8)), 2, 10), std::invalid_argument);
  EXPECT_THROW(patch_salimap(img, sal_of(Raster(8, 8)), 0, 4), std::invalid_argument);
  EXPECT_THROW(patch_salimap(img, sal_of(Raster(8, 8)), 2, 0), std::invalid_argument);
}

TEST(PatchSaliMap, MatchesOracleOnRandomMaps) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 300; ++t) {
    const std::size_t h = 8 + rng() % 40, w = 8 + rng() % 40;
    const std::size_t l = 2 * (1 + rng() % (std::min(h, w) / 2));
    Raster s(h, w);
    // Coarse levels produce plenty of ties.
    for (float& v : s.data()) v = static_cast<float>(rng() % 7);
    const auto recs = patch_salimap(coord_image(h, w), sal_of(s), 5, l);
    const auto want = oracle_centers(s, 5, l);
    for (int j = 0; j < 5; ++j)
      EXPECT_EQ((Center{recs[j].center_row, recs[j].center_col}), want[j]) << "trial " << t;
  }
}

TEST(PatchSaliMap, SelectionSaliencyNonIncreasing) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (int t = 0; t < 300; ++t) {
    const std::size_t h = 16 + rng() % 40, w = 16 + rng() % 40;
    const std::size_t l = 2 * (1 + rng() % 6);
    Raster s(h, w);
    for (float& v : s.data()) v = u(rng);
    const auto recs = patch_salimap(coord_image(h, w), sal_of(s), 8, l);
    for (std::size_t j = 1; j < recs.size(); ++j)
      EXPECT_LE(recs[j].selection_saliency, recs[j - 1].selection_saliency);
  }
}

TEST(PatchSaliMap, SelectedPeakNeverInsideEarlierBlock) {
  // Locate each round's raw peak from the selection value (values are
  // distinct) and check it lies outside all earlier occluded blocks.
  std::mt19937_64 rng(4);
  for (int t = 0; t < 200; ++t) {
    const std::size_t h = 12 + rng() % 30, w = 12 + rng() % 30;
    const std::size_t l = 2 * (1 + rng() % 5);
    std::vector<float> vals(h * w);
    std::iota(vals.begin(), vals.end(), 1.0f);
    std::shuffle(vals.begin(), vals.end(), rng);
    const Raster s(h, w, vals);
    const auto recs = patch_salimap(coord_image(h, w), sal_of(s), 5, l);
    const std::size_t half = l / 2;
    for (std::size_t j = 1; j < recs.size(); ++j) {
      if (recs[j].degenerate_flag) continue;
      const auto idx = static_cast<std::size_t>(
          std::find(vals.begin(), vals.end(), static_cast<float>(recs[j].selection_saliency)) - vals.begin());
      const std::size_t pr = idx / w, pc = idx % w;
      for (std::size_t i = 0; i < j; ++i) {
        const bool inside = pr >= recs[i].center_row - half && pr < recs[i].center_row + half &&
                            pc >= recs[i].center_col - half && pc < recs[i].center_col + half;
        EXPECT_FALSE(inside) << "trial " << t << " rank " << j + 1;
      }
    }
  }
}

TEST(RandomPatches, SameSeedSameCenters) {
  const ImageTensor img = coord_image(50, 40);
  const auto a = random_patches(img, 5, 10, 42);
  const auto b = random_patches(img, 5, 10, 42);
  const auto c = random_patches(img, 5, 10, 43);
  bool any_diff = false;
  for (int j = 0; j < 5; ++j) {
    EXPECT_EQ(a[j].center_row, b[j].center_row);
    EXPECT_EQ(a[j].center_col, b[j].center_col);
    EXPECT_EQ(a[j].rank_j, j + 1);
    EXPECT_EQ(a[j].selection_saliency, 0.0);
    any_diff |= a[j].center_row != c[j].center_row || a[j].center_col != c[j].center_col;
  }
  EXPECT_TRUE(any_diff);
}

TEST(RandomPatches, FullSideCollapsesToCenter) {
  const ImageTensor img = coord_image(16, 16);
  for (const auto& r : random_patches(img, 5, 16, 9)) {
    EXPECT_EQ(r.center_row, 8u);
    EXPECT_EQ(r.center_col, 8u);
    EXPECT_EQ(r.patch, img);
  }
}

TEST(RandomPatches, CentersUniformChiSquare) {
  // 10,000 centers on 100x100 with l=20: valid range [10, 90] on each axis
  // (81 values). Pearson statistics on both marginals (80 dof) and on a
  // 9x9-binned joint (80 dof) against the 1% critical value 112.3288.
  const ImageTensor img(100, 100, 1);
  constexpr double kCritical = 112.3288;
  std::vector<double> rows(81, 0.0), cols(81, 0.0), joint(81, 0.0);
  const int n_calls = 2000;
  for (int call = 0; call < n_calls; ++call)
    for (const auto& r : random_patches(img, 5, 20, 1000 + call)) {
      ASSERT_GE(r.center_row, 10u);
      ASSERT_LE(r.center_row, 90u);
      ASSERT_GE(r.center_col, 10u);
      ASSERT_LE(r.center_col, 90u);
      rows[r.center_row - 10] += 1;
      cols[r.center_col - 10] += 1;
      joint[((r.center_row - 10) / 9) * 9 + (r.center_col - 10) / 9] += 1;
    }
  auto chi2 = [](const std::vector<double>& obs) {
    double total = 0.0;
    for (double o : obs) total += o;
    const double e = total / static_cast<double>(obs.size());
    double s = 0.0;
    for (double o : obs) s += (o - e) * (o - e) / e;
    return s;
  };
  EXPECT_LT(chi2(rows), kCritical);
  EXPECT_LT(chi2(cols), kCritical);
  EXPECT_LT(chi2(joint), kCritical);
}

TEST(GridPatches, TwelveHundredByFourHundredGivesNine) {
  const ImageTensor big(1200, 1200, 1);
  EXPECT_EQ(grid_patches(big, 400).size(), 9u);
}

TEST(GridPatches, SingleTileIsImage) {
  const ImageTensor img = coord_image(4, 4);
  const auto g = grid_patches(img, 4);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0].patch, img);
}

TEST(GridPatches, RowMajorOrder) {
  const ImageTensor img = coord_image(8, 4);
  const auto g = grid_patches(img, 4);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[0].center_row, 2u);
  EXPECT_EQ(g[1].center_row, 6u);
  EXPECT_EQ(g[1].patch(0, 0), img(4, 0));
  EXPECT_EQ(g[0].rank_j, 1);
  EXPECT_EQ(g[1].rank_j, 2);
}

TEST(GridPatches, PartitionsImage) {
  const std::size_t h = 24, w = 36, l = 6;
  const ImageTensor img = coord_image(h, w);
  std::multiset<float> seen;
  for (const auto& rec : grid_patches(img, l))
    for (float v : rec.patch.data()) seen.insert(v);
  EXPECT_EQ(seen.size(), h * w);
  for (float v : img.data()) EXPECT_EQ(seen.count(v), 1u);
}

TEST(GridPatches, NonDivisibleThrows) {
  try {
    grid_patches(ImageTensor(10, 8, 1), 4);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("resize"), std::string::npos);
  }
}

TEST(PatchManifest, JsonLinesRoundTrip) {
  TempDir dir;
  Raster s(10, 10, 0.0f);
  s(3, 4) = 1.0f;
  const auto recs = patch_salimap(coord_image(10, 10), sal_of(s), 3, 4, "pos_0001");
  std::vector<PatchManifestEntry> entries;
  for (const auto& r : recs) entries.push_back(manifest_entry(r, "p/" + std::to_string(r.rank_j) + ".png"));
  write_patch_manifest(entries, dir / "m.jsonl");
  EXPECT_EQ(read_patch_manifest(dir / "m.jsonl"), entries);
  const auto text = wsmil::testing::slurp(dir / "m.jsonl");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
  for (const char* key : {"bag_id", "rank_j", "\"a\"", "\"b\"", "side_l", "selection_saliency",
                          "degenerate_flag", "patch_path"})
    EXPECT_NE(text.find(key), std::string::npos) << key;
}

TEST(PatchManifest, BadLineReportsLocation) {
  TempDir dir;
  std::ofstream(dir / "bad.jsonl") << "{\"bag_id\": \"x\"}\n";
  try {
    read_patch_manifest(dir / "bad.jsonl");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find(":1:"), std::string::npos);
  }
}

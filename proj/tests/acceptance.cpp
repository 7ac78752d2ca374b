// Acceptance suite: prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. Criteria 5-8 drive the wsmil CLI on the standard
// synthetic benchmark (600 images, 256x256, five seeds).

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "wsmil/evaluator.hpp"
#include "wsmil/minimodel.hpp"
#include "wsmil/mildata.hpp"
#include "wsmil/patcher.hpp"
#include "wsmil/pipeline.hpp"
#include "wsmil/synthgen.hpp"

using namespace wsmil;
using wsmil::testing::TempDir;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o) {
  std::cout << (o.pass ? "PASS" : "FAIL") << "  " << id << ". " << name << ": " << o.detail << std::endl;
  failures += !o.pass;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int run_cli(const std::string& args, std::string* output = nullptr) {
  const std::string cmd = std::string(WSMIL_CLI_PATH) + " " + args + " 2>&1";
  std::unique_ptr<FILE, int (*)(FILE*)> pipe(popen(cmd.c_str(), "r"), pclose);
  if (!pipe) return -1;
  std::string out;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), pipe.get())) > 0) out.append(buf, n);
  const int raw = pclose(pipe.release());
  if (output) *output = out;
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

// 1 -------------------------------------------------------------------------

Outcome salimap_oracle_suite() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20240601);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  const int k = 5;
  int bad = 0;
  std::string first_problem;
  auto fail = [&](int t, const std::string& why) {
    if (bad++ == 0) first_problem = "map " + std::to_string(t) + ": " + why;
  };

  for (int t = 0; t < 1000; ++t) {
    const std::size_t h = 16 + rng() % 241, w = 16 + rng() % 241;
    const std::size_t l_max = std::min<std::size_t>(64, std::min(h, w));
    const std::size_t l = 4 + 2 * (rng() % ((l_max - 4) / 2 + 1));
    const bool quantized = t % 4 == 0;  // tie-heavy maps
    Raster map(h, w, 0.0f);
    for (float& v : map.data()) v = quantized ? static_cast<float>(rng() % 4) : u(rng);
    ImageTensor img(h, w, 1);
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) img(r, c) = u(rng);
    const SaliencyMap sal{map, SaliencySource::computed_cam, "m"};

    const auto recs = patch_salimap(img, sal, k, l);
    const auto again = patch_salimap(img, sal, k, l);
    if (recs.size() != static_cast<std::size_t>(k)) {
      fail(t, "expected 5 patches");
      continue;
    }
    // brute-force global argmax, row-major first
    std::size_t br = 0, bc = 0;
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c)
        if (map(r, c) > map(br, bc)) br = r, bc = c;

    const std::size_t half = l / 2;
    for (std::size_t j = 0; j < recs.size(); ++j) {
      const auto& p = recs[j];
      if (p.center_row < half || p.center_col < half || p.center_row + half > h || p.center_col + half > w)
        fail(t, "patch out of bounds");
      if (p.patch.height() != l || p.patch.width() != l) fail(t, "patch is not l x l");
      else {
        for (std::size_t r = 0; r < l; ++r)
          for (std::size_t c = 0; c < l; ++c)
            if (p.patch(r, c) != img(p.center_row - half + r, p.center_col - half + c)) {
              fail(t, "patch pixels differ from the image window");
              r = l;
              break;
            }
      }
      if (p.rank_j != static_cast<int>(j) + 1) fail(t, "ranks not 1..k");
      if (j > 0 && p.selection_saliency > recs[j - 1].selection_saliency) fail(t, "saliency increases with rank");
      if (p.center_row != again[j].center_row || p.center_col != again[j].center_col ||
          p.selection_saliency != again[j].selection_saliency || !(p.patch == again[j].patch))
        fail(t, "not deterministic");
    }
    const auto& p1 = recs.front();
    if (!(br + half >= p1.center_row && br < p1.center_row + half && bc + half >= p1.center_col &&
          bc < p1.center_col + half))
      fail(t, "patch 1 misses the global argmax");
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = bad == 0 && secs < 30.0;
  std::ostringstream s;
  s << "1000 maps, " << bad << " violations, " << secs << " s (limit 30 s)";
  if (bad) s << "; first: " << first_problem;
  o.detail = s.str();
  return o;
}

// 2 -------------------------------------------------------------------------

Outcome weighted_evaluation_oracle() {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  int convex_bad = 0, rank_bad = 0;
  for (int t = 0; t < 10000; ++t) {
    const std::size_t k = 1 + rng() % 10;
    std::vector<double> p(k);
    for (double& v : p) v = u(rng);
    // oracle: explicit integer weights k, k-1, ..., 1 divided by their sum
    long double num = 0, den = 0;
    for (std::size_t j = 1; j <= k; ++j) {
      num += static_cast<long double>(k + 1 - j) * p[j - 1];
      den += static_cast<long double>(k + 1 - j);
    }
    const double P = weighted_evaluate(p);
    worst = std::max(worst, std::abs(P - static_cast<double>(num / den)));
    if (P < *std::min_element(p.begin(), p.end()) - 1e-15 || P > *std::max_element(p.begin(), p.end()) + 1e-15)
      ++convex_bad;
    if (k >= 2) {
      // moving the larger of two values to the earlier rank never lowers P
      std::size_t i = rng() % k, j = rng() % k;
      if (i > j) std::swap(i, j);
      if (i != j) {
        auto q = p;
        if (q[i] < q[j]) std::swap(q[i], q[j]);
        const double high_first = weighted_evaluate(q);
        std::swap(q[i], q[j]);
        const double low_first = weighted_evaluate(q);
        if (high_first + 1e-15 < low_first) ++rank_bad;
        if (q[i] != q[j] && !(high_first > low_first)) ++rank_bad;
      }
    }
  }
  Outcome o;
  o.pass = worst <= 1e-12 && convex_bad == 0 && rank_bad == 0;
  std::ostringstream s;
  s << "10000 vectors, max |error| " << worst << " (limit 1e-12), convexity violations " << convex_bad
    << ", rank-sensitivity violations " << rank_bad;
  o.detail = s.str();
  return o;
}

// 3 -------------------------------------------------------------------------

Outcome gradient_check() {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 0.5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double h = 1e-4;
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    MiniModel m;
    for (double& w : m.head_weights) w = n(rng);
    m.head_bias = n(rng);
    for (std::size_t f = 0; f < m.num_features(); ++f) {
      m.norm.mean[f] = 0.1 * n(rng);
      m.norm.scale[f] = 0.5 + std::abs(n(rng));
    }
    std::vector<PooledSample> batch(1 + rng() % 32);
    for (auto& s : batch) {
      s.pooled.resize(m.num_features());
      for (double& v : s.pooled) v = u(rng);
      s.label = rng() % 2 ? Label::positive : Label::negative;
    }
    const double wd = 0.0005;
    const auto lg = loss_and_grad(m, batch, wd);
    auto check = [&](double& param, double analytic) {
      const double orig = param;
      param = orig + h;
      const double up = loss_and_grad(m, batch, wd).loss;
      param = orig - h;
      const double down = loss_and_grad(m, batch, wd).loss;
      param = orig;
      const double numeric = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(numeric - analytic) /
                                  std::max({std::abs(numeric), std::abs(analytic), 1e-8}));
    };
    for (std::size_t f = 0; f < m.num_features(); ++f) check(m.head_weights[f], lg.grad_weights[f]);
    check(m.head_bias, lg.grad_bias);
  }
  Outcome o;
  o.pass = worst < 1e-4;
  std::ostringstream s;
  s << "100 models/batches, max relative error " << worst << " (limit 1e-4)";
  o.detail = s.str();
  return o;
}

// 4 -------------------------------------------------------------------------

Outcome cam_gradcam_consistency() {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<float> u(0.0f, 2.0f);
  double worst = 1.0;
  for (int t = 0; t < 50; ++t) {
    MiniModel m;
    for (double& w : m.head_weights) w = n(rng);
    m.head_bias = n(rng);
    for (std::size_t f = 0; f < m.num_features(); ++f) {
      m.norm.mean[f] = 0.1 * n(rng);
      m.norm.scale[f] = 0.5 + std::abs(n(rng));
    }
    const std::size_t H = 8 + rng() % 17, W = 8 + rng() % 17, C = m.num_features();
    FeatureStack fs(H, W, C);
    for (float& v : fs.data) v = u(rng);

    // Grad-CAM channel weights: spatial mean of d logit / d A by central
    // differences over every feature entry.
    std::vector<double> alpha(C, 0.0);
    const float step = 1e-2f;
    for (std::size_t i = 0; i < H * W; ++i)
      for (std::size_t f = 0; f < C; ++f) {
        float& a = fs.data[i * C + f];
        const float orig = a;
        a = orig + step;
        const double up = logit_from_features(m, fs);
        a = orig - step;
        const double down = logit_from_features(m, fs);
        a = orig;
        alpha[f] += (up - down) / (2.0 * step) / static_cast<double>(H * W);
      }
    const Raster cam = cam_pre_relu(fs, m.cam_weights());
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c) {
        double g = 0.0;
        for (std::size_t f = 0; f < C; ++f) g += alpha[f] * fs(r, c, f);
        ab += g * cam(r, c);
        aa += g * g;
        bb += double(cam(r, c)) * cam(r, c);
      }
    worst = std::min(worst, ab / std::sqrt(aa * bb));
  }
  Outcome o;
  o.pass = worst > 0.999;
  std::ostringstream s;
  s << "50 feature stacks, min cosine " << worst << " (limit > 0.999)";
  o.detail = s.str();
  return o;
}

// 5-8 -----------------------------------------------------------------------

struct SeedRun {
  std::uint64_t seed = 0;
  double typical_acc = 0.0;
  double salimap_acc = 0.0;
  int positives = 0;
  int localized = 0;
  bool audit_ok = false;
  std::string audit_detail;
  std::string error;
};

double read_accuracy(const RunLayout& run) { return read_json_file(run.report()).at("accuracy").get<double>(); }

// Independent recount of the training instance rules.
bool recount_train_balance(const DatasetManifest& m, std::string& detail) {
  std::size_t pos_bags = 0, neg_bags = 0, count = 0;
  bool origins_ok = true;
  for (const auto& b : m.bags) {
    if (b.split != Split::train) continue;
    (b.label == Label::positive ? pos_bags : neg_bags)++;
  }
  for (const auto& inst : m.instances) {
    const auto& b = m.bag(inst.bag_id);
    if (b.split != Split::train) continue;
    ++count;
    if (b.label == Label::negative && inst.origin != InstanceOrigin::random) origins_ok = false;
  }
  const std::size_t want = 2 * pos_bags + 5 * neg_bags;
  detail = std::to_string(count) + " train instances for " + std::to_string(pos_bags) + " positive / " +
           std::to_string(neg_bags) + " negative bags (want " + std::to_string(want) + ")";
  if (!origins_ok) detail += ", negative-bag instance with non-random origin";
  return count == want && origins_ok;
}

SeedRun run_seed(std::uint64_t seed) {
  SeedRun r;
  r.seed = seed;
  TempDir data("accept_data"), typical("accept_typical"), salimap("accept_salimap");
  const std::string s = std::to_string(seed);
  std::string out;
  if (run_cli("synth-gen --seed " + s + " --out " + data.path().string(), &out) != 0) {
    r.error = "synth-gen failed: " + out;
    return r;
  }
  const std::string common = "run-all --dataset " + data.path().string() + " --seed " + s;
  if (run_cli(common + " --mode typical --out " + typical.path().string(), &out) != 0) {
    r.error = "typical run failed: " + out;
    return r;
  }
  if (run_cli(common + " --mode salimap --out " + salimap.path().string(), &out) != 0) {
    r.error = "salimap run failed: " + out;
    return r;
  }
  const RunLayout trun{typical.path()}, srun{salimap.path()};
  r.typical_acc = read_accuracy(trun);
  r.salimap_acc = read_accuracy(srun);

  // localization: bag-model CAM argmax within 2 * radius of a true center
  const MiniModel bag_model = load_model(srun.bag_model());
  for (const auto& gt : load_ground_truth(data / "ground_truth.json")) {
    if (gt.label != Label::positive) continue;
    ++r.positives;
    const auto img = load_image(data / "positive" / (gt.bag_id + ".png"));
    const auto [ar, ac] = argmax(model_cam(bag_model, img).map);
    for (const auto& b : gt.blobs)
      if (std::hypot(double(ar) - b.row, double(ac) - b.col) <= 2.0 * b.radius) {
        ++r.localized;
        break;
      }
  }

  const auto manifest = read_manifest(srun.instance_manifest());
  std::string recount;
  const bool recount_ok = recount_train_balance(manifest, recount);
  const auto audit = audit_train_balance(manifest);
  r.audit_ok = recount_ok && audit.ok;
  r.audit_detail = recount;
  if (!audit.ok && !audit.problems.empty()) r.audit_detail += "; " + audit.problems.front();
  return r;
}

Outcome determinism() {
  TempDir data("det_data"), a("det_a"), b("det_b");
  std::string out;
  if (run_cli("synth-gen --seed 1 --out " + data.path().string(), &out) != 0)
    return {false, "synth-gen failed: " + out};
  const std::string common = "run-all --mode salimap --seed 1 --dataset " + data.path().string();
  if (run_cli(common + " --out " + a.path().string(), &out) != 0) return {false, "first run failed: " + out};
  if (run_cli(common + " --out " + b.path().string(), &out) != 0) return {false, "second run failed: " + out};
  const auto ra = wsmil::testing::slurp(RunLayout{a.path()}.report());
  const auto rb = wsmil::testing::slurp(RunLayout{b.path()}.report());
  const bool same = !ra.empty() && ra == rb;
  return {same, same ? "two salimap run-all invocations, report.json byte-identical (" +
                           std::to_string(ra.size()) + " bytes)"
                     : "report.json differs between runs"};
}

}  // namespace

int main() {
  report(1, "patch-salimap oracle suite", salimap_oracle_suite());
  report(2, "weighted evaluation oracle", weighted_evaluation_oracle());
  report(3, "head gradient check", gradient_check());
  report(4, "CAM / Grad-CAM consistency", cam_gradcam_consistency());

  const auto t0 = Clock::now();
  std::vector<SeedRun> runs;
  std::string run_error;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::cerr << "end-to-end seed " << seed << "...\n";
    runs.push_back(run_seed(seed));
    if (!runs.back().error.empty()) {
      run_error = "seed " + std::to_string(seed) + ": " + runs.back().error;
      break;
    }
  }
  const double secs = seconds_since(t0);

  {
    Outcome o;
    std::ostringstream s;
    if (!run_error.empty()) {
      o.pass = false;
      s << run_error;
    } else {
      double typ = 0, sal = 0;
      s << "per seed (typical/salimap):";
      for (const auto& r : runs) {
        typ += r.typical_acc / runs.size();
        sal += r.salimap_acc / runs.size();
        s << " " << r.typical_acc << "/" << r.salimap_acc;
      }
      const double gap = 100.0 * (sal - typ);
      o.pass = gap >= 5.0 && secs < 600.0;
      s << "; mean " << typ << " vs " << sal << ", gap " << gap << " points (need >= 5); " << secs
        << " s (limit 600 s)";
    }
    o.detail = s.str();
    report(5, "end-to-end salimap beats typical", o);
  }
  {
    Outcome o;
    int pos = 0, hit = 0;
    for (const auto& r : runs) {
      pos += r.positives;
      hit += r.localized;
    }
    const double frac = pos ? double(hit) / pos : 0.0;
    o.pass = run_error.empty() && pos > 0 && frac >= 0.8;
    std::ostringstream s;
    s << hit << "/" << pos << " positives localized (" << 100.0 * frac << "%, need >= 80%)";
    o.detail = s.str();
    report(6, "CAM localization", o);
  }
  {
    Outcome o;
    o.pass = run_error.empty() && !runs.empty();
    std::ostringstream s;
    for (const auto& r : runs) {
      o.pass = o.pass && r.audit_ok;
      s << "seed " << r.seed << ": " << r.audit_detail << (r.audit_ok ? "" : " [bad]") << "; ";
    }
    o.detail = s.str();
    report(7, "training balance audit", o);
  }
  report(8, "run-all determinism", determinism());

  std::cout << (failures == 0 ? "ALL CRITERIA PASSED" : std::to_string(failures) + " CRITERIA FAILED")
            << std::endl;
  return failures == 0 ? 0 : 1;
}

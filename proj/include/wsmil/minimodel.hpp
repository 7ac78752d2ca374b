#pragma once

// A small size-agnostic classifier: fixed filter bank on luminance -> ReLU ->
// global average pooling -> logistic head. Only the head is trained (AdaDelta
// on binary cross-entropy with L2 weight decay), so the objective is convex
// and the GAP + linear structure makes class activation maps exact.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "wsmil/common.hpp"
#include "wsmil/png_io.hpp"
#include "wsmil/raster.hpp"
#include "wsmil/saliency.hpp"

namespace wsmil {

// ---------------------------------------------------------------------------
// Filter bank

/// Odd-sided square kernel applied as a cross-correlation. `weights` is the
/// dense size x size form; when `separable` is non-empty the kernel equals
/// the sum of the outer products (column x row) and is evaluated that way.
struct Kernel {
  std::string name;
  std::size_t size = 0;
  std::vector<double> weights;
  std::vector<std::pair<std::vector<double>, std::vector<double>>> separable;

  std::size_t radius() const { return size / 2; }
  double at(std::size_t r, std::size_t c) const { return weights[r * size + c]; }
};

inline Kernel dense_kernel(std::string name, std::size_t size, std::vector<double> weights) {
  if (size % 2 == 0 || weights.size() != size * size)
    throw std::invalid_argument("kernel '" + name + "' must be odd-sided and square");
  return {std::move(name), size, std::move(weights), {}};
}

inline Kernel separable_kernel(std::string name,
                               std::vector<std::pair<std::vector<double>, std::vector<double>>> terms) {
  if (terms.empty()) throw std::invalid_argument("separable kernel needs at least one term");
  const std::size_t size = terms.front().first.size();
  if (size % 2 == 0) throw std::invalid_argument("kernel '" + name + "' must be odd-sided");
  std::vector<double> dense(size * size, 0.0);
  for (const auto& [col, row] : terms) {
    if (col.size() != size || row.size() != size)
      throw std::invalid_argument("kernel '" + name + "': inconsistent term sizes");
    for (std::size_t r = 0; r < size; ++r)
      for (std::size_t c = 0; c < size; ++c) dense[r * size + c] += col[r] * row[c];
  }
  return {std::move(name), size, std::move(dense), std::move(terms)};
}

struct FilterBank {
  std::string id;
  std::vector<Kernel> kernels;

  std::size_t max_size() const {
    std::size_t m = 0;
    for (const auto& k : kernels) m = std::max(m, k.size);
    return m;
  }
};

namespace detail {

inline std::vector<double> gaussian_1d(double sigma, std::size_t radius) {
  std::vector<double> g(2 * radius + 1);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double x = static_cast<double>(i) - static_cast<double>(radius);
    g[i] = std::exp(-x * x / (2.0 * sigma * sigma));
  }
  const double s = std::accumulate(g.begin(), g.end(), 0.0);
  for (double& v : g) v /= s;
  return g;
}

inline Kernel difference_of_gaussians(std::string name, double sigma_center, double sigma_surround) {
  const auto radius = static_cast<std::size_t>(std::ceil(3.0 * sigma_surround));
  auto center = gaussian_1d(sigma_center, radius);
  auto surround = gaussian_1d(sigma_surround, radius);
  auto neg = surround;
  for (double& v : neg) v = -v;
  return separable_kernel(std::move(name), {{center, center}, {surround, neg}});
}

}  // namespace detail

inline constexpr const char* kDefaultFilterBankId = "dog2-edge4-lap-cs/v1";

/// Eight fixed kernels: two difference-of-Gaussians scales, four oriented
/// Sobel edges, a 4-neighbour Laplacian and a 3x3-vs-7x7 center-surround.
inline FilterBank default_filter_bank() {
  FilterBank bank;
  bank.id = kDefaultFilterBankId;
  bank.kernels.push_back(detail::difference_of_gaussians("dog_fine", 1.0, 1.6));
  bank.kernels.push_back(detail::difference_of_gaussians("dog_coarse", 2.0, 3.2));
  const double e = 1.0 / 8.0;
  bank.kernels.push_back(dense_kernel("edge_0", 3, {-e, 0, e, -2 * e, 0, 2 * e, -e, 0, e}));
  bank.kernels.push_back(dense_kernel("edge_45", 3, {0, e, 2 * e, -e, 0, e, -2 * e, -e, 0}));
  bank.kernels.push_back(dense_kernel("edge_90", 3, {-e, -2 * e, -e, 0, 0, 0, e, 2 * e, e}));
  bank.kernels.push_back(dense_kernel("edge_135", 3, {2 * e, e, 0, e, 0, -e, 0, -e, -2 * e}));
  bank.kernels.push_back(dense_kernel("laplacian", 3, {0, 1, 0, 1, -4, 1, 0, 1, 0}));
  std::vector<double> cs(49, -1.0 / 40.0);
  for (std::size_t r = 2; r <= 4; ++r)
    for (std::size_t c = 2; c <= 4; ++c) cs[r * 7 + c] = 1.0 / 9.0;
  bank.kernels.push_back(dense_kernel("center_surround", 7, std::move(cs)));
  return bank;
}

// ---------------------------------------------------------------------------
// Convolution (same size output, edge-replicated borders)

namespace detail {

// Image padded by `pad` on every side with replicated border pixels.
struct Padded {
  std::size_t pad, h, w, pw;
  std::vector<float> data;
  float at(std::size_t r, std::size_t c) const { return data[r * pw + c]; }
};

inline Padded pad_replicate(const Raster& img, std::size_t pad) {
  const std::size_t h = img.height(), w = img.width(), pw = w + 2 * pad;
  Padded p{pad, h, w, pw, std::vector<float>((h + 2 * pad) * pw)};
  for (std::size_t r = 0; r < h + 2 * pad; ++r) {
    const std::size_t sr = std::clamp<long>(static_cast<long>(r) - static_cast<long>(pad), 0,
                                            static_cast<long>(h) - 1);
    for (std::size_t c = 0; c < pw; ++c) {
      const std::size_t sc = std::clamp<long>(static_cast<long>(c) - static_cast<long>(pad), 0,
                                              static_cast<long>(w) - 1);
      p.data[r * pw + c] = img(sr, sc);
    }
  }
  return p;
}

inline std::vector<float> correlate_direct(const Padded& p, const Kernel& k) {
  const std::size_t rad = k.radius(), off = p.pad - rad;
  std::vector<float> out(p.h * p.w);
  for (std::size_t r = 0; r < p.h; ++r)
    for (std::size_t c = 0; c < p.w; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < k.size; ++i) {
        const float* row = p.data.data() + (r + off + i) * p.pw + c + off;
        const double* kw = k.weights.data() + i * k.size;
        for (std::size_t j = 0; j < k.size; ++j) acc += kw[j] * row[j];
      }
      out[r * p.w + c] = static_cast<float>(acc);
    }
  return out;
}

inline std::vector<float> correlate_separable(const Padded& p, const Kernel& k) {
  const std::size_t rad = k.radius(), off = p.pad - rad;
  const std::size_t rows = p.h + 2 * rad;
  std::vector<double> acc(p.h * p.w, 0.0);
  std::vector<double> tmp(rows * p.w);
  for (const auto& [col, row] : k.separable) {
    // horizontal pass over every padded row the vertical pass will touch
    for (std::size_t r = 0; r < rows; ++r) {
      const float* src = p.data.data() + (r + off) * p.pw + off;
      for (std::size_t c = 0; c < p.w; ++c) {
        double s = 0.0;
        for (std::size_t j = 0; j < k.size; ++j) s += row[j] * src[c + j];
        tmp[r * p.w + c] = s;
      }
    }
    for (std::size_t r = 0; r < p.h; ++r)
      for (std::size_t i = 0; i < k.size; ++i) {
        const double wgt = col[i];
        const double* src = tmp.data() + (r + i) * p.w;
        double* dst = acc.data() + r * p.w;
        for (std::size_t c = 0; c < p.w; ++c) dst[c] += wgt * src[c];
      }
  }
  return {acc.begin(), acc.end()};
}

}  // namespace detail

/// Same-size cross-correlation with edge replication. Uses the separable
/// form when the kernel provides one.
inline Raster correlate(const Raster& img, const Kernel& k, bool allow_separable = true) {
  if (img.height() < k.size || img.width() < k.size)
    throw std::invalid_argument("correlate: " + std::to_string(img.height()) + "x" +
                                std::to_string(img.width()) + " input is smaller than the " +
                                std::to_string(k.size) + "x" + std::to_string(k.size) +
                                " kernel '" + k.name + "'");
  const auto padded = detail::pad_replicate(img, k.radius());
  auto out = allow_separable && !k.separable.empty() ? detail::correlate_separable(padded, k)
                                                     : detail::correlate_direct(padded, k);
  return Raster(img.height(), img.width(), std::move(out));
}

// ---------------------------------------------------------------------------
// Model

/// Per-feature affine standardization applied to pooled features before the
/// head: z = (pooled - mean) / scale. Identity by default.
struct FeatureNorm {
  std::vector<double> mean;
  std::vector<double> scale;
};

class MiniModel {
  FilterBank bank_;  // declared first: the parameter vectors are sized from it

 public:
  MiniModel() : MiniModel(default_filter_bank()) {}

  explicit MiniModel(FilterBank bank)
      : bank_(std::move(bank)),
        head_weights(bank_.kernels.size(), 0.0),
        norm{std::vector<double>(bank_.kernels.size(), 0.0),
             std::vector<double>(bank_.kernels.size(), 1.0)} {
    if (bank_.kernels.empty()) throw std::invalid_argument("MiniModel: empty filter bank");
  }

  const FilterBank& bank() const { return bank_; }
  std::size_t num_features() const { return bank_.kernels.size(); }

  /// Head weights expressed on raw pooled features: w / scale. These are the
  /// CAM class weights.
  std::vector<double> cam_weights() const {
    std::vector<double> w(num_features());
    for (std::size_t f = 0; f < w.size(); ++f) w[f] = head_weights[f] / norm.scale[f];
    return w;
  }

  /// Bias on raw pooled features: b - sum_f w_f * mean_f / scale_f.
  double cam_bias() const {
    double b = head_bias;
    for (std::size_t f = 0; f < num_features(); ++f) b -= head_weights[f] * norm.mean[f] / norm.scale[f];
    return b;
  }

  std::vector<double> standardize(std::span<const double> pooled) const {
    if (pooled.size() != num_features())
      throw std::invalid_argument("MiniModel: expected " + std::to_string(num_features()) +
                                  " pooled features, got " + std::to_string(pooled.size()));
    std::vector<double> z(pooled.size());
    for (std::size_t f = 0; f < z.size(); ++f) z[f] = (pooled[f] - norm.mean[f]) / norm.scale[f];
    return z;
  }

  double logit_from_pooled(std::span<const double> pooled) const {
    const auto z = standardize(pooled);
    double s = head_bias;
    for (std::size_t f = 0; f < z.size(); ++f) s += head_weights[f] * z[f];
    return s;
  }

  std::vector<double> head_weights;
  double head_bias = 0.0;
  FeatureNorm norm;
  nlohmann::json training_meta = nlohmann::json::object();
};

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct ForwardResult {
  FeatureStack features;
  std::vector<double> pooled;
  double logit = 0.0;
  double prob = 0.0;
};

/// Rectified filter responses of the luminance channel, channel-last.
inline FeatureStack compute_features(const MiniModel& model, const ImageTensor& img) {
  const auto& bank = model.bank();
  if (img.height() < bank.max_size() || img.width() < bank.max_size())
    throw std::invalid_argument("forward: image " + std::to_string(img.height()) + "x" +
                                std::to_string(img.width()) + " is smaller than the largest kernel (" +
                                std::to_string(bank.max_size()) + ")");
  const Raster lum = luminance(img);
  const std::size_t F = bank.kernels.size();
  FeatureStack fs(img.height(), img.width(), F);
  for (std::size_t f = 0; f < F; ++f) {
    const Raster resp = correlate(lum, bank.kernels[f]);
    auto src = resp.data();
    for (std::size_t i = 0; i < src.size(); ++i) fs.data[i * F + f] = std::max(src[i], 0.0f);
  }
  return fs;
}

inline std::vector<double> global_average_pool(const FeatureStack& fs) {
  std::vector<double> pooled(fs.channels, 0.0);
  const std::size_t n = fs.fheight * fs.fwidth;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t f = 0; f < fs.channels; ++f) pooled[f] += fs.data[i * fs.channels + f];
  for (double& v : pooled) v /= static_cast<double>(n);
  return pooled;
}

/// Logit as a function of the (rectified) feature stack.
inline double logit_from_features(const MiniModel& model, const FeatureStack& fs) {
  return model.logit_from_pooled(global_average_pool(fs));
}

inline ForwardResult forward(const MiniModel& model, const ImageTensor& img) {
  ForwardResult r;
  r.features = compute_features(model, img);
  r.pooled = global_average_pool(r.features);
  r.logit = model.logit_from_pooled(r.pooled);
  r.prob = sigmoid(r.logit);
  return r;
}

inline std::vector<double> pooled_features(const MiniModel& model, const ImageTensor& img) {
  return global_average_pool(compute_features(model, img));
}

/// CAM of `img` under `model`, at image resolution.
inline SaliencyMap model_cam(const MiniModel& model, const ImageTensor& img,
                             std::string image_id = {}) {
  const auto w = model.cam_weights();
  return compute_cam(compute_features(model, img), w, std::move(image_id));
}

// ---------------------------------------------------------------------------
// Loss

struct PooledSample {
  std::vector<double> pooled;
  Label label = Label::negative;
};

struct LabeledImage {
  ImageTensor image;
  Label label = Label::negative;
};

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad_weights;
  double grad_bias = 0.0;
};

inline constexpr double kProbClip = 1e-12;

/// Mean binary cross-entropy plus weight_decay * ||w||^2 (bias excluded),
/// with analytic gradients.
inline LossGrad loss_and_grad(const MiniModel& model, std::span<const PooledSample> batch,
                              double weight_decay) {
  if (batch.empty()) throw std::invalid_argument("loss_and_grad: empty batch");
  const std::size_t F = model.num_features();
  LossGrad out;
  out.grad_weights.assign(F, 0.0);
  for (const auto& s : batch) {
    const auto z = model.standardize(s.pooled);
    double logit = model.head_bias;
    for (std::size_t f = 0; f < F; ++f) logit += model.head_weights[f] * z[f];
    const double p = std::clamp(sigmoid(logit), kProbClip, 1.0 - kProbClip);
    const double y = s.label == Label::positive ? 1.0 : 0.0;
    out.loss -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    const double d = p - y;
    for (std::size_t f = 0; f < F; ++f) out.grad_weights[f] += d * z[f];
    out.grad_bias += d;
  }
  const double n = static_cast<double>(batch.size());
  out.loss /= n;
  out.grad_bias /= n;
  for (std::size_t f = 0; f < F; ++f) {
    out.grad_weights[f] = out.grad_weights[f] / n + 2.0 * weight_decay * model.head_weights[f];
    out.loss += weight_decay * model.head_weights[f] * model.head_weights[f];
  }
  return out;
}

inline LossGrad loss_and_grad(const MiniModel& model, std::span<const LabeledImage> batch,
                              double weight_decay) {
  std::vector<PooledSample> pooled;
  pooled.reserve(batch.size());
  for (const auto& s : batch) pooled.push_back({pooled_features(model, s.image), s.label});
  return loss_and_grad(model, pooled, weight_decay);
}

// ---------------------------------------------------------------------------
// AdaDelta

struct AdaDeltaState {
  double rho = 0.95;
  double eps = 1e-6;
  double lr = 0.1;
  double weight_decay = 0.0005;
  std::vector<double> acc_grad_sq;
  std::vector<double> acc_update_sq;
};

/// One AdaDelta step in place; returns the applied per-parameter change
/// (lr * delta). Accumulators are created on first use.
inline std::vector<double> adadelta_step(AdaDeltaState& st, std::span<double> params,
                                         std::span<const double> grads) {
  if (!(st.rho > 0.0 && st.rho < 1.0)) throw std::invalid_argument("adadelta: rho must lie in (0, 1)");
  if (st.acc_grad_sq.empty() && st.acc_update_sq.empty()) {
    st.acc_grad_sq.assign(params.size(), 0.0);
    st.acc_update_sq.assign(params.size(), 0.0);
  }
  if (grads.size() != params.size() || st.acc_grad_sq.size() != params.size() ||
      st.acc_update_sq.size() != params.size())
    throw std::invalid_argument("adadelta: shape mismatch between params (" +
                                std::to_string(params.size()) + "), grads (" +
                                std::to_string(grads.size()) + ") and accumulators (" +
                                std::to_string(st.acc_grad_sq.size()) + ")");
  std::vector<double> applied(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    st.acc_grad_sq[i] = st.rho * st.acc_grad_sq[i] + (1.0 - st.rho) * g * g;
    const double delta =
        -std::sqrt(st.acc_update_sq[i] + st.eps) / std::sqrt(st.acc_grad_sq[i] + st.eps) * g;
    st.acc_update_sq[i] = st.rho * st.acc_update_sq[i] + (1.0 - st.rho) * delta * delta;
    applied[i] = st.lr * delta;
    params[i] += applied[i];
  }
  return applied;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t batch_size = 32;  // at most 128
  int epochs = 100;
  std::uint64_t seed = 0;
  bool augment = false;
  int patience = 20;
  double lr = 0.1;
  double rho = 0.95;
  double eps = 1e-6;
  double weight_decay = 0.0005;
  /// Fit the feature standardization on the training set before training.
  bool fit_normalization = false;

  void validate() const {
    if (batch_size < 1 || batch_size > 128)
      throw std::invalid_argument("TrainConfig: batch_size must lie in [1, 128]");
    if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
    if (patience < 1) throw std::invalid_argument("TrainConfig: patience must be >= 1");
  }
};

struct TrainLogRow {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct TrainResult {
  MiniModel model;
  std::vector<TrainLogRow> log;
  int best_epoch = 0;
};

struct LossAcc {
  double loss = 0.0;
  double acc = 0.0;
};

inline LossAcc evaluate_samples(const MiniModel& model, std::span<const PooledSample> samples,
                                double weight_decay) {
  if (samples.empty()) return {std::numeric_limits<double>::quiet_NaN(),
                               std::numeric_limits<double>::quiet_NaN()};
  const double loss = loss_and_grad(model, samples, weight_decay).loss;
  std::size_t correct = 0;
  for (const auto& s : samples) {
    const bool pos = sigmoid(model.logit_from_pooled(s.pooled)) >= 0.5;
    correct += pos == (s.label == Label::positive);
  }
  return {loss, static_cast<double>(correct) / static_cast<double>(samples.size())};
}

inline FeatureNorm fit_feature_norm(std::span<const PooledSample> samples, std::size_t F) {
  FeatureNorm n{std::vector<double>(F, 0.0), std::vector<double>(F, 1.0)};
  const double cnt = static_cast<double>(samples.size());
  for (const auto& s : samples)
    for (std::size_t f = 0; f < F; ++f) n.mean[f] += s.pooled[f] / cnt;
  for (std::size_t f = 0; f < F; ++f) {
    double var = 0.0;
    for (const auto& s : samples) var += (s.pooled[f] - n.mean[f]) * (s.pooled[f] - n.mean[f]);
    const double sd = std::sqrt(var / cnt);
    n.scale[f] = sd > 1e-12 ? sd : 1.0;
  }
  return n;
}

/// Draws the training sample used for one minibatch slot. Receives the
/// sample index and the training RNG.
using SampleFn = std::function<PooledSample(std::size_t, std::mt19937_64&)>;

/// Minibatch AdaDelta over pooled features. Monitors validation loss (train
/// loss when `val` is empty), keeps the best parameters, and stops after
/// `patience` epochs without improvement. Epoch 0 is the initial model.
inline TrainResult train_on_features(MiniModel model, std::span<const PooledSample> train,
                                     std::span<const PooledSample> val, const TrainConfig& config,
                                     const SampleFn& draw = {}) {
  config.validate();
  if (train.empty()) throw std::invalid_argument("train: empty training set");
  const std::size_t F = model.num_features();
  for (const auto& s : train)
    if (s.pooled.size() != F) throw std::invalid_argument("train: pooled feature size mismatch");
  if (config.fit_normalization) model.norm = fit_feature_norm(train, F);

  AdaDeltaState opt{config.rho, config.eps, config.lr, config.weight_decay, {}, {}};
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result{model, {}, 0};
  auto record = [&](int epoch) {
    const auto tr = evaluate_samples(model, train, config.weight_decay);
    const auto va = evaluate_samples(model, val, config.weight_decay);
    result.log.push_back({epoch, tr.loss, tr.acc, va.loss, va.acc});
    return val.empty() ? tr.loss : va.loss;
  };
  // Epoch 0 (the starting point) is logged but never selected.
  record(0);
  double best = std::numeric_limits<double>::infinity();

  std::vector<double> params(F + 1);
  std::vector<double> grads(F + 1);
  std::vector<PooledSample> batch;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t i = start; i < stop; ++i)
        batch.push_back(draw ? draw(order[i], rng) : train[order[i]]);
      const auto lg = loss_and_grad(model, batch, config.weight_decay);
      std::copy(model.head_weights.begin(), model.head_weights.end(), params.begin());
      params[F] = model.head_bias;
      std::copy(lg.grad_weights.begin(), lg.grad_weights.end(), grads.begin());
      grads[F] = lg.grad_bias;
      adadelta_step(opt, params, grads);
      std::copy(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(F),
                model.head_weights.begin());
      model.head_bias = params[F];
    }
    const double monitored = record(epoch);
    if (monitored < best) {
      best = monitored;
      result.best_epoch = epoch;
      result.model = model;
    } else if (epoch - result.best_epoch >= config.patience) {
      break;
    }
  }
  result.model.training_meta = {{"best_epoch", result.best_epoch},
                                {"epochs_run", result.log.back().epoch},
                                {"train_samples", train.size()},
                                {"val_samples", val.size()},
                                {"lr", config.lr},
                                {"weight_decay", config.weight_decay},
                                {"batch_size", config.batch_size},
                                {"seed", config.seed},
                                {"augment", config.augment}};
  return result;
}

/// Trains on images. Without augmentation pooled features are computed once;
/// with it, every minibatch slot re-renders its image under a fresh random
/// AugmentSpec (fill 0).
inline TrainResult train(const MiniModel& model, std::span<const LabeledImage> train_set,
                         std::span<const LabeledImage> val_set, const TrainConfig& config) {
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  std::vector<PooledSample> tr, va;
  tr.reserve(train_set.size());
  for (const auto& s : train_set) tr.push_back({pooled_features(model, s.image), s.label});
  for (const auto& s : val_set) va.push_back({pooled_features(model, s.image), s.label});
  SampleFn draw;
  if (config.augment) {
    draw = [&](std::size_t i, std::mt19937_64& rng) {
      const auto spec = random_augment_spec(rng);
      return PooledSample{pooled_features(model, augment(train_set[i].image, spec)),
                          train_set[i].label};
    };
  }
  return train_on_features(model, tr, va, config, draw);
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json model_to_json(const MiniModel& m) {
  return {{"filter_bank_id", m.bank().id},
          {"head_weights", m.head_weights},
          {"head_bias", m.head_bias},
          {"feature_mean", m.norm.mean},
          {"feature_scale", m.norm.scale},
          {"training_meta", m.training_meta}};
}

inline MiniModel model_from_json(const nlohmann::json& j) {
  const auto id = j.at("filter_bank_id").get<std::string>();
  if (id != kDefaultFilterBankId)
    throw std::invalid_argument("unknown filter bank '" + id + "'");
  MiniModel m;
  m.head_weights = j.at("head_weights").get<std::vector<double>>();
  m.head_bias = j.at("head_bias").get<double>();
  m.norm.mean = j.at("feature_mean").get<std::vector<double>>();
  m.norm.scale = j.at("feature_scale").get<std::vector<double>>();
  if (j.contains("training_meta")) m.training_meta = j.at("training_meta");
  const std::size_t F = m.num_features();
  if (m.head_weights.size() != F || m.norm.mean.size() != F || m.norm.scale.size() != F)
    throw std::invalid_argument("model JSON: parameter count does not match filter bank");
  return m;
}

inline void save_model(const MiniModel& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << model_to_json(m).dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

inline MiniModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return model_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed model file " + path.string() + ": " + e.what());
  }
}

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return {buf, end};
}

inline void write_train_log(const std::vector<TrainLogRow>& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  for (const auto& r : log)
    out << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.train_acc) << ','
        << format_double(r.val_loss) << ',' << format_double(r.val_acc) << '\n';
}

}  // namespace wsmil

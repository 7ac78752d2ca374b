#pragma once

// Bag-level decisions from ranked instance probabilities, and the binary
// accuracy / F1 report.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "wsmil/common.hpp"
#include "wsmil/png_io.hpp"

namespace wsmil {

namespace detail {

inline void check_probs(std::span<const double> probs, const char* who) {
  if (probs.empty()) throw std::invalid_argument(std::string(who) + ": no instance probabilities");
  for (double p : probs)
    if (!(p >= 0.0 && p <= 1.0))
      throw std::invalid_argument(std::string(who) + ": probability " + std::to_string(p) +
                                  " outside [0, 1]");
}

}  // namespace detail

/// Weighted evaluation: rank j (1-based) gets weight k - j + 1, normalized by
/// k(k+1)/2. `probs` must be in saliency-rank order.
inline double weighted_evaluate(std::span<const double> probs) {
  detail::check_probs(probs, "weighted_evaluate");
  const std::size_t k = probs.size();
  double num = 0.0;
  for (std::size_t j = 0; j < k; ++j) num += static_cast<double>(k - j) * probs[j];
  return num / (static_cast<double>(k) * static_cast<double>(k + 1) / 2.0);
}

// Unweighted contrasts; not used by the pipeline.
inline double aggregate_mean(std::span<const double> probs) {
  detail::check_probs(probs, "aggregate_mean");
  double s = 0.0;
  for (double p : probs) s += p;
  return s / static_cast<double>(probs.size());
}

inline double aggregate_max(std::span<const double> probs) {
  detail::check_probs(probs, "aggregate_max");
  return *std::max_element(probs.begin(), probs.end());
}

/// Positive iff P >= threshold.
inline Label classify_bag(double P, double threshold = 0.5) {
  return P >= threshold ? Label::positive : Label::negative;
}

struct BagPrediction {
  std::string bag_id;
  std::vector<double> instance_probs;  // rank order, j = 1 first
  double aggregate_P = 0.0;
  Label predicted_label = Label::negative;
  Label true_label = Label::negative;
};

inline BagPrediction predict_bag(std::string bag_id, std::vector<double> instance_probs,
                                 Label truth, double threshold = 0.5) {
  BagPrediction p;
  p.bag_id = std::move(bag_id);
  p.aggregate_P = weighted_evaluate(instance_probs);
  p.instance_probs = std::move(instance_probs);
  p.predicted_label = classify_bag(p.aggregate_P, threshold);
  p.true_label = truth;
  return p;
}

struct Confusion {
  long tp = 0, fp = 0, fn = 0, tn = 0;
  long total() const { return tp + fp + fn + tn; }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

struct MetricsReport {
  double accuracy = 0.0;
  double f1 = 0.0;
  Confusion confusion;
};

inline MetricsReport metrics(std::span<const BagPrediction> predictions) {
  if (predictions.empty()) throw std::invalid_argument("metrics: no predictions");
  Confusion c;
  for (const auto& p : predictions) {
    const bool pred = p.predicted_label == Label::positive;
    const bool truth = p.true_label == Label::positive;
    if (pred && truth) ++c.tp;
    else if (pred) ++c.fp;
    else if (truth) ++c.fn;
    else ++c.tn;
  }
  MetricsReport r;
  r.confusion = c;
  r.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  const long denom = 2 * c.tp + c.fp + c.fn;
  r.f1 = denom == 0 ? 0.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
  return r;
}

// ---------------------------------------------------------------------------
// Report files

inline nlohmann::json report_json(std::span<const BagPrediction> predictions,
                                  const MetricsReport& m, double threshold) {
  nlohmann::json per_bag = nlohmann::json::array();
  for (const auto& p : predictions)
    per_bag.push_back({{"bag_id", p.bag_id},
                       {"instance_probs", p.instance_probs},
                       {"aggregate_P", p.aggregate_P},
                       {"predicted_label", to_string(p.predicted_label)},
                       {"true_label", to_string(p.true_label)}});
  return {{"threshold", threshold},
          {"per_bag", std::move(per_bag)},
          {"accuracy", m.accuracy},
          {"f1", m.f1},
          {"confusion",
           {{"tp", m.confusion.tp}, {"fp", m.confusion.fp}, {"fn", m.confusion.fn},
            {"tn", m.confusion.tn}}}};
}

inline void write_report(std::span<const BagPrediction> predictions, const MetricsReport& m,
                         double threshold, const std::filesystem::path& json_path,
                         const std::filesystem::path& csv_path) {
  {
    std::ofstream out(json_path);
    if (!out) throw IoError("cannot open for writing: " + json_path.string());
    out << report_json(predictions, m, threshold).dump(2) << '\n';
  }
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot open for writing: " + csv_path.string());
  csv << "threshold,bags,accuracy,f1,tp,fp,fn,tn\n";
  csv << nlohmann::json(threshold).dump() << ',' << m.confusion.total() << ','
      << nlohmann::json(m.accuracy).dump() << ',' << nlohmann::json(m.f1).dump() << ','
      << m.confusion.tp << ',' << m.confusion.fp << ',' << m.confusion.fn << ','
      << m.confusion.tn << '\n';
}

}  // namespace wsmil

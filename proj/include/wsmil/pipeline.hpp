#pragma once

// The four-step pipeline as independently runnable stages over a run
// directory. Each stage reads its predecessors' files and writes its own
// subdirectory:
//
//   split/manifest.json
//   bag_model/{model.json, train_log.csv}
//   saliency/<bag_id>.salm
//   patches/{salimap,random,grid}.jsonl, patches/<origin>/<bag_id>_<rank>.png
//   instances/manifest.json
//   instance_model/{model.json, train_log.csv}
//   eval/{report.json, summary.csv}

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "wsmil/evaluator.hpp"
#include "wsmil/mildata.hpp"
#include "wsmil/minimodel.hpp"
#include "wsmil/patcher.hpp"
#include "wsmil/png_io.hpp"
#include "wsmil/saliency.hpp"

namespace wsmil {

enum class Mode { typical, baseline_grid, salimap };

inline std::string to_string(Mode m) {
  switch (m) {
    case Mode::typical: return "typical";
    case Mode::baseline_grid: return "baseline_grid";
    case Mode::salimap: return "salimap";
  }
  return "?";
}

inline Mode parse_mode(const std::string& s) {
  if (s == "typical") return Mode::typical;
  if (s == "baseline_grid") return Mode::baseline_grid;
  if (s == "salimap") return Mode::salimap;
  throw std::invalid_argument("unknown mode '" + s + "' (expected typical, baseline_grid or salimap)");
}

/// Failure inside a named stage; what() is "[stage] message".
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& message)
      : std::runtime_error("[" + stage + "] " + message), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct PipelineConfig {
  std::string dataset;
  std::string out;
  std::uint64_t seed = 0;
  Mode mode = Mode::salimap;
  int k = 5;
  std::size_t patch_side = 64;
  SplitRatios ratios;
  double threshold = 0.5;
  TrainConfig bag_training;
  TrainConfig instance_training;
  /// Optional directory of precomputed maps (<bag_id>.salm or <bag_id>.png)
  /// used instead of the bag model's CAM.
  std::string saliency_dir;

  void validate() const {
    if (out.empty()) throw std::invalid_argument("config: output directory is not set");
    if (k < 1) throw std::invalid_argument("config: k must be >= 1");
    if (patch_side == 0 || patch_side % 2 != 0)
      throw std::invalid_argument("config: patch_side must be a positive even integer");
    if (!(threshold >= 0.0 && threshold <= 1.0))
      throw std::invalid_argument("config: threshold must lie in [0, 1]");
    ratios.validate();
    bag_training.validate();
    instance_training.validate();
  }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> known,
                                const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + ": expected a JSON object");
  std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) throw std::invalid_argument(where + ": unknown key '" + key + "'");
}

template <class T>
void take(const nlohmann::json& j, const char* key, T& dst) {
  if (j.contains(key)) j.at(key).get_to(dst);
}

}  // namespace detail

inline nlohmann::json train_config_json(const TrainConfig& t) {
  return {{"batch_size", t.batch_size}, {"epochs", t.epochs},     {"augment", t.augment},
          {"patience", t.patience},     {"lr", t.lr},             {"rho", t.rho},
          {"eps", t.eps},               {"weight_decay", t.weight_decay}};
}

inline void update_train_config(TrainConfig& t, const nlohmann::json& j, const std::string& where) {
  detail::reject_unknown_keys(
      j, {"batch_size", "epochs", "augment", "patience", "lr", "rho", "eps", "weight_decay"}, where);
  detail::take(j, "batch_size", t.batch_size);
  detail::take(j, "epochs", t.epochs);
  detail::take(j, "augment", t.augment);
  detail::take(j, "patience", t.patience);
  detail::take(j, "lr", t.lr);
  detail::take(j, "rho", t.rho);
  detail::take(j, "eps", t.eps);
  detail::take(j, "weight_decay", t.weight_decay);
}

inline nlohmann::json config_json(const PipelineConfig& c) {
  return {{"dataset", c.dataset},
          {"out", c.out},
          {"seed", c.seed},
          {"mode", to_string(c.mode)},
          {"k", c.k},
          {"patch_side", c.patch_side},
          {"ratios", {{"train", c.ratios.train}, {"val", c.ratios.val}, {"test", c.ratios.test}}},
          {"threshold", c.threshold},
          {"bag_training", train_config_json(c.bag_training)},
          {"instance_training", train_config_json(c.instance_training)},
          {"saliency_dir", c.saliency_dir}};
}

/// Applies the pipeline keys of a config document. A "synth" section is
/// allowed and ignored here.
inline void update_config(PipelineConfig& c, const nlohmann::json& j) {
  detail::reject_unknown_keys(j,
                              {"dataset", "out", "seed", "mode", "k", "patch_side", "ratios",
                               "threshold", "bag_training", "instance_training", "saliency_dir",
                               "synth"},
                              "config");
  detail::take(j, "dataset", c.dataset);
  detail::take(j, "out", c.out);
  detail::take(j, "seed", c.seed);
  if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
  detail::take(j, "k", c.k);
  detail::take(j, "patch_side", c.patch_side);
  if (j.contains("ratios")) {
    const auto& r = j.at("ratios");
    detail::reject_unknown_keys(r, {"train", "val", "test"}, "config.ratios");
    detail::take(r, "train", c.ratios.train);
    detail::take(r, "val", c.ratios.val);
    detail::take(r, "test", c.ratios.test);
  }
  detail::take(j, "threshold", c.threshold);
  if (j.contains("bag_training"))
    update_train_config(c.bag_training, j.at("bag_training"), "config.bag_training");
  if (j.contains("instance_training"))
    update_train_config(c.instance_training, j.at("instance_training"), "config.instance_training");
  detail::take(j, "saliency_dir", c.saliency_dir);
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

struct RunLayout {
  std::filesystem::path root;

  std::filesystem::path split_manifest() const { return root / "split" / "manifest.json"; }
  std::filesystem::path bag_model() const { return root / "bag_model" / "model.json"; }
  std::filesystem::path bag_log() const { return root / "bag_model" / "train_log.csv"; }
  std::filesystem::path saliency_dir() const { return root / "saliency"; }
  std::filesystem::path saliency(const std::string& bag_id) const {
    return saliency_dir() / (bag_id + ".salm");
  }
  std::filesystem::path patches_dir() const { return root / "patches"; }
  std::filesystem::path patch_manifest(InstanceOrigin o) const {
    return patches_dir() / (to_string(o) + ".jsonl");
  }
  std::filesystem::path instance_manifest() const { return root / "instances" / "manifest.json"; }
  std::filesystem::path instance_model() const { return root / "instance_model" / "model.json"; }
  std::filesystem::path instance_log() const { return root / "instance_model" / "train_log.csv"; }
  std::filesystem::path report() const { return root / "eval" / "report.json"; }
  std::filesystem::path summary() const { return root / "eval" / "summary.csv"; }
};

namespace detail {

template <class F>
auto in_stage(const std::string& stage, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

inline void require_file(const std::filesystem::path& p, const std::string& produced_by) {
  if (!std::filesystem::exists(p))
    throw IoError("missing " + p.string() + " (run the " + produced_by + " stage first)");
}

inline void make_parent(const std::filesystem::path& p) {
  std::filesystem::create_directories(p.parent_path());
}

inline std::vector<LabeledImage> load_bag_images(const std::vector<const Bag*>& bags) {
  std::vector<LabeledImage> out;
  out.reserve(bags.size());
  for (const Bag* b : bags) out.push_back({load_image(b->image_path), b->label});
  return out;
}

inline TrainConfig stage_train_config(TrainConfig t, std::uint64_t seed, const char* tag,
                                      bool fit_normalization) {
  t.seed = derive_seed(seed, tag);
  t.fit_normalization = fit_normalization;
  return t;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stages

inline DatasetManifest stage_split(const PipelineConfig& cfg) {
  return detail::in_stage("split", [&] {
    if (cfg.dataset.empty()) throw std::invalid_argument("config: dataset root is not set");
    const RunLayout run{cfg.out};
    auto m = split_bags(load_directory(cfg.dataset), cfg.ratios, cfg.seed);
    m.k = cfg.k;
    m.l = cfg.patch_side;
    detail::make_parent(run.split_manifest());
    write_manifest(m, run.split_manifest());
    return m;
  });
}

/// Whole-image (bag model) training on the train split, validated on val.
inline MiniModel stage_train_bag(const PipelineConfig& cfg) {
  return detail::in_stage("train-bag", [&] {
    const RunLayout run{cfg.out};
    detail::require_file(run.split_manifest(), "split");
    const auto m = read_manifest(run.split_manifest());
    const auto train_set = detail::load_bag_images(m.bags_in(Split::train));
    const auto val_set = detail::load_bag_images(m.bags_in(Split::val));
    auto result = train(MiniModel{}, train_set, val_set,
                        detail::stage_train_config(cfg.bag_training, cfg.seed, "train-bag", true));
    detail::make_parent(run.bag_model());
    save_model(result.model, run.bag_model());
    write_train_log(result.log, run.bag_log());
    return result.model;
  });
}

/// One saliency map per bag, from the bag model's CAM or from
/// `saliency_dir`.
inline void stage_saliency(const PipelineConfig& cfg) {
  detail::in_stage("saliency", [&] {
    const RunLayout run{cfg.out};
    detail::require_file(run.split_manifest(), "split");
    const auto m = read_manifest(run.split_manifest());
    std::optional<MiniModel> model;
    if (cfg.saliency_dir.empty()) {
      detail::require_file(run.bag_model(), "train-bag");
      model = load_model(run.bag_model());
    }
    std::filesystem::create_directories(run.saliency_dir());
    for (const auto& bag : m.bags) {
      const ImageTensor img = load_image(bag.image_path);
      SaliencyMap sal;
      if (model) {
        sal = model_cam(*model, img, bag.bag_id);
      } else {
        const std::filesystem::path dir = cfg.saliency_dir;
        auto src = dir / (bag.bag_id + ".salm");
        if (!std::filesystem::exists(src)) src = dir / (bag.bag_id + ".png");
        if (!std::filesystem::exists(src))
          throw IoError("no saliency map for bag '" + bag.bag_id + "' in " + dir.string());
        sal = load_saliency(src);
      }
      if (sal.map.height() != img.height() || sal.map.width() != img.width())
        sal = upsample_to_image(sal, img.height(), img.width());
      save_saliency_raw(sal, run.saliency(bag.bag_id));
    }
    return 0;
  });
}

/// Patch-SaliMap and random patches (salimap mode) or the grid
/// (baseline_grid mode), written as PNGs plus JSON-lines manifests.
inline void stage_extract_patches(const PipelineConfig& cfg) {
  detail::in_stage("extract-patches", [&] {
    const RunLayout run{cfg.out};
    detail::require_file(run.split_manifest(), "split");
    auto m = read_manifest(run.split_manifest());
    m.k = cfg.k;
    m.l = cfg.patch_side;
    auto sink = [&](const PatchRecord& rec, InstanceOrigin origin) {
      const std::string rel = "patches/" + to_string(origin) + "/" + rec.bag_id + "_" +
                              std::to_string(rec.rank_j) + ".png";
      save_image(rec.patch, run.root / rel, 16);
      return rel;
    };
    auto image = [](const Bag& b) { return load_image(b.image_path); };

    if (cfg.mode == Mode::baseline_grid) {
      std::filesystem::create_directories(run.patches_dir() / "grid");
      std::vector<PatchManifestEntry> grid;
      for (const auto& bag : m.bags)
        for (const auto& rec : grid_patches(image(bag), m.l, bag.bag_id))
          grid.push_back(manifest_entry(rec, sink(rec, InstanceOrigin::grid)));
      write_patch_manifest(grid, run.patch_manifest(InstanceOrigin::grid));
      return 0;
    }
    if (cfg.mode != Mode::salimap)
      throw std::invalid_argument("mode " + to_string(cfg.mode) + " does not use patches");

    std::filesystem::create_directories(run.patches_dir() / "salimap");
    std::filesystem::create_directories(run.patches_dir() / "random");
    auto saliency = [&](const Bag& b) -> std::optional<SaliencyMap> {
      const auto p = run.saliency(b.bag_id);
      if (!std::filesystem::exists(p)) return std::nullopt;
      return load_saliency(p);
    };
    const auto sets = extract_patch_sets(m, image, saliency, sink);
    write_patch_manifest(sets.salimap, run.patch_manifest(InstanceOrigin::salimap));
    write_patch_manifest(sets.random, run.patch_manifest(InstanceOrigin::random));
    return 0;
  });
}

/// The balanced, label-inheriting instance set.
inline DatasetManifest stage_build_instances(const PipelineConfig& cfg) {
  return detail::in_stage("build-instances", [&] {
    const RunLayout run{cfg.out};
    detail::require_file(run.split_manifest(), "split");
    auto m = read_manifest(run.split_manifest());
    m.k = cfg.k;
    m.l = cfg.patch_side;
    if (cfg.mode == Mode::baseline_grid) {
      detail::require_file(run.patch_manifest(InstanceOrigin::grid), "extract-patches");
      m.instances = select_grid_instances(m, read_patch_manifest(run.patch_manifest(InstanceOrigin::grid)));
    } else if (cfg.mode == Mode::salimap) {
      for (auto o : {InstanceOrigin::salimap, InstanceOrigin::random})
        detail::require_file(run.patch_manifest(o), "extract-patches");
      m.instances = select_instances(m, read_patch_manifest(run.patch_manifest(InstanceOrigin::salimap)),
                                     read_patch_manifest(run.patch_manifest(InstanceOrigin::random)));
    } else {
      throw std::invalid_argument("mode " + to_string(cfg.mode) + " does not use instances");
    }
    detail::make_parent(run.instance_manifest());
    write_manifest(m, run.instance_manifest());
    return m;
  });
}

/// Fine-tunes the bag model on train-split instances; val-split
/// instances (with inherited labels) drive model selection.
inline MiniModel stage_train_instance(const PipelineConfig& cfg) {
  return detail::in_stage("train-instance", [&] {
    const RunLayout run{cfg.out};
    detail::require_file(run.instance_manifest(), "build-instances");
    detail::require_file(run.bag_model(), "train-bag");
    const auto m = read_manifest(run.instance_manifest());
    const MiniModel bag_model = load_model(run.bag_model());
    std::vector<LabeledImage> train_set, val_set;
    for (const auto& inst : m.instances) {
      const auto split = m.bag(inst.bag_id).split;
      if (split == Split::test) continue;
      auto& dst = split == Split::train ? train_set : val_set;
      dst.push_back({load_image(run.root / inst.patch_path), inst.label});
    }
    if (train_set.empty()) throw std::invalid_argument("no training instances in " + run.instance_manifest().string());
    auto result = train(bag_model, train_set, val_set,
                        detail::stage_train_config(cfg.instance_training, cfg.seed, "train-instance", false));
    detail::make_parent(run.instance_model());
    save_model(result.model, run.instance_model());
    write_train_log(result.log, run.instance_log());
    return result.model;
  });
}

inline std::vector<std::string> mode_notes(Mode mode) {
  switch (mode) {
    case Mode::typical:
      return {"bag score is the whole-image probability of the bag model"};
    case Mode::baseline_grid:
      return {"deviation: grid patches inherit their bag's label for training; no manual patch "
              "annotations are available",
              "bag score is the weighted evaluation over grid patches ranked by instance "
              "probability"};
    case Mode::salimap:
      return {"bag score is the weighted evaluation over saliency-ranked patches"};
  }
  return {};
}

/// Scores test bags and writes the report.
inline MetricsReport stage_evaluate(const PipelineConfig& cfg) {
  return detail::in_stage("evaluate", [&] {
    const RunLayout run{cfg.out};
    std::vector<BagPrediction> preds;
    if (cfg.mode == Mode::typical) {
      detail::require_file(run.split_manifest(), "split");
      detail::require_file(run.bag_model(), "train-bag");
      const auto m = read_manifest(run.split_manifest());
      const MiniModel model = load_model(run.bag_model());
      for (const Bag* b : m.bags_in(Split::test))
        preds.push_back(predict_bag(b->bag_id, {forward(model, load_image(b->image_path)).prob},
                                    b->label, cfg.threshold));
    } else {
      detail::require_file(run.instance_manifest(), "build-instances");
      detail::require_file(run.instance_model(), "train-instance");
      const auto m = read_manifest(run.instance_manifest());
      const MiniModel model = load_model(run.instance_model());
      std::map<std::string, std::vector<std::pair<int, double>>> probs;
      for (const auto& inst : m.instances)
        if (m.bag(inst.bag_id).split == Split::test)
          probs[inst.bag_id].push_back(
              {inst.rank_j, forward(model, load_image(run.root / inst.patch_path)).prob});
      for (const Bag* b : m.bags_in(Split::test)) {
        auto& v = probs[b->bag_id];
        if (v.empty()) throw std::invalid_argument("test bag '" + b->bag_id + "' has no instances");
        std::sort(v.begin(), v.end());
        std::vector<double> p;
        for (const auto& [rank, prob] : v) p.push_back(prob);
        if (cfg.mode == Mode::baseline_grid) std::stable_sort(p.begin(), p.end(), std::greater<>());
        preds.push_back(predict_bag(b->bag_id, std::move(p), b->label, cfg.threshold));
      }
    }
    if (preds.empty()) throw std::invalid_argument("no test bags to evaluate");
    const auto report = metrics(preds);
    auto doc = report_json(preds, report, cfg.threshold);
    doc["mode"] = to_string(cfg.mode);
    doc["seed"] = cfg.seed;
    doc["split"] = "test";
    doc["notes"] = mode_notes(cfg.mode);
    detail::make_parent(run.report());
    {
      std::ofstream out(run.report());
      if (!out) throw IoError("cannot open for writing: " + run.report().string());
      out << doc.dump(2) << '\n';
    }
    std::ofstream csv(run.summary());
    if (!csv) throw IoError("cannot open for writing: " + run.summary().string());
    csv << "mode,seed,threshold,bags,accuracy,f1,tp,fp,fn,tn\n"
        << to_string(cfg.mode) << ',' << cfg.seed << ',' << nlohmann::json(cfg.threshold).dump() << ','
        << report.confusion.total() << ',' << nlohmann::json(report.accuracy).dump() << ','
        << nlohmann::json(report.f1).dump() << ',' << report.confusion.tp << ','
        << report.confusion.fp << ',' << report.confusion.fn << ',' << report.confusion.tn << '\n';
    return report;
  });
}

/// Runs every stage the mode needs, in order.
inline MetricsReport run_pipeline(const PipelineConfig& cfg,
                                  const std::function<void(const std::string&)>& progress = {}) {
  detail::in_stage("config", [&] {
    cfg.validate();
    if (cfg.dataset.empty()) throw std::invalid_argument("config: dataset root is not set");
    if (!std::filesystem::is_directory(cfg.dataset))
      throw IoError("dataset root does not exist: " + cfg.dataset);
    if (!cfg.saliency_dir.empty() && !std::filesystem::is_directory(cfg.saliency_dir))
      throw IoError("saliency directory does not exist: " + cfg.saliency_dir);
    return 0;
  });
  auto step = [&](const char* name) {
    if (progress) progress(name);
  };
  std::filesystem::create_directories(cfg.out);
  {
    std::ofstream out(std::filesystem::path(cfg.out) / "config.json");
    out << config_json(cfg).dump(2) << '\n';
  }
  step("split");
  stage_split(cfg);
  step("train-bag");
  stage_train_bag(cfg);
  if (cfg.mode != Mode::typical) {
    if (cfg.mode == Mode::salimap) {
      step("saliency");
      stage_saliency(cfg);
    }
    step("extract-patches");
    stage_extract_patches(cfg);
    step("build-instances");
    stage_build_instances(cfg);
    step("train-instance");
    stage_train_instance(cfg);
  }
  step("evaluate");
  return stage_evaluate(cfg);
}

}  // namespace wsmil

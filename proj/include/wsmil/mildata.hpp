#pragma once

// Bags, instances and the dataset manifest: directory loading, stratified
// splits, and the balanced instance set (top-2 salient patches per positive
// training bag, 5 random patches per negative training bag, k salient
// patches per validation/test bag).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "wsmil/common.hpp"
#include "wsmil/patcher.hpp"
#include "wsmil/png_io.hpp"

namespace wsmil {

enum class Split { train, val, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

enum class InstanceOrigin { salimap, random, grid };

inline std::string to_string(InstanceOrigin o) {
  switch (o) {
    case InstanceOrigin::salimap: return "salimap";
    case InstanceOrigin::random: return "random";
    case InstanceOrigin::grid: return "grid";
  }
  return "?";
}

inline InstanceOrigin parse_origin(const std::string& s) {
  if (s == "salimap") return InstanceOrigin::salimap;
  if (s == "random") return InstanceOrigin::random;
  if (s == "grid") return InstanceOrigin::grid;
  throw std::invalid_argument("unknown instance origin '" + s + "'");
}

inline constexpr int kPositiveTrainInstances = 2;
inline constexpr int kNegativeTrainInstances = 5;

struct Bag {
  std::string bag_id;
  std::string image_path;
  Label label = Label::negative;
  std::optional<Split> split;

  friend bool operator==(const Bag&, const Bag&) = default;
};

struct Instance {
  std::string bag_id;
  int rank_j = 0;
  Label label = Label::negative;
  std::string patch_path;
  InstanceOrigin origin = InstanceOrigin::salimap;

  friend bool operator==(const Instance&, const Instance&) = default;
};

struct SplitRatios {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;

  void validate() const {
    for (double r : {train, val, test})
      if (!(r >= 0.0 && r <= 1.0))
        throw std::invalid_argument("split ratios must lie in [0, 1]");
    if (std::abs(train + val + test - 1.0) > 1e-9)
      throw std::invalid_argument("split ratios must sum to 1, got " +
                                  std::to_string(train + val + test));
  }
  friend bool operator==(const SplitRatios&, const SplitRatios&) = default;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  int k = 5;
  std::size_t l = 0;
  SplitRatios ratios;
  std::vector<Bag> bags;
  std::vector<Instance> instances;

  const Bag& bag(const std::string& id) const {
    auto it = std::find_if(bags.begin(), bags.end(), [&](const Bag& b) { return b.bag_id == id; });
    if (it == bags.end()) throw std::out_of_range("no bag '" + id + "' in manifest");
    return *it;
  }

  std::vector<const Bag*> bags_in(Split s) const {
    std::vector<const Bag*> out;
    for (const auto& b : bags)
      if (b.split == s) out.push_back(&b);
    return out;
  }

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

// ---------------------------------------------------------------------------
// Loading and splitting

/// root/{positive,negative}/*.png, bag_id = file stem. Bags come back sorted
/// by id.
inline std::vector<Bag> load_directory(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IoError("dataset root is not a directory: " + root.string());
  std::vector<Bag> bags;
  std::map<std::string, std::string> seen;
  for (Label label : {Label::positive, Label::negative}) {
    const fs::path dir = root / to_string(label);
    if (!fs::is_directory(dir)) continue;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      auto ext = entry.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      if (ext != ".png") continue;
      const std::string id = entry.path().stem().string();
      auto [it, fresh] = seen.emplace(id, entry.path().string());
      if (!fresh)
        throw std::invalid_argument("duplicate bag id '" + id + "': " + it->second + " and " +
                                    entry.path().string());
      bags.push_back({id, entry.path().string(), label, std::nullopt});
    }
  }
  if (bags.empty()) throw IoError("no PNG images under " + root.string() + "/{positive,negative}");
  std::sort(bags.begin(), bags.end(), [](const Bag& a, const Bag& b) { return a.bag_id < b.bag_id; });
  return bags;
}

/// Stratified split. Within each class the bags (ordered by id) are shuffled
/// with a seed derived from `seed` and the class name; val and test take
/// floor(n * ratio) bags each and train takes the rest.
inline DatasetManifest split_bags(std::vector<Bag> bags, const SplitRatios& ratios,
                                  std::uint64_t seed) {
  ratios.validate();
  std::sort(bags.begin(), bags.end(), [](const Bag& a, const Bag& b) { return a.bag_id < b.bag_id; });
  for (std::size_t i = 1; i < bags.size(); ++i)
    if (bags[i].bag_id == bags[i - 1].bag_id)
      throw std::invalid_argument("duplicate bag id '" + bags[i].bag_id + "'");

  for (Label label : {Label::positive, Label::negative}) {
    std::vector<Bag*> members;
    for (auto& b : bags)
      if (b.label == label) members.push_back(&b);
    if (members.empty())
      throw std::invalid_argument("split_bags: no " + to_string(label) + " bags");
    std::mt19937_64 rng(derive_seed(seed, "split/" + to_string(label)));
    std::shuffle(members.begin(), members.end(), rng);
    const auto n = static_cast<double>(members.size());
    const auto n_val = static_cast<std::size_t>(std::floor(n * ratios.val + 1e-9));
    const auto n_test = static_cast<std::size_t>(std::floor(n * ratios.test + 1e-9));
    const std::size_t n_train = members.size() - n_val - n_test;
    for (std::size_t i = 0; i < members.size(); ++i)
      members[i]->split = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
  }

  DatasetManifest m;
  m.seed = seed;
  m.ratios = ratios;
  m.bags = std::move(bags);
  return m;
}

// ---------------------------------------------------------------------------
// Instance selection

/// Picks instances from already-extracted patch manifests. `salimap` must
/// hold ranks 1..k (k >= 2) for every bag except negative training bags;
/// `random` must hold 5 patches for every negative training bag.
inline std::vector<Instance> select_instances(const DatasetManifest& m,
                                              const std::vector<PatchManifestEntry>& salimap,
                                              const std::vector<PatchManifestEntry>& random) {
  std::map<std::string, std::vector<const PatchManifestEntry*>> by_bag_s, by_bag_r;
  for (const auto& e : salimap) by_bag_s[e.bag_id].push_back(&e);
  for (const auto& e : random) by_bag_r[e.bag_id].push_back(&e);
  for (auto* table : {&by_bag_s, &by_bag_r})
    for (auto& [id, v] : *table)
      std::sort(v.begin(), v.end(), [](auto* a, auto* b) { return a->rank_j < b->rank_j; });

  auto take = [&](const Bag& bag, auto& table, int count, InstanceOrigin origin,
                  std::vector<Instance>& out) {
    auto it = table.find(bag.bag_id);
    const int have = it == table.end() ? 0 : static_cast<int>(it->second.size());
    if (have < count) {
      const std::string what = origin == InstanceOrigin::salimap
                                   ? "saliency-ranked patches (is its saliency map missing?)"
                                   : "random patches";
      throw std::invalid_argument("bag '" + bag.bag_id + "' (" + to_string(*bag.split) + ", " +
                                  to_string(bag.label) + ") has " + std::to_string(have) + " " +
                                  what + ", needs " + std::to_string(count));
    }
    for (int j = 0; j < count; ++j) {
      const auto* e = it->second[static_cast<std::size_t>(j)];
      if (e->rank_j != j + 1)
        throw std::invalid_argument("bag '" + bag.bag_id + "': patch ranks are not 1.." +
                                    std::to_string(count));
      out.push_back({bag.bag_id, e->rank_j, bag.label, e->patch_path, origin});
    }
  };

  std::vector<Instance> out;
  for (const auto& bag : m.bags) {
    if (!bag.split) throw std::invalid_argument("bag '" + bag.bag_id + "' has no split");
    if (*bag.split == Split::train) {
      if (bag.label == Label::positive)
        take(bag, by_bag_s, kPositiveTrainInstances, InstanceOrigin::salimap, out);
      else
        take(bag, by_bag_r, kNegativeTrainInstances, InstanceOrigin::random, out);
    } else {
      take(bag, by_bag_s, m.k, InstanceOrigin::salimap, out);
    }
  }
  return out;
}

/// Every grid patch of every bag becomes an instance carrying its bag's label.
inline std::vector<Instance> select_grid_instances(const DatasetManifest& m,
                                                   const std::vector<PatchManifestEntry>& grid) {
  std::map<std::string, std::vector<const PatchManifestEntry*>> by_bag;
  for (const auto& e : grid) by_bag[e.bag_id].push_back(&e);
  std::vector<Instance> out;
  for (const auto& bag : m.bags) {
    auto it = by_bag.find(bag.bag_id);
    if (it == by_bag.end()) throw std::invalid_argument("bag '" + bag.bag_id + "' has no grid patches");
    auto v = it->second;
    std::sort(v.begin(), v.end(), [](auto* a, auto* b) { return a->rank_j < b->rank_j; });
    for (const auto* e : v) out.push_back({bag.bag_id, e->rank_j, bag.label, e->patch_path, InstanceOrigin::grid});
  }
  return out;
}

using SaliencyLookup = std::function<std::optional<SaliencyMap>(const Bag&)>;
using ImageLookup = std::function<ImageTensor(const Bag&)>;
using PatchSink = std::function<std::string(const PatchRecord&, InstanceOrigin)>;

struct PatchSets {
  std::vector<PatchManifestEntry> salimap;
  std::vector<PatchManifestEntry> random;
};

/// Extracts what select_instances needs: max(k, 2) salient patches for every
/// bag except negative training bags, 5 random patches for each of those.
/// `sink` persists a patch and returns its path.
inline PatchSets extract_patch_sets(const DatasetManifest& m, const ImageLookup& image,
                                    const SaliencyLookup& saliency, const PatchSink& sink) {
  PatchSets out;
  const int k_sal = std::max(m.k, kPositiveTrainInstances);
  for (const auto& bag : m.bags) {
    if (!bag.split) throw std::invalid_argument("bag '" + bag.bag_id + "' has no split");
    const ImageTensor img = image(bag);
    if (*bag.split == Split::train && bag.label == Label::negative) {
      const auto seed = derive_seed(m.seed, "random-patches/" + bag.bag_id);
      for (const auto& rec : random_patches(img, kNegativeTrainInstances, m.l, seed, bag.bag_id))
        out.random.push_back(manifest_entry(rec, sink(rec, InstanceOrigin::random)));
      continue;
    }
    const auto sal = saliency(bag);
    if (!sal)
      throw std::invalid_argument("no saliency map for bag '" + bag.bag_id + "' (" +
                                  to_string(*bag.split) + ", " + to_string(bag.label) + ")");
    for (const auto& rec : patch_salimap(img, *sal, k_sal, m.l, bag.bag_id))
      out.salimap.push_back(manifest_entry(rec, sink(rec, InstanceOrigin::salimap)));
  }
  return out;
}

/// Extraction plus selection in one call; returns the manifest with its
/// instance list filled in.
inline DatasetManifest build_instance_dataset(DatasetManifest m, const ImageLookup& image,
                                              const SaliencyLookup& saliency,
                                              const PatchSink& sink) {
  const auto sets = extract_patch_sets(m, image, saliency, sink);
  m.instances = select_instances(m, sets.salimap, sets.random);
  return m;
}

struct BalanceAudit {
  bool ok = true;
  std::size_t positive_bags = 0;
  std::size_t negative_bags = 0;
  std::size_t instances = 0;
  std::vector<std::string> problems;
};

/// Checks the training-split instance counts and origins.
inline BalanceAudit audit_train_balance(const DatasetManifest& m) {
  BalanceAudit a;
  std::map<std::string, std::vector<const Instance*>> per_bag;
  for (const auto& inst : m.instances) per_bag[inst.bag_id].push_back(&inst);
  for (const auto* bag : m.bags_in(Split::train)) {
    const bool pos = bag->label == Label::positive;
    ++(pos ? a.positive_bags : a.negative_bags);
    const auto& v = per_bag[bag->bag_id];
    a.instances += v.size();
    const std::size_t want = pos ? kPositiveTrainInstances : kNegativeTrainInstances;
    if (v.size() != want)
      a.problems.push_back(bag->bag_id + ": " + std::to_string(v.size()) + " instances, want " +
                           std::to_string(want));
    for (const auto* inst : v) {
      if (!pos && inst->origin != InstanceOrigin::random)
        a.problems.push_back(bag->bag_id + ": negative-bag instance with origin " +
                             to_string(inst->origin));
      if (inst->label != bag->label)
        a.problems.push_back(bag->bag_id + ": instance label differs from bag label");
    }
  }
  if (a.instances != kPositiveTrainInstances * a.positive_bags + kNegativeTrainInstances * a.negative_bags)
    a.problems.push_back("total instance count " + std::to_string(a.instances) + " does not match");
  a.ok = a.problems.empty();
  return a;
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const Bag& b) {
  j = {{"bag_id", b.bag_id},
       {"image_path", b.image_path},
       {"label", to_string(b.label)},
       {"split", b.split ? nlohmann::json(to_string(*b.split)) : nlohmann::json(nullptr)}};
}

inline void from_json(const nlohmann::json& j, Bag& b) {
  j.at("bag_id").get_to(b.bag_id);
  j.at("image_path").get_to(b.image_path);
  b.label = parse_label(j.at("label").get<std::string>());
  const auto& s = j.at("split");
  b.split = s.is_null() ? std::nullopt : std::optional<Split>(parse_split(s.get<std::string>()));
}

inline void to_json(nlohmann::json& j, const Instance& i) {
  j = {{"bag_id", i.bag_id},
       {"rank_j", i.rank_j},
       {"label", to_string(i.label)},
       {"patch_path", i.patch_path},
       {"origin", to_string(i.origin)}};
}

inline void from_json(const nlohmann::json& j, Instance& i) {
  j.at("bag_id").get_to(i.bag_id);
  j.at("rank_j").get_to(i.rank_j);
  i.label = parse_label(j.at("label").get<std::string>());
  j.at("patch_path").get_to(i.patch_path);
  i.origin = parse_origin(j.at("origin").get<std::string>());
}

inline void to_json(nlohmann::json& j, const DatasetManifest& m) {
  j = {{"seed", m.seed},
       {"k", m.k},
       {"l", m.l},
       {"ratios", {{"train", m.ratios.train}, {"val", m.ratios.val}, {"test", m.ratios.test}}},
       {"bags", m.bags},
       {"instances", m.instances}};
}

inline void from_json(const nlohmann::json& j, DatasetManifest& m) {
  j.at("seed").get_to(m.seed);
  j.at("k").get_to(m.k);
  j.at("l").get_to(m.l);
  const auto& r = j.at("ratios");
  m.ratios = {r.at("train").get<double>(), r.at("val").get<double>(), r.at("test").get<double>()};
  j.at("bags").get_to(m.bags);
  j.at("instances").get_to(m.instances);
  std::set<std::string> ids;
  for (const auto& b : m.bags)
    if (!ids.insert(b.bag_id).second) throw std::invalid_argument("duplicate bag id '" + b.bag_id + "'");
  for (const auto& i : m.instances)
    if (!ids.count(i.bag_id))
      throw std::invalid_argument("instance references unknown bag '" + i.bag_id + "'");
}

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << nlohmann::json(m).dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in).get<DatasetManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace wsmil

// wsmil: command-line driver for the MIL pipeline and the synthetic
// benchmark generator.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "wsmil/pipeline.hpp"
#include "wsmil/synthgen.hpp"

namespace {

struct Flags {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<int> k;
  std::optional<std::size_t> patch_side;
  std::optional<double> threshold;
  std::optional<std::string> out;
  std::optional<std::string> dataset;
  std::optional<std::string> saliency_dir;
  std::optional<std::size_t> n_images;
};

void add_common(CLI::App* sub, Flags& f, bool pipeline) {
  sub->add_option("--config", f.config, "JSON config file; flags override its fields")
      ->check(CLI::ExistingFile);
  sub->add_option("--seed", f.seed, "Random seed");
  sub->add_option("--out", f.out, pipeline ? "Run directory" : "Dataset output directory");
  if (!pipeline) {
    sub->add_option("--n-images", f.n_images, "Number of images to generate");
    return;
  }
  sub->add_option("--mode", f.mode, "Experiment mode")
      ->check(CLI::IsMember({"typical", "baseline_grid", "salimap"}));
  sub->add_option("--k", f.k, "Patches per bag at evaluation");
  sub->add_option("--patch-side", f.patch_side, "Patch side l in pixels (even)");
  sub->add_option("--threshold", f.threshold, "Bag decision threshold");
  sub->add_option("--dataset", f.dataset, "Dataset root with positive/ and negative/");
  sub->add_option("--saliency-dir", f.saliency_dir,
                  "Use precomputed saliency maps (<bag_id>.salm or .png) instead of CAM");
}

nlohmann::json config_document(const Flags& f) {
  if (!f.config) return nlohmann::json::object();
  return wsmil::read_json_file(*f.config);
}

wsmil::PipelineConfig pipeline_config(const Flags& f) {
  wsmil::PipelineConfig c;
  wsmil::update_config(c, config_document(f));
  if (f.seed) c.seed = *f.seed;
  if (f.mode) c.mode = wsmil::parse_mode(*f.mode);
  if (f.k) c.k = *f.k;
  if (f.patch_side) c.patch_side = *f.patch_side;
  if (f.threshold) c.threshold = *f.threshold;
  if (f.out) c.out = *f.out;
  if (f.dataset) c.dataset = *f.dataset;
  if (f.saliency_dir) c.saliency_dir = *f.saliency_dir;
  c.validate();
  return c;
}

void print_metrics(const wsmil::MetricsReport& r, const wsmil::PipelineConfig& c) {
  std::cout << "mode=" << wsmil::to_string(c.mode) << " seed=" << c.seed
            << " accuracy=" << r.accuracy << " f1=" << r.f1 << " tp=" << r.confusion.tp
            << " fp=" << r.confusion.fp << " fn=" << r.confusion.fn << " tn=" << r.confusion.tn
            << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly supervised multiple-instance classification of tiny objects"};
  app.require_subcommand(1);
  Flags f;

  auto* synth = app.add_subcommand("synth-gen", "Generate the synthetic tiny-blob dataset");
  add_common(synth, f, false);
  struct Stage {
    const char* name;
    const char* help;
  };
  const Stage stages[] = {
      {"split", "Stratified train/val/test split of the dataset"},
      {"train-bag", "Train the bag model on whole images"},
      {"saliency", "Compute (or import) a saliency map per bag"},
      {"extract-patches", "Extract saliency-ranked, random or grid patches"},
      {"build-instances", "Build the balanced instance set"},
      {"train-instance", "Fine-tune the bag model on instances"},
      {"evaluate", "Score test bags and write the report"},
      {"run-all", "Run every stage the mode needs"},
  };
  for (const auto& s : stages) add_common(app.add_subcommand(s.name, s.help), f, true);

  CLI11_PARSE(app, argc, argv);
  CLI::App* chosen = app.get_subcommands().front();
  const std::string name = chosen->get_name();

  try {
    if (name == "synth-gen") {
      wsmil::SynthConfig sc;
      const auto doc = config_document(f);
      if (doc.contains("synth")) wsmil::update_synth_config(sc, doc.at("synth"));
      if (f.seed) sc.seed = *f.seed;
      if (f.n_images) sc.n_images = *f.n_images;
      if (!f.out) throw std::invalid_argument("--out is required");
      const auto truth = wsmil::generate_dataset(sc, *f.out);
      std::cout << "wrote " << truth.size() << " images to " << *f.out << '\n';
      return 0;
    }

    wsmil::PipelineConfig cfg;
    try {
      cfg = pipeline_config(f);
    } catch (const std::exception& e) {
      throw wsmil::StageError("config", e.what());
    }
    if (name == "run-all") {
      const auto report = wsmil::run_pipeline(cfg, [](const std::string& stage) {
        std::cerr << "[" << stage << "]\n";
      });
      print_metrics(report, cfg);
    } else if (name == "split") {
      const auto m = wsmil::stage_split(cfg);
      std::cout << "split " << m.bags.size() << " bags: train " << m.bags_in(wsmil::Split::train).size()
                << ", val " << m.bags_in(wsmil::Split::val).size() << ", test "
                << m.bags_in(wsmil::Split::test).size() << '\n';
    } else if (name == "train-bag") {
      wsmil::stage_train_bag(cfg);
    } else if (name == "saliency") {
      wsmil::stage_saliency(cfg);
    } else if (name == "extract-patches") {
      wsmil::stage_extract_patches(cfg);
    } else if (name == "build-instances") {
      const auto m = wsmil::stage_build_instances(cfg);
      std::cout << m.instances.size() << " instances\n";
    } else if (name == "train-instance") {
      wsmil::stage_train_instance(cfg);
    } else if (name == "evaluate") {
      print_metrics(wsmil::stage_evaluate(cfg), cfg);
    }
    return 0;
  } catch (const wsmil::StageError& e) {
    std::cerr << "wsmil: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "wsmil: [" << name << "] " << e.what() << '\n';
    return 1;
  }
}

// Command-line front end for the segmentation pipeline.

#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "zutis/error.hpp"
#include "zutis/io.hpp"
#include "zutis/pipeline.hpp"

namespace {

using namespace zutis;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string output_dir = "run";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON run configuration (defaults when omitted)");
  cmd->add_option("--seed", c.seed, "Override the configured seed");
  cmd->add_option("--output-dir", c.output_dir, "Run directory")->capture_default_str();
}

RunConfig load(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

std::vector<std::string> split_names(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

EvalModes parse_modes(const std::string& m) {
  if (m == "class-aware") return EvalModes::kClassAware;
  if (m == "class-agnostic") return EvalModes::kClassAgnostic;
  if (m == "both") return EvalModes::kBoth;
  throw ArgumentError("--mode must be class-aware, class-agnostic or both");
}

void print(const std::string& s) { std::cout << s << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Open-vocabulary semantic and instance segmentation from retrieved pseudo-labels"};
  app.require_subcommand(1);

  Common c;
  std::string checkpoint, categories, mode = "both", axis;
  bool overlays = false;
  bool corpus = false;

  auto* archives = app.add_subcommand("build-archives", "Retrieve the top-k index images for every category");
  add_common(archives, c);
  archives->add_flag("--shapes-corpus", corpus, "Generate the synthetic shapes index first");

  auto* pseudo = app.add_subcommand("make-pseudo-labels", "Run saliency over archive members");
  add_common(pseudo, c);

  auto* train = app.add_subcommand("train", "Train on copy-paste samples from the pseudo-label store");
  add_common(train, c);
  train->add_option("--checkpoint", checkpoint, "Resume from this checkpoint");

  auto* predict = app.add_subcommand("predict", "Predict semantic maps and instances");
  add_common(predict, c);
  predict->add_option("--checkpoint", checkpoint, "Model checkpoint (default <output-dir>/train/model.ckpt)");
  predict->add_option("--categories", categories, "Comma-separated category names replacing the configured ones");
  predict->add_flag("--overlays", overlays, "Also write overlay PNGs");

  auto* evaluate = app.add_subcommand("evaluate", "Score predictions against ground truth");
  add_common(evaluate, c);
  evaluate->add_option("--mode", mode, "class-aware, class-agnostic or both")->capture_default_str();

  auto* ablate = app.add_subcommand("ablate", "Paired runs differing on one setting");
  add_common(ablate, c);
  ablate->add_option("axis", axis, "stop_grad, nms, copy_paste or temperature")->required();

  auto* demo = app.add_subcommand("demo-shapes", "Whole pipeline on the synthetic shapes benchmark");
  add_common(demo, c);

  CLI11_PARSE(app, argc, argv);

  try {
    check_device();
    const RunConfig cfg = load(c);
    const fs::path root = c.output_dir;
    const RunPaths paths = RunPaths::under(root, cfg);

    if (archives->parsed()) {
      if (corpus) {
        const auto s = generate_shapes_corpus(cfg, paths);
        print("corpus: " + std::to_string(s.images) + " images, " + std::to_string(s.blanks) + " blanks, " +
              std::to_string(s.eval_scenes) + " eval scenes");
      }
      const auto s = build_archives(cfg, paths);
      for (const auto& e : s.entries) {
        print(e.category + ": " + std::to_string(e.size) + " members, similarity " + format_float(e.min_similarity) +
              " .. " + format_float(e.max_similarity));
      }
    } else if (pseudo->parsed()) {
      const auto s = make_pseudo_labels(cfg, paths);
      print("written " + std::to_string(s.written) + ", discarded empty " + std::to_string(s.discarded_empty) +
            ", missing " + std::to_string(s.missing.size()));
    } else if (train->parsed()) {
      std::optional<fs::path> resume;
      if (!checkpoint.empty()) resume = checkpoint;
      const auto s = train_model(cfg, paths, resume, [](const TrainLogRecord& r) {
        print("iter " + std::to_string(r.iteration) + " lr " + format_float(r.lr) + " loss " +
              format_float(r.report.total));
      });
      print("checkpoint " + s.checkpoint.string() + " at iteration " + std::to_string(s.iterations));
    } else if (predict->parsed()) {
      const fs::path ckpt = checkpoint.empty() ? paths.train / "model.ckpt" : fs::path(checkpoint);
      const auto s = predict_images(cfg, paths, ckpt, split_names(categories), overlays);
      print(std::to_string(s.images) + " images, " + std::to_string(s.instances) + " instances, bank of " +
            std::to_string(s.bank.size()));
    } else if (evaluate->parsed()) {
      std::cout << evaluate_predictions(cfg, paths, parse_modes(mode)).to_text();
    } else if (ablate->parsed()) {
      const auto rows = run_ablation(cfg, root, axis, print);
      std::cout << format_ablation(axis, rows);
    } else if (demo->parsed()) {
      run_demo(cfg, root, print);
    }
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zutis/curation.hpp"
#include "zutis/evaluation.hpp"
#include "zutis/inference.hpp"
#include "zutis/model.hpp"
#include "zutis/training.hpp"

namespace zutis {

/// Synthetic-shapes generator settings.
struct ShapesDataConfig {
  int canvas = 64;
  int corpus_size = 600;
  int blank_images = 6;
  double embed_noise = 0.7;
  int eval_scenes = 100;
  int eval_min_objects = 1;
  int eval_max_objects = 4;

  friend bool operator==(const ShapesDataConfig&, const ShapesDataConfig&) = default;
};

/// Paths are relative to the run's output directory unless absolute; empty
/// means the standard location inside it.
struct DataConfig {
  std::string index_dir;         // embeddings.f32, locators.txt, images/
  std::string saliency = "shapes-oracle";  // or "external"
  std::string mask_dir;          // external saliency masks
  std::string predict_dir;       // images to predict on
  std::string ground_truth_dir;  // pseudo-sample-format ground truth
  ShapesDataConfig shapes;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

enum class EvalModes { kClassAware, kClassAgnostic, kBoth };

struct RunConfig {
  std::uint64_t seed = 0;
  std::vector<std::string> categories = {"circle", "square", "triangle"};
  std::string background = "background";
  std::vector<std::string> prompt_templates;  // empty: the default 85
  int archive_k = 500;
  DataConfig data;
  CopyPasteConfig copy_paste;
  AugmentConfig augment;
  ModelConfig model;
  TrainConfig train;
  InferenceConfig inference;
  EvalModes eval_mode = EvalModes::kBoth;

  /// Bank names: background first, then the categories.
  std::vector<std::string> bank_names() const;
  const std::vector<std::string>& templates() const;
  void validate() const;
};

nlohmann::ordered_json to_json(const RunConfig& cfg);
/// Unknown keys anywhere in the tree are errors.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
/// Hex FNV-1a of the canonical JSON dump.
std::string config_hash(const RunConfig& cfg);
std::string config_hash(const std::string& canonical_json);

}  // namespace zutis

#pragma once

// Pipeline stages behind the command-line tool. Every stage reads and writes
// files under a run directory so stages can be run separately or chained.

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "zutis/config.hpp"
#include "zutis/evaluation.hpp"
#include "zutis/inference.hpp"
#include "zutis/training.hpp"

namespace zutis {

namespace fs = std::filesystem;

struct RunPaths {
  fs::path index_dir;     // embeddings.f32, locators.txt, images/, masks/
  fs::path masks;         // external saliency masks
  fs::path archives;      // <category>.txt manifests
  fs::path pseudo;        // pseudo-label store
  fs::path train;         // checkpoints and train_log.jsonl
  fs::path eval_images;   // images to predict on
  fs::path ground_truth;  // ground-truth store for evaluation
  fs::path predictions;   // predictions.jsonl, semantic/, categories.txt
  fs::path metrics;       // metrics report file

  /// Standard layout under `root`, with config path overrides applied.
  static RunPaths under(const fs::path& root, const RunConfig& cfg);
};

/// Refuses any compute device other than the CPU (ZUTIS_DEVICE).
void check_device();

TextBank build_text_bank(const RunConfig& cfg, const std::vector<std::string>& names);

// ---------------------------------------------------------------- stages

struct CorpusSummary {
  int images = 0;
  int blanks = 0;
  int eval_scenes = 0;
};

/// Writes the shapes index dataset (images, generator masks, embeddings)
/// and the labelled multi-instance evaluation scenes.
CorpusSummary generate_shapes_corpus(const RunConfig& cfg, const RunPaths& paths);

struct ArchiveSummary {
  struct Entry {
    std::string category;
    int size = 0;
    float max_similarity = 0.0f;
    float min_similarity = 0.0f;
  };
  std::vector<Entry> entries;
  bool truncated = false;  // k exceeded the corpus size
};

ArchiveSummary build_archives(const RunConfig& cfg, const RunPaths& paths);

struct PseudoLabelSummary {
  int written = 0;
  int discarded_empty = 0;  // distinct images
  std::vector<std::string> missing;  // locators the detector could not serve
};

PseudoLabelSummary make_pseudo_labels(const RunConfig& cfg, const RunPaths& paths);

/// Archive pools read back from the pseudo-label store, ordered by category.
std::vector<ArchivePool> load_archive_pools(const RunConfig& cfg, const fs::path& store);

struct TrainSummary {
  int iterations = 0;
  fs::path checkpoint;
  LossReport last;
};

TrainSummary train_model(const RunConfig& cfg, const RunPaths& paths, const std::optional<fs::path>& resume = {},
                         const std::function<void(const TrainLogRecord&)>& progress = {});

/// Loads a checkpoint into a fresh model; refuses when its model dimensions
/// differ from `cfg`, listing every differing field.
Segmenter load_model(const RunConfig& cfg, const fs::path& checkpoint);

struct PredictSummary {
  int images = 0;
  int instances = 0;
  std::vector<std::string> bank;
};

/// Predicts every PNG in `paths.eval_images`. `categories` replaces the
/// configured list (zero-shot names are encoded on the fly).
PredictSummary predict_images(const RunConfig& cfg, const RunPaths& paths, const fs::path& checkpoint,
                              const std::vector<std::string>& categories = {}, bool overlays = false,
                              const std::optional<InferenceConfig>& inference = {});

struct MetricsReport {
  std::string config_hash;
  std::vector<std::string> class_names;
  SemanticEvalResult semantic;
  std::optional<DetectionEvalResult> class_aware;
  std::optional<DetectionEvalResult> class_agnostic;
  int images = 0;
  std::vector<std::string> mismatches;

  std::string to_text() const;
};

MetricsReport evaluate_predictions(const RunConfig& cfg, const RunPaths& paths, EvalModes modes);

/// Records with "rle" masks, one per instance.
struct PredictionRecord {
  std::string image;
  std::string category;
  double confidence = 0.0;
  BinaryMask mask;
};

std::vector<PredictionRecord> read_prediction_records(const fs::path& jsonl);

Image render_overlay(const Image& image, const LabelMap& semantic, std::span<const InstancePrediction> instances,
                     const std::vector<std::string>& names);

// ---------------------------------------------------------------- runs

struct DemoResult {
  CorpusSummary corpus;
  ArchiveSummary archives;
  PseudoLabelSummary pseudo;
  TrainSummary train;
  PredictSummary predict;
  MetricsReport metrics;
};

/// Corpus, archives, pseudo-labels, training, prediction and evaluation.
DemoResult run_demo(const RunConfig& cfg, const fs::path& root,
                    const std::function<void(const std::string&)>& say = {});

struct AblationRow {
  std::string setting;
  double ap_agnostic = 0.0, ap50_agnostic = 0.0;
  double ap_aware = 0.0, ap50_aware = 0.0;
  double miou = 0.0;
};

/// axis: stop_grad, nms, copy_paste or temperature. Writes
/// `<root>/ablation_<axis>.md` and returns its rows.
std::vector<AblationRow> run_ablation(const RunConfig& cfg, const fs::path& root, const std::string& axis,
                                      const std::function<void(const std::string&)>& say = {});

std::string format_ablation(const std::string& axis, const std::vector<AblationRow>& rows);

}  // namespace zutis

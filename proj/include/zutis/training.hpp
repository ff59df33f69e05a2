#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "zutis/curation.hpp"
#include "zutis/hungarian.hpp"
#include "zutis/model.hpp"

namespace zutis {

// ---------------------------------------------------------------- targets

/// Ground truth resampled to the feature grid by nearest sampling at cell
/// centres. Instances that vanish at that resolution are dropped.
struct TrainingTarget {
  LabelMap semantic;                // h x w category indices
  std::vector<BinaryMask> masks;    // h x w, all non-empty
  std::vector<int> categories;
};

TrainingTarget make_training_target(const PseudoSample& sample, int h, int w);

// ---------------------------------------------------------------- losses

/// cost[q][g] = dice + clamped BCE between proposal q (probabilities,
/// one row per proposal) and ground truth g.
CostMatrix matching_cost(const Matrix& masks, std::span<const BinaryMask> gts);
CostMatrix matching_cost(const MaskProposalSet& proposals, std::span<const BinaryMask> gts);

struct MaskLossTerm {
  Var loss;  // 1x1, mean over matched pairs of dice + bce
  double dice = 0.0;
  double bce = 0.0;
};

/// Matched-pair mask loss on mask logits (n_q x h*w). Dice reads
/// sigmoid(logit); BCE is the stable with-logits form. Unmatched proposals
/// contribute nothing.
MaskLossTerm mask_loss(const Var& logits, std::span<const BinaryMask> gts, const Assignment& assignment);

/// Mean softmax cross-entropy of logits (pixels x classes) against targets.
Var semantic_ce(const Var& logits, std::span<const int> targets);

inline constexpr int kAuxLayers = kDecoderLayers;

struct LossReport {
  double total = 0.0;
  double l_ce = 0.0;
  double l_mask = 0.0;  // final layer
  double l_dice = 0.0;
  double l_bce = 0.0;
  std::array<double, kAuxLayers> aux{};
  bool no_instances = false;

  double mask_sum() const;
};

/// total = l_ce + lambda * (final mask loss + sum of auxiliaries).
LossReport total_loss(double l_ce, double l_dice, double l_bce, const std::array<double, kAuxLayers>& aux,
                      double lambda_mask);

struct LossConfig {
  double lambda_mask = 1.0;
  bool rematch_aux = false;  // per-layer matching instead of reusing the final one
  bool semantic = true;
  bool masks = true;
};

struct SampleLoss {
  Var total;
  LossReport report;
  Assignment assignment;
};

SampleLoss sample_loss(const SegmenterOutput& out, const TextBank& bank, const TrainingTarget& target,
                       const LossConfig& cfg);

// ---------------------------------------------------------------- optimizer

struct OptimConfig {
  double lr = 5e-5;
  double encoder_lr = 5e-6;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double poly_power = 0.9;
  double grad_clip = 1.0;  // global norm; <= 0 disables
  int max_iter = 20000;
};

/// base * (1 - iter / max_iter)^power, zero at and beyond max_iter.
double poly_lr(double base, int iter, int max_iter, double power);

struct AdamState {
  Matrix m, v;
};

/// Decoupled-weight-decay Adam with per-group learning rates.
class AdamW {
 public:
  AdamW(std::vector<NamedParameter> params, OptimConfig cfg);

  /// One update at schedule position `iter` (0-based); returns the global
  /// gradient norm before clipping.
  double step(int iter);
  double lr_at(int iter, ParamGroup g) const;

  const OptimConfig& config() const { return cfg_; }
  long steps() const { return steps_; }
  const std::map<std::string, AdamState>& state() const { return state_; }
  void load_state(std::map<std::string, AdamState> state, long steps);

 private:
  std::vector<NamedParameter> params_;
  OptimConfig cfg_;
  std::map<std::string, AdamState> state_;
  long steps_ = 0;
};

// ---------------------------------------------------------------- checkpoint

inline constexpr char kCheckpointMagic[8] = "ZTCKPT1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string config_json;
  int iteration = 0;
  std::uint64_t seed = 0;
  std::map<std::string, Matrix> params;
  std::map<std::string, AdamState> adam;
  long adam_steps = 0;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws DataError on a bad magic or an unsupported version.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------- trainer

struct TrainConfig {
  OptimConfig optim;
  LossConfig loss;
  int iterations = 20000;
  int batch_size = 8;
  int log_interval = 10;
  int checkpoint_interval = 1000;
};

struct TrainLogRecord {
  int iteration = 0;
  double lr = 0.0;
  LossReport report;
  double wall_seconds = 0.0;
};

using BatchFn = std::function<std::vector<PseudoSample>(int iteration)>;

class Trainer {
 public:
  Trainer(Segmenter& model, const TextBank& bank, TrainConfig cfg);

  /// Forward, backward and one optimizer update over a batch. Non-finite
  /// losses dump the batch to `dump_dir` (when set) and throw NumericError.
  LossReport step(std::span<const PseudoSample> batch);

  /// Runs until `iterations`, calling `on_log` every log interval and
  /// `on_checkpoint` every checkpoint interval and at the end.
  void run(const BatchFn& batches, const std::function<void(const TrainLogRecord&)>& on_log,
           const std::function<void(int iteration)>& on_checkpoint);

  int iteration() const { return iteration_; }
  void set_iteration(int it) { iteration_ = it; }
  AdamW& optimizer() { return opt_; }
  void set_dump_dir(std::filesystem::path dir) { dump_dir_ = std::move(dir); }

 private:
  Segmenter& model_;
  const TextBank& bank_;
  TrainConfig cfg_;
  AdamW opt_;
  int iteration_ = 0;
  std::filesystem::path dump_dir_;
};

}  // namespace zutis

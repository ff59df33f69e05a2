#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "zutis/grid.hpp"
#include "zutis/model.hpp"
#include "zutis/rng.hpp"

namespace zutis {

// ---------------------------------------------------------------- prompts

/// Frozen text encoder producing unit-norm vectors.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual Eigen::VectorXf encode(std::string_view text) const = 0;
  virtual int dim() const = 0;
};

/// Deterministic bag-of-tokens encoder: each lower-cased token maps to a
/// Gaussian vector seeded by its hash; tokens from the prompt templates are
/// down-weighted so category words dominate. Stand-in for a pretrained
/// text tower at desk scale.
class HashTextEncoder final : public TextEncoder {
 public:
  explicit HashTextEncoder(int dim, float template_word_weight = 0.25f);
  Eigen::VectorXf encode(std::string_view text) const override;
  int dim() const override { return dim_; }

  Eigen::VectorXf token_vector(std::string_view token) const;

 private:
  int dim_;
  float template_weight_;
};

/// The 85 ImageNet-style prompt templates; "{}" marks the category name.
const std::vector<std::string>& default_prompt_templates();
std::string fill_template(std::string_view tmpl, std::string_view category);

struct CategoryPrompt {
  std::string category_name;
  std::vector<std::string> templates;
  Eigen::VectorXf embedding;  // unit-norm, length e_t
};

/// L2-normalized mean of the per-template embeddings. Throws
/// DegeneratePromptError when the mean nearly vanishes.
CategoryPrompt encode_category_prompts(const std::string& category_name,
                                       const std::vector<std::string>& templates,
                                       const TextEncoder& encoder);

/// Bank rows follow `names`; by convention names[0] is the background.
TextBank make_text_bank(const std::vector<std::string>& names, const std::vector<std::string>& templates,
                        const TextEncoder& encoder);

// ---------------------------------------------------------------- retrieval

struct IndexDataset {
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> embeddings;  // N x d
  std::vector<std::string> image_refs;

  int size() const { return static_cast<int>(image_refs.size()); }
  int dim() const { return static_cast<int>(embeddings.cols()); }
  /// Throws DataError unless rows are unit-norm (1e-5), N >= 1 and refs match.
  void validate() const;

  /// `dir/embeddings.f32` (row-major float32 LE) + `dir/locators.txt`.
  static IndexDataset load(const std::filesystem::path& dir, int dim);
  void save(const std::filesystem::path& dir) const;
};

struct Archive {
  std::string category_name;
  int k = 0;
  std::vector<int> member_indices;  // descending similarity, ties by index
  std::vector<float> similarities;
};

Archive build_archive(const IndexDataset& index, const CategoryPrompt& prompt, int k);

// ---------------------------------------------------------------- saliency

class SaliencyDetector {
 public:
  virtual ~SaliencyDetector() = default;
  virtual BinaryMask detect(const Image& image, std::string_view locator) const = 0;
};

/// Returns the generator's ground truth for known locators.
class ShapesOracleDetector final : public SaliencyDetector {
 public:
  void add(std::string locator, BinaryMask mask);
  BinaryMask detect(const Image& image, std::string_view locator) const override;

 private:
  std::map<std::string, BinaryMask, std::less<>> masks_;
};

/// Reads precomputed masks `<dir>/<locator stem>.png` (nonzero = foreground).
class ExternalMaskDetector final : public SaliencyDetector {
 public:
  explicit ExternalMaskDetector(std::filesystem::path dir) : dir_(std::move(dir)) {}
  BinaryMask detect(const Image& image, std::string_view locator) const override;

 private:
  std::filesystem::path dir_;
};

/// Binary mask of the image size; an all-zero result marks the image as
/// unusable. Detector failures surface as DetectionError.
BinaryMask generate_pseudo_mask(const Image& image, const SaliencyDetector& detector,
                                std::string_view locator = {});

// ---------------------------------------------------------------- samples

/// Image with an instance partition. Category indices refer to the text
/// bank, where 0 is the background.
struct PseudoSample {
  Image image;
  LabelMap instance_map;                   // 0 = background, 1..n instances
  std::map<int, int> instance_categories;  // instance id -> category index
  std::vector<std::string> provenance;

  int num_instances() const { return static_cast<int>(instance_categories.size()); }
  /// Throws DataError when ids are not contiguous or lack a category.
  void validate() const;
  LabelMap semantic_map() const;
  BinaryMask instance_mask(int id) const;

  friend bool operator==(const PseudoSample&, const PseudoSample&) = default;
};

/// Drops ids with no pixels and renumbers the rest 1..n preserving order.
void compact_instances(PseudoSample& sample);

struct PasteSource {
  Image image;
  BinaryMask mask;
  int category = 0;
  std::string provenance;
  std::optional<std::array<int, 2>> offset;  // (dy, dx); random when unset
};

inline constexpr int kMaxPasteSources = 10;

/// Pastes sources in order onto a canvas. The first source supplies the
/// canvas (placed at the origin); later ones land at a uniform random offset
/// that keeps at least half of their mask on the canvas. Later pastes
/// occlude earlier ones; fully hidden instances are removed.
PseudoSample compose_copy_paste(std::span<const PasteSource> sources, int canvas_h, int canvas_w, Rng& rng);

struct AugmentConfig {
  double flip_prob = 0.5;
  double scale_min = 0.1;
  double scale_max = 1.0;
  int crop_size = 384;
  double jitter_prob = 0.8;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double hue = 0.1;
  double gray_prob = 0.2;
  double blur_prob = 0.5;
  double blur_kernel_frac = 0.1;

  /// Geometry-only identity: no flip, no rescale, crop = `size`, no photometrics.
  static AugmentConfig identity(int size);
};

/// The geometric part of one augmentation draw. Output pixel (y, x) reads
/// rescaled-image pixel (y + offset_y, x + offset_x); out-of-range reads are
/// padding (instance 0, black).
struct GeometricDraw {
  bool flipped = false;
  double scale = 1.0;
  int scaled_h = 0, scaled_w = 0;
  int offset_y = 0, offset_x = 0;
  int out_h = 0, out_w = 0;
};

struct AugmentResult {
  PseudoSample sample;
  GeometricDraw geometry;
};

AugmentResult augment(const PseudoSample& sample, const AugmentConfig& cfg, Rng& rng);

PseudoSample hflip(const PseudoSample& sample);
Image resize_bilinear(const Image& image, int out_h, int out_w);
LabelMap resize_nearest(const LabelMap& map, int out_h, int out_w);
BinaryMask resize_nearest(const BinaryMask& map, int out_h, int out_w);
Image to_grayscale(const Image& image);
Image gaussian_blur(const Image& image, int kernel, double sigma);

/// Pseudo-labelled members of one archive.
struct ArchivePool {
  std::string name;
  int category = 0;
  std::vector<PasteSource> members;
};

struct CopyPasteConfig {
  bool enabled = true;
  int max_sources = kMaxPasteSources;
  double same_archive_prob = 0.5;
};

struct CopyPasteDraw {
  PseudoSample sample;
  bool same_archive = false;
  int requested_sources = 0;
};

/// Draws 1..max_sources sources (uniform), all from one random archive with
/// probability same_archive_prob and otherwise from independently chosen
/// archives, augments each and composes them on a canvas of the crop size.
/// With copy-paste disabled, a single augmented source is returned.
CopyPasteDraw sample_copy_paste_batch(std::span<const ArchivePool> pools, const CopyPasteConfig& cp,
                                      const AugmentConfig& aug, Rng& rng);

}  // namespace zutis

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "zutis/autograd.hpp"
#include "zutis/grid.hpp"
#include "zutis/rng.hpp"

namespace zutis {

using ag::Matrix;
using ag::Var;

inline constexpr int kDecoderLayers = 6;

struct ModelConfig {
  int patch_size = 16;
  int visual_dim = 64;         // e_v
  int text_dim = 64;           // e_t, also the retrieval embedding width
  int decoder_dim = 64;        // d of the decoder values and queries
  int encoder_layers = 2;
  int encoder_heads = 4;
  int decoder_heads = 8;
  int num_queries = 100;       // n_q
  bool stop_gradient = true;   // block mask-loss gradients at the encoder output
  std::string encoder = "toy";  // "toy" or "feature-file"
  std::string feature_dir;      // feature-file encoder input

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class ParamGroup { kEncoder, kHead };

struct NamedParameter {
  std::string name;
  Var var;
  ParamGroup group;
  bool decay;  // matrices decay; biases, norms and gains do not
};

// ---------------------------------------------------------------- layers

struct Linear {
  Var weight;  // out x in
  Var bias;    // 1 x out
  Linear() = default;
  Linear(int in, int out, Rng& rng);
  Var operator()(const Var& x) const { return ag::linear(x, weight, bias); }
  void collect(const std::string& prefix, ParamGroup g, std::vector<NamedParameter>& out) const;
};

struct LayerNorm {
  Var gamma, beta;
  LayerNorm() = default;
  explicit LayerNorm(int dim);
  Var operator()(const Var& x) const { return ag::layer_norm(x, gamma, beta); }
  void collect(const std::string& prefix, ParamGroup g, std::vector<NamedParameter>& out) const;
};

/// Three linear layers with ReLU in between.
struct Mlp3 {
  Linear l1, l2, l3;
  Mlp3() = default;
  Mlp3(int in, int hidden, int out, Rng& rng);
  Var operator()(const Var& x) const;
  void collect(const std::string& prefix, ParamGroup g, std::vector<NamedParameter>& out) const;
};

struct Attention {
  Linear q, k, v, o;
  int heads = 1;
  Attention() = default;
  Attention(int dim, int heads, Rng& rng);
  Var operator()(const Var& query, const Var& context) const;
  void collect(const std::string& prefix, ParamGroup g, std::vector<NamedParameter>& out) const;
};

// ---------------------------------------------------------------- features

/// Per-location visual features, stored location-major: row y*w+x holds the
/// e_v channels of grid cell (y, x).
struct DenseFeatures {
  Var values;
  int h = 0, w = 0;
  double stride_y = 1.0, stride_x = 1.0;  // input pixels per feature cell
  int image_h = 0, image_w = 0;

  int channels() const { return static_cast<int>(values.cols()); }
};

struct EncodedPatches {
  Var tokens;  // (h*w) x e_v
  int h = 0, w = 0;
};

/// Backbone producing patch tokens from an image.
class ImageEncoder {
 public:
  virtual ~ImageEncoder() = default;
  /// `locator` identifies the image for encoders backed by precomputed data.
  virtual EncodedPatches encode(const Image& image, std::string_view locator = {}) const = 0;
  virtual int feature_dim() const = 0;
  virtual int patch_size() const = 0;
  virtual std::vector<NamedParameter> parameters() const = 0;
  virtual std::string kind() const = 0;
};

/// Patchify + linear embedding + fixed 2-D sinusoidal positions + pre-norm
/// transformer layers. Accepts any input at least one patch in size;
/// trailing pixels that do not fill a patch are ignored.
class ToyEncoder final : public ImageEncoder {
 public:
  ToyEncoder(const ModelConfig& cfg, Rng& rng);
  EncodedPatches encode(const Image& image, std::string_view locator = {}) const override;
  int feature_dim() const override { return dim_; }
  int patch_size() const override { return patch_; }
  std::vector<NamedParameter> parameters() const override;
  std::string kind() const override { return "toy"; }

 private:
  struct Block {
    LayerNorm n1, n2;
    Attention attn;
    Linear fc1, fc2;
  };
  int patch_;
  int dim_;
  Linear embed_;
  std::vector<Block> blocks_;
  LayerNorm out_norm_;
};

/// Frozen adapter over features exported by an external pretrained backbone.
/// Reads `<dir>/<locator stem>.feat`: magic "ZTFEAT1", int32 e_v, h, w,
/// then e_v*h*w little-endian float32 in channel-major order.
class FeatureFileEncoder final : public ImageEncoder {
 public:
  FeatureFileEncoder(std::filesystem::path dir, int feature_dim, int patch_size);
  EncodedPatches encode(const Image& image, std::string_view locator = {}) const override;
  int feature_dim() const override { return dim_; }
  int patch_size() const override { return patch_; }
  std::vector<NamedParameter> parameters() const override { return {}; }
  std::string kind() const override { return "feature-file"; }

 private:
  std::filesystem::path dir_;
  int dim_;
  int patch_;
};

void write_feature_file(const std::filesystem::path& path, const Matrix& channel_major, int h, int w);

/// Patch tokens upsampled x2 with bilinear (half-pixel) interpolation.
DenseFeatures extract_dense_features(const Image& image, const ImageEncoder& encoder,
                                     std::string_view locator = {});

Matrix sincos_position_table(int h, int w, int dim);

// ---------------------------------------------------------------- text bank

/// Frozen category text embeddings, one unit-norm row per category.
class TextBank {
 public:
  TextBank() = default;
  TextBank(Matrix embeddings, std::vector<std::string> names);

  const Matrix& embeddings() const { return embeddings_; }
  const std::vector<std::string>& names() const { return names_; }
  int size() const { return static_cast<int>(names_.size()); }
  int dim() const { return static_cast<int>(embeddings_.cols()); }
  static constexpr bool frozen() { return true; }
  int index_of(std::string_view name) const;  // -1 when absent

 private:
  Matrix embeddings_;
  std::vector<std::string> names_;
};

// ---------------------------------------------------------------- heads

struct SemanticProjection {
  Var weight;  // e_t x e_v
  LayerNorm norm;
  SemanticProjection() = default;
  SemanticProjection(int visual_dim, int text_dim, Rng& rng);
  void collect(std::vector<NamedParameter>& out) const;
};

/// W then layer-norm then per-location L2 normalization; (h*w) x e_t.
Var project_semantic(const DenseFeatures& feats, const SemanticProjection& proj);
/// Cosine logits (h*w) x |C| against the bank.
Var semantic_logits(const Var& projected, const TextBank& bank);

struct ProbMap {
  Matrix probs;  // (h*w) x |C|, rows sum to one
  int h = 0, w = 0;
};

ProbMap semantic_probabilities(const Var& projected, const TextBank& bank, int h, int w);

struct QueryDecoder {
  struct Layer {
    LayerNorm cross_norm, self_norm, ffn_norm;
    Attention cross, self;
    Linear fc1, fc2;
  };
  Var queries;  // n_q x d
  Mlp3 value_ffn;
  std::array<Layer, kDecoderLayers> layers;
  LayerNorm out_norm;
  Mlp3 query_ffn;

  QueryDecoder() = default;
  QueryDecoder(const ModelConfig& cfg, Rng& rng);
  int num_queries() const { return static_cast<int>(queries.rows()); }
  void collect(std::vector<NamedParameter>& out) const;
};

/// Differentiable decoder output. Mask logits are (n_q x h*w); the mask
/// itself is sigmoid(logit).
struct ProposalLogits {
  Var final_logits;
  std::array<Var, kDecoderLayers> aux_logits;  // from the queries entering each layer
  Var refined_queries;                          // unit-norm rows
  Var values;                                   // (h*w) x d
};

ProposalLogits propose_mask_logits(const DenseFeatures& feats, const QueryDecoder& dec,
                                   bool stop_gradient);

/// Soft proposals for inference.
struct MaskProposalSet {
  Matrix masks;  // n_q x (h*w), strictly inside (0,1)
  Matrix queries;
  std::array<Matrix, kDecoderLayers> aux_masks;
  int h = 0, w = 0;

  int size() const { return static_cast<int>(masks.rows()); }
};

Matrix sigmoid_masks(const Matrix& logits);
MaskProposalSet propose_masks(const DenseFeatures& feats, const QueryDecoder& dec,
                              bool stop_gradient = true);

// ---------------------------------------------------------------- segmenter

struct SegmenterOutput {
  DenseFeatures feats;
  Var projected;  // (h*w) x e_t, unit-norm rows
  ProposalLogits proposals;
};

class Segmenter {
 public:
  Segmenter(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const ImageEncoder& encoder() const { return *encoder_; }
  const SemanticProjection& projection() const { return projection_; }
  const QueryDecoder& decoder() const { return decoder_; }

  SegmenterOutput forward(const Image& image, std::string_view locator = {}) const;

  /// Stable, name-sorted parameter list.
  std::vector<NamedParameter> parameters() const;
  void zero_grad() const;

  std::map<std::string, Matrix> state() const;
  void load_state(const std::map<std::string, Matrix>& state);

 private:
  ModelConfig cfg_;
  std::unique_ptr<ImageEncoder> encoder_;
  SemanticProjection projection_;
  QueryDecoder decoder_;
};

}  // namespace zutis

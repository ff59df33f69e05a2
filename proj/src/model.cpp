#include "zutis/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "zutis/error.hpp"

namespace zutis {
namespace {

Matrix xavier(int out, int in, Rng& rng) {
  const double bound = std::sqrt(6.0 / (in + out));
  Matrix m(out, in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(dist(rng));
  return m;
}

Matrix normal(int rows, int cols, double sigma, Rng& rng) {
  Matrix m(rows, cols);
  std::normal_distribution<double> dist(0.0, sigma);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(dist(rng));
  return m;
}

void push(std::vector<NamedParameter>& out, std::string name, const Var& v, ParamGroup g, bool decay) {
  out.push_back({std::move(name), v, g, decay});
}

}  // namespace

Linear::Linear(int in, int out, Rng& rng)
    : weight(ag::parameter(xavier(out, in, rng))), bias(ag::parameter(Matrix::Zero(1, out))) {}

void Linear::collect(const std::string& prefix, ParamGroup g, std::vector<NamedParameter>& out) const {
  push(out, prefix + ".weight", weight, g, true);
  push(out, prefix + ".bias", bias, g, false);
}

LayerNorm::LayerNorm(int dim)
    : gamma(ag::parameter(Matrix::Ones(1, dim))), beta(ag::parameter(Matrix::Zero(1, dim))) {}

void LayerNorm::collect(const std::string& prefix, ParamGroup g, std::vector<NamedParameter>& out) const {
  push(out, prefix + ".gamma", gamma, g, false);
  push(out, prefix + ".beta", beta, g, false);
}

Mlp3::Mlp3(int in, int hidden, int out, Rng& rng) : l1(in, hidden, rng), l2(hidden, hidden, rng), l3(hidden, out, rng) {}

Var Mlp3::operator()(const Var& x) const { return l3(ag::relu(l2(ag::relu(l1(x))))); }

void Mlp3::collect(const std::string& prefix, ParamGroup g, std::vector<NamedParameter>& out) const {
  l1.collect(prefix + ".l1", g, out);
  l2.collect(prefix + ".l2", g, out);
  l3.collect(prefix + ".l3", g, out);
}

Attention::Attention(int dim, int heads_, Rng& rng)
    : q(dim, dim, rng), k(dim, dim, rng), v(dim, dim, rng), o(dim, dim, rng), heads(heads_) {
  if (heads < 1 || dim % heads != 0) throw ArgumentError("attention width must be divisible by heads");
}

Var Attention::operator()(const Var& query, const Var& context) const {
  return o(ag::multihead_attention(q(query), k(context), v(context), heads));
}

void Attention::collect(const std::string& prefix, ParamGroup g, std::vector<NamedParameter>& out) const {
  q.collect(prefix + ".q", g, out);
  k.collect(prefix + ".k", g, out);
  v.collect(prefix + ".v", g, out);
  o.collect(prefix + ".o", g, out);
}

// ---------------------------------------------------------------- encoder

Matrix sincos_position_table(int h, int w, int dim) {
  Matrix table = Matrix::Zero(static_cast<Eigen::Index>(h) * w, dim);
  const int half = dim / 2;
  const int pairs = half / 2;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      auto row = table.row(static_cast<Eigen::Index>(y) * w + x);
      for (int i = 0; i < pairs; ++i) {
        const double freq = 1.0 / std::pow(10000.0, static_cast<double>(i) / pairs);
        row(2 * i) = static_cast<float>(std::sin(y * freq));
        row(2 * i + 1) = static_cast<float>(std::cos(y * freq));
        row(half + 2 * i) = static_cast<float>(std::sin(x * freq));
        row(half + 2 * i + 1) = static_cast<float>(std::cos(x * freq));
      }
    }
  }
  return table;
}

ToyEncoder::ToyEncoder(const ModelConfig& cfg, Rng& rng)
    : patch_(cfg.patch_size), dim_(cfg.visual_dim), embed_(3 * cfg.patch_size * cfg.patch_size, cfg.visual_dim, rng),
      out_norm_(cfg.visual_dim) {
  if (patch_ < 1) throw ArgumentError("patch size must be positive");
  for (int i = 0; i < cfg.encoder_layers; ++i) {
    Block b;
    b.n1 = LayerNorm(dim_);
    b.attn = Attention(dim_, cfg.encoder_heads, rng);
    b.n2 = LayerNorm(dim_);
    b.fc1 = Linear(dim_, 2 * dim_, rng);
    b.fc2 = Linear(2 * dim_, dim_, rng);
    blocks_.push_back(std::move(b));
  }
}

EncodedPatches ToyEncoder::encode(const Image& image, std::string_view) const {
  const int h = image.height() / patch_;
  const int w = image.width() / patch_;
  if (h < 1 || w < 1) throw ArgumentError("image is smaller than one encoder patch");
  const int pp = patch_ * patch_;
  Matrix patches(static_cast<Eigen::Index>(h) * w, 3 * pp);
  for (int py = 0; py < h; ++py) {
    for (int px = 0; px < w; ++px) {
      auto row = patches.row(static_cast<Eigen::Index>(py) * w + px);
      int col = 0;
      for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < patch_; ++y) {
          for (int x = 0; x < patch_; ++x) {
            const float v = image.at(py * patch_ + y, px * patch_ + x, c) / 255.0f;
            row(col++) = (v - 0.5f) / 0.25f;
          }
        }
      }
    }
  }
  Var x = ag::add(embed_(ag::constant(std::move(patches))), ag::constant(sincos_position_table(h, w, dim_)));
  for (const auto& b : blocks_) {
    Var n = b.n1(x);
    x = ag::add(x, b.attn(n, n));
    x = ag::add(x, b.fc2(ag::relu(b.fc1(b.n2(x)))));
  }
  return {out_norm_(x), h, w};
}

std::vector<NamedParameter> ToyEncoder::parameters() const {
  std::vector<NamedParameter> out;
  const auto g = ParamGroup::kEncoder;
  embed_.collect("encoder.embed", g, out);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "encoder.block" + std::to_string(i);
    blocks_[i].n1.collect(p + ".n1", g, out);
    blocks_[i].attn.collect(p + ".attn", g, out);
    blocks_[i].n2.collect(p + ".n2", g, out);
    blocks_[i].fc1.collect(p + ".fc1", g, out);
    blocks_[i].fc2.collect(p + ".fc2", g, out);
  }
  out_norm_.collect("encoder.out_norm", g, out);
  return out;
}

FeatureFileEncoder::FeatureFileEncoder(std::filesystem::path dir, int feature_dim, int patch_size)
    : dir_(std::move(dir)), dim_(feature_dim), patch_(patch_size) {}

EncodedPatches FeatureFileEncoder::encode(const Image& image, std::string_view locator) const {
  if (image.height() < patch_ || image.width() < patch_) {
    throw ArgumentError("image is smaller than one encoder patch");
  }
  const auto path = dir_ / (std::filesystem::path(std::string(locator)).stem().string() + ".feat");
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("missing feature file: " + path.string());
  char magic[8] = {};
  std::int32_t dims[3] = {};
  f.read(magic, 8);
  f.read(reinterpret_cast<char*>(dims), sizeof dims);
  if (!f || std::memcmp(magic, "ZTFEAT1", 7) != 0) throw DataError("bad feature file header: " + path.string());
  if (dims[0] != dim_) throw DataError("feature file channel count differs from configured e_v: " + path.string());
  const int h = dims[1], w = dims[2];
  if (h < 1 || w < 1) throw DataError("empty feature grid: " + path.string());
  std::vector<float> raw(static_cast<std::size_t>(dim_) * h * w);
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)));
  if (!f) throw DataError("truncated feature file: " + path.string());
  Matrix tokens(static_cast<Eigen::Index>(h) * w, dim_);
  for (int c = 0; c < dim_; ++c) {
    for (int i = 0; i < h * w; ++i) tokens(i, c) = raw[static_cast<std::size_t>(c) * h * w + i];
  }
  if (!tokens.allFinite()) throw NumericError("non-finite values in feature file: " + path.string());
  return {ag::constant(std::move(tokens)), h, w};
}

void write_feature_file(const std::filesystem::path& path, const Matrix& channel_major, int h, int w) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  const char magic[8] = "ZTFEAT1";
  const std::int32_t dims[3] = {static_cast<std::int32_t>(channel_major.rows()), h, w};
  f.write(magic, 8);
  f.write(reinterpret_cast<const char*>(dims), sizeof dims);
  for (Eigen::Index c = 0; c < channel_major.rows(); ++c) {
    for (Eigen::Index i = 0; i < channel_major.cols(); ++i) {
      const float v = channel_major(c, i);
      f.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
  }
}

DenseFeatures extract_dense_features(const Image& image, const ImageEncoder& encoder, std::string_view locator) {
  if (image.empty()) throw ArgumentError("empty image");
  EncodedPatches p = encoder.encode(image, locator);
  DenseFeatures f;
  f.h = 2 * p.h;
  f.w = 2 * p.w;
  f.values = ag::resize_bilinear(p.tokens, p.h, p.w, f.h, f.w);
  f.stride_y = static_cast<double>(image.height()) / f.h;
  f.stride_x = static_cast<double>(image.width()) / f.w;
  f.image_h = image.height();
  f.image_w = image.width();
  return f;
}

// ---------------------------------------------------------------- text bank

TextBank::TextBank(Matrix embeddings, std::vector<std::string> names)
    : embeddings_(std::move(embeddings)), names_(std::move(names)) {
  if (static_cast<std::size_t>(embeddings_.rows()) != names_.size()) {
    throw ArgumentError("text bank: one embedding row per category required");
  }
  std::set<std::string> seen;
  for (const auto& n : names_) {
    if (!seen.insert(n).second) throw ArgumentError("text bank: duplicate category name '" + n + "'");
  }
  for (Eigen::Index r = 0; r < embeddings_.rows(); ++r) {
    if (std::abs(embeddings_.row(r).norm() - 1.0f) > 1e-5f) {
      throw ArgumentError("text bank: embedding for '" + names_[r] + "' is not unit-norm");
    }
  }
}

int TextBank::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return static_cast<int>(i);
  }
  return -1;
}

// ---------------------------------------------------------------- heads

SemanticProjection::SemanticProjection(int visual_dim, int text_dim, Rng& rng)
    : weight(ag::parameter(xavier(text_dim, visual_dim, rng))), norm(text_dim) {}

void SemanticProjection::collect(std::vector<NamedParameter>& out) const {
  push(out, "projection.weight", weight, ParamGroup::kHead, true);
  norm.collect("projection.norm", ParamGroup::kHead, out);
}

Var project_semantic(const DenseFeatures& feats, const SemanticProjection& proj) {
  if (feats.channels() != proj.weight.cols()) throw ArgumentError("project_semantic: feature width differs from W");
  if (!feats.values.value().allFinite()) throw NumericError("project_semantic: non-finite features");
  return ag::l2_normalize_rows(proj.norm(ag::matmul_bt(feats.values, proj.weight)));
}

Var semantic_logits(const Var& projected, const TextBank& bank) {
  if (bank.size() == 0) throw ArgumentError("semantic_logits: empty text bank");
  if (projected.cols() != bank.dim()) throw ArgumentError("semantic_logits: e_t mismatch");
  return ag::matmul_bt(projected, ag::constant(bank.embeddings()));
}

ProbMap semantic_probabilities(const Var& projected, const TextBank& bank, int h, int w) {
  ProbMap p;
  p.probs = semantic_logits(projected, bank).value();
  for (Eigen::Index r = 0; r < p.probs.rows(); ++r) {
    auto row = p.probs.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  p.h = h;
  p.w = w;
  return p;
}

QueryDecoder::QueryDecoder(const ModelConfig& cfg, Rng& rng)
    : queries(ag::parameter(normal(cfg.num_queries, cfg.decoder_dim, 0.02, rng))),
      value_ffn(cfg.visual_dim, 2 * cfg.visual_dim, cfg.decoder_dim, rng),
      out_norm(cfg.decoder_dim),
      query_ffn(cfg.decoder_dim, cfg.decoder_dim, cfg.decoder_dim, rng) {
  if (cfg.num_queries < 1) throw ArgumentError("query decoder needs at least one query");
  // Zero values at start: every proposal is exactly 0.5 until the first update.
  value_ffn.l3.weight.mutable_value().setZero();
  const int d = cfg.decoder_dim;
  for (auto& l : layers) {
    l.cross_norm = LayerNorm(d);
    l.cross = Attention(d, cfg.decoder_heads, rng);
    l.self_norm = LayerNorm(d);
    l.self = Attention(d, cfg.decoder_heads, rng);
    l.ffn_norm = LayerNorm(d);
    l.fc1 = Linear(d, 2 * d, rng);
    l.fc2 = Linear(2 * d, d, rng);
  }
}

void QueryDecoder::collect(std::vector<NamedParameter>& out) const {
  const auto g = ParamGroup::kHead;
  push(out, "decoder.queries", queries, g, true);
  value_ffn.collect("decoder.value_ffn", g, out);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string p = "decoder.layer" + std::to_string(i);
    layers[i].cross_norm.collect(p + ".cross_norm", g, out);
    layers[i].cross.collect(p + ".cross", g, out);
    layers[i].self_norm.collect(p + ".self_norm", g, out);
    layers[i].self.collect(p + ".self", g, out);
    layers[i].ffn_norm.collect(p + ".ffn_norm", g, out);
    layers[i].fc1.collect(p + ".fc1", g, out);
    layers[i].fc2.collect(p + ".fc2", g, out);
  }
  out_norm.collect("decoder.out_norm", g, out);
  query_ffn.collect("decoder.query_ffn", g, out);
}

ProposalLogits propose_mask_logits(const DenseFeatures& feats, const QueryDecoder& dec,
                                   bool stop_gradient) {
  if (dec.num_queries() < 1) throw ArgumentError("propose_masks: no queries");
  ProposalLogits out;
  const Var source = stop_gradient ? ag::detach(feats.values) : feats.values;
  out.values = dec.value_ffn(source);
  auto embed = [&](const Var& q) { return ag::l2_normalize_rows(dec.query_ffn(dec.out_norm(q))); };

  Var q = dec.queries;
  for (std::size_t i = 0; i < dec.layers.size(); ++i) {
    out.aux_logits[i] = ag::matmul_bt(embed(q), out.values);
    const auto& l = dec.layers[i];
    q = ag::add(q, l.cross(l.cross_norm(q), out.values));
    Var n = l.self_norm(q);
    q = ag::add(q, l.self(n, n));
    q = ag::add(q, l.fc2(ag::relu(l.fc1(l.ffn_norm(q)))));
  }
  out.refined_queries = embed(q);
  out.final_logits = ag::matmul_bt(out.refined_queries, out.values);
  return out;
}

Matrix sigmoid_masks(const Matrix& logits) {
  static constexpr float lo = 1e-7f;
  static constexpr float hi = 1.0f - 1e-7f;
  return logits.unaryExpr([](float x) {
    const float s = x >= 0 ? 1.0f / (1.0f + std::exp(-x)) : std::exp(x) / (1.0f + std::exp(x));
    return std::clamp(s, lo, hi);
  });
}

MaskProposalSet propose_masks(const DenseFeatures& feats, const QueryDecoder& dec, bool stop_gradient) {
  if (!feats.values.value().allFinite()) throw NumericError("propose_masks: non-finite features");
  ProposalLogits p = propose_mask_logits(feats, dec, stop_gradient);
  MaskProposalSet s;
  s.masks = sigmoid_masks(p.final_logits.value());
  s.queries = p.refined_queries.value();
  for (std::size_t i = 0; i < p.aux_logits.size(); ++i) s.aux_masks[i] = sigmoid_masks(p.aux_logits[i].value());
  s.h = feats.h;
  s.w = feats.w;
  return s;
}

// ---------------------------------------------------------------- segmenter

Segmenter::Segmenter(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.num_queries < 1) throw ArgumentError("num_queries must be >= 1");
  if (cfg.decoder_dim % cfg.decoder_heads != 0) throw ArgumentError("decoder_dim must be divisible by decoder_heads");
  Rng enc_rng = make_rng(seed, 101);
  Rng proj_rng = make_rng(seed, 102);
  Rng dec_rng = make_rng(seed, 103);
  if (cfg.encoder == "toy") {
    encoder_ = std::make_unique<ToyEncoder>(cfg, enc_rng);
  } else if (cfg.encoder == "feature-file") {
    encoder_ = std::make_unique<FeatureFileEncoder>(cfg.feature_dir, cfg.visual_dim, cfg.patch_size);
  } else {
    throw ArgumentError("unknown encoder '" + cfg.encoder + "'");
  }
  projection_ = SemanticProjection(cfg.visual_dim, cfg.text_dim, proj_rng);
  decoder_ = QueryDecoder(cfg, dec_rng);
}

SegmenterOutput Segmenter::forward(const Image& image, std::string_view locator) const {
  SegmenterOutput out;
  out.feats = extract_dense_features(image, *encoder_, locator);
  out.projected = project_semantic(out.feats, projection_);
  out.proposals = propose_mask_logits(out.feats, decoder_, cfg_.stop_gradient);
  return out;
}

std::vector<NamedParameter> Segmenter::parameters() const {
  std::vector<NamedParameter> out = encoder_->parameters();
  projection_.collect(out);
  decoder_.collect(out);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  return out;
}

void Segmenter::zero_grad() const {
  for (const auto& p : parameters()) p.var.zero_grad();
}

std::map<std::string, Matrix> Segmenter::state() const {
  std::map<std::string, Matrix> s;
  for (const auto& p : parameters()) s.emplace(p.name, p.var.value());
  return s;
}

void Segmenter::load_state(const std::map<std::string, Matrix>& state) {
  auto params = parameters();
  if (state.size() != params.size()) throw DataError("checkpoint parameter count differs from model");
  for (auto& p : params) {
    auto it = state.find(p.name);
    if (it == state.end()) throw DataError("checkpoint lacks parameter " + p.name);
    if (it->second.rows() != p.var.rows() || it->second.cols() != p.var.cols()) {
      throw DataError("checkpoint shape mismatch for " + p.name);
    }
    Var v = p.var;
    v.mutable_value() = it->second;
  }
}

}  // namespace zutis

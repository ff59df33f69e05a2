#pragma once

// Shared fixtures for the unit suites.

#include <string>
#include <vector>

#include "zutis/curation.hpp"
#include "zutis/model.hpp"
#include "zutis/rng.hpp"
#include "zutis/shapes.hpp"
#include "zutis/training.hpp"

namespace zutis::test {

inline ModelConfig small_config() {
  ModelConfig c;
  c.patch_size = 8;
  c.visual_dim = 16;
  c.text_dim = 12;
  c.decoder_dim = 16;
  c.encoder_layers = 1;
  c.encoder_heads = 2;
  c.decoder_heads = 2;
  c.num_queries = 5;
  return c;
}

inline Image random_image(Rng& rng, int h, int w) {
  Image img(h, w);
  for (auto& b : img.bytes()) b = static_cast<std::uint8_t>(uniform_int(rng, 0, 255));
  return img;
}

inline Matrix random_matrix(Rng& rng, int r, int c, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(uniform(rng, -scale, scale));
  return m;
}

// Replaces every parameter with random values so no branch is trivially zero.
inline void randomize(Segmenter& model, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  auto state = model.state();
  for (auto& [name, m] : state) m = random_matrix(rng, static_cast<int>(m.rows()), static_cast<int>(m.cols()), 0.3);
  model.load_state(state);
}

inline TextBank random_bank(Rng& rng, int n, int dim) {
  Matrix e = random_matrix(rng, n, dim);
  e.rowwise().normalize();
  std::vector<std::string> names;
  for (int i = 0; i < n; ++i) names.push_back("c" + std::to_string(i));
  return TextBank(e, names);
}

/// Background plus the shape names, hash-encoded at `dim`.
inline TextBank shapes_bank(int dim, std::vector<std::string> names = {"background", "circle", "square", "triangle"}) {
  return make_text_bank(names, default_prompt_templates(), HashTextEncoder(dim));
}

/// Small model for fitting 32-pixel scenes: 8x8 tokens, 16x16 masks.
inline ModelConfig overfit_config() {
  ModelConfig c = small_config();
  c.patch_size = 4;
  c.visual_dim = 32;
  c.decoder_dim = 32;
  c.text_dim = 32;
  return c;
}

/// Fits `model` to one fixed batch and returns the per-iteration totals.
inline std::vector<double> overfit(Segmenter& model, const TextBank& bank, const std::vector<PseudoSample>& batch,
                                   int iterations, double lr = 3e-3) {
  TrainConfig cfg;
  cfg.optim.lr = lr;
  cfg.optim.encoder_lr = lr;
  cfg.optim.max_iter = iterations;
  cfg.iterations = iterations;
  Trainer trainer(model, bank, cfg);
  std::vector<double> losses;
  for (int i = 0; i < iterations; ++i) losses.push_back(trainer.step(batch).total);
  return losses;
}

}  // namespace zutis::test

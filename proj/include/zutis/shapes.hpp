#pragma once

// Synthetic shapes corpus: flat-coloured geometric objects on low-contrast
// noise. Stands in for a web-scale index dataset, a saliency detector and a
// labelled evaluation set.

#include <array>
#include <string>
#include <vector>

#include "zutis/curation.hpp"
#include "zutis/grid.hpp"
#include "zutis/rng.hpp"

namespace zutis {

/// circle, square, triangle
const std::vector<std::string>& default_shape_categories();
/// Every shape the rasterizer knows, including ones held out for zero-shot use.
const std::vector<std::string>& all_shape_kinds();
bool is_shape_kind(std::string_view name);
std::array<std::uint8_t, 3> shape_color(std::string_view kind);

/// Rasterizes `kind` centred at (cy, cx) with circumradius `radius`.
BinaryMask rasterize_shape(std::string_view kind, double cy, double cx, double radius, int h, int w);

struct ShapesItem {
  std::string locator;   // e.g. "shape_00012"
  std::string category;  // empty for blank images
  Image image;
  BinaryMask mask;
};

struct ShapesCorpus {
  std::vector<ShapesItem> items;
  std::vector<std::string> categories;
  int canvas = 0;
};

/// `num_images` single-object images, balanced over categories in round-robin
/// order, followed by `num_blank` object-free images.
ShapesCorpus make_shapes_dataset(int num_images, const std::vector<std::string>& categories, int canvas, Rng& rng,
                                 int num_blank = 0);

/// Stand-in image tower: the embedding of an item is the normalized sum of
/// its category prompt embedding and isotropic Gaussian noise of the given
/// norm; blanks are pure noise.
IndexDataset embed_shapes_corpus(const ShapesCorpus& corpus, const TextEncoder& text,
                                 const std::vector<std::string>& templates, double noise, Rng& rng);

/// Labelled multi-instance scene. Instance categories index `bank_names`
/// (0 is the background).
struct ShapesScene {
  std::string id;
  PseudoSample sample;
};

/// Scenes with min..max non-overlapping objects drawn uniformly from
/// `categories`; bank index of category i is i + 1.
std::vector<ShapesScene> make_shapes_scenes(int num_scenes, const std::vector<std::string>& categories, int canvas,
                                            int min_objects, int max_objects, Rng& rng);

}  // namespace zutis

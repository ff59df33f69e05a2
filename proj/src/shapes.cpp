#include "zutis/shapes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "zutis/error.hpp"

namespace zutis {
namespace {

struct Point {
  double y, x;
};

std::vector<Point> polygon(std::string_view kind, double cy, double cx, double r) {
  std::vector<Point> pts;
  auto ring = [&](int n, double start_deg, double ry, double rx) {
    for (int i = 0; i < n; ++i) {
      const double a = (start_deg + 360.0 * i / n) * std::numbers::pi / 180.0;
      pts.push_back({cy - ry * std::sin(a), cx + rx * std::cos(a)});
    }
  };
  if (kind == "square") {
    ring(4, 45.0, r, r);
  } else if (kind == "triangle") {
    ring(3, 90.0, r, r);
  } else if (kind == "diamond") {
    ring(4, 0.0, r, 0.6 * r);
  } else if (kind == "hexagon") {
    ring(6, 0.0, r, r);
  } else if (kind == "star") {
    for (int i = 0; i < 10; ++i) {
      const double a = (90.0 + 36.0 * i) * std::numbers::pi / 180.0;
      const double rr = i % 2 == 0 ? r : 0.45 * r;
      pts.push_back({cy - rr * std::sin(a), cx + rr * std::cos(a)});
    }
  }
  return pts;
}

bool inside(const std::vector<Point>& poly, double y, double x) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) in = !in;
  }
  return in;
}

std::uint8_t clamp_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

void fill_background(Image& img, Rng& rng) {
  const double base = uniform(rng, 60.0, 190.0);
  std::array<double, 3> tint{};
  for (auto& t : tint) t = uniform(rng, -8.0, 8.0);
  std::normal_distribution<double> noise(0.0, 10.0);
  std::normal_distribution<double> chroma(0.0, 3.0);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const double n = noise(rng);
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = clamp_byte(base + tint[c] + n + chroma(rng));
    }
  }
}

void paint(Image& img, const BinaryMask& mask, std::string_view kind, Rng& rng) {
  const auto color = shape_color(kind);
  std::array<double, 3> base{};
  for (int c = 0; c < 3; ++c) base[c] = color[c] + uniform(rng, -20.0, 20.0);
  std::normal_distribution<double> noise(0.0, 6.0);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      if (!mask(y, x)) continue;
      const double n = noise(rng);
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = clamp_byte(base[c] + n);
    }
  }
}

std::string numbered(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05d", prefix, i);
  return buf;
}

}  // namespace

const std::vector<std::string>& default_shape_categories() {
  static const std::vector<std::string> c = {"circle", "square", "triangle"};
  return c;
}

const std::vector<std::string>& all_shape_kinds() {
  static const std::vector<std::string> c = {"circle", "square", "triangle", "star", "diamond", "hexagon"};
  return c;
}

bool is_shape_kind(std::string_view name) {
  const auto& k = all_shape_kinds();
  return std::find(k.begin(), k.end(), name) != k.end();
}

std::array<std::uint8_t, 3> shape_color(std::string_view kind) {
  if (kind == "circle") return {220, 50, 50};
  if (kind == "square") return {50, 200, 60};
  if (kind == "triangle") return {50, 80, 230};
  if (kind == "star") return {230, 210, 40};
  if (kind == "diamond") return {200, 60, 200};
  if (kind == "hexagon") return {40, 200, 210};
  throw ArgumentError("unknown shape kind '" + std::string(kind) + "'");
}

BinaryMask rasterize_shape(std::string_view kind, double cy, double cx, double radius, int h, int w) {
  if (!is_shape_kind(kind)) throw ArgumentError("unknown shape kind '" + std::string(kind) + "'");
  BinaryMask m(h, w, 0);
  const auto poly = polygon(kind, cy, cx, radius);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double py = y + 0.5, px = x + 0.5;
      if (kind == "circle") {
        m(y, x) = (py - cy) * (py - cy) + (px - cx) * (px - cx) <= radius * radius;
      } else {
        m(y, x) = inside(poly, py, px);
      }
    }
  }
  return m;
}

ShapesCorpus make_shapes_dataset(int num_images, const std::vector<std::string>& categories, int canvas, Rng& rng,
                                 int num_blank) {
  if (num_images < 1) throw ArgumentError("make_shapes_dataset: num_images must be >= 1");
  if (categories.empty()) throw ArgumentError("make_shapes_dataset: no categories");
  if (canvas < 16) throw ArgumentError("make_shapes_dataset: canvas must be at least 16 pixels");
  ShapesCorpus corpus;
  corpus.categories = categories;
  corpus.canvas = canvas;
  for (int i = 0; i < num_images; ++i) {
    ShapesItem item;
    item.locator = numbered("shape", i);
    item.category = categories[static_cast<std::size_t>(i) % categories.size()];
    item.image = Image(canvas, canvas);
    fill_background(item.image, rng);
    const double r = uniform(rng, 0.18, 0.38) * canvas;
    const double cy = uniform(rng, r + 1, canvas - r - 1);
    const double cx = uniform(rng, r + 1, canvas - r - 1);
    item.mask = rasterize_shape(item.category, cy, cx, r, canvas, canvas);
    paint(item.image, item.mask, item.category, rng);
    corpus.items.push_back(std::move(item));
  }
  for (int i = 0; i < num_blank; ++i) {
    ShapesItem item;
    item.locator = numbered("blank", i);
    item.image = Image(canvas, canvas);
    fill_background(item.image, rng);
    item.mask = BinaryMask(canvas, canvas, 0);
    corpus.items.push_back(std::move(item));
  }
  return corpus;
}

IndexDataset embed_shapes_corpus(const ShapesCorpus& corpus, const TextEncoder& text,
                                 const std::vector<std::string>& templates, double noise, Rng& rng) {
  std::map<std::string, Eigen::VectorXf> prompts;
  for (const auto& c : corpus.categories) prompts[c] = encode_category_prompts(c, templates, text).embedding;
  IndexDataset ds;
  ds.embeddings.resize(static_cast<Eigen::Index>(corpus.items.size()), text.dim());
  std::normal_distribution<double> g(0.0, 1.0);
  for (std::size_t i = 0; i < corpus.items.size(); ++i) {
    Eigen::VectorXd n(text.dim());
    for (int j = 0; j < text.dim(); ++j) n(j) = g(rng);
    n.normalize();
    const auto& item = corpus.items[i];
    Eigen::VectorXd e = item.category.empty() ? n : Eigen::VectorXd(prompts.at(item.category).cast<double>() + noise * n);
    ds.embeddings.row(static_cast<Eigen::Index>(i)) = e.normalized().cast<float>().transpose();
    ds.image_refs.push_back(item.locator);
  }
  return ds;
}

std::vector<ShapesScene> make_shapes_scenes(int num_scenes, const std::vector<std::string>& categories, int canvas,
                                            int min_objects, int max_objects, Rng& rng) {
  if (categories.empty()) throw ArgumentError("make_shapes_scenes: no categories");
  if (min_objects < 1 || max_objects < min_objects) throw ArgumentError("make_shapes_scenes: bad object count range");
  std::vector<ShapesScene> scenes;
  for (int s = 0; s < num_scenes; ++s) {
    ShapesScene scene;
    scene.id = numbered("scene", s);
    PseudoSample& ps = scene.sample;
    ps.image = Image(canvas, canvas);
    fill_background(ps.image, rng);
    ps.instance_map = LabelMap(canvas, canvas, 0);
    const int want = uniform_int(rng, min_objects, max_objects);
    std::vector<std::array<double, 3>> placed;
    for (int attempt = 0; attempt < 200 && static_cast<int>(placed.size()) < want; ++attempt) {
      const double r = uniform(rng, 0.12, 0.22) * canvas;
      const double cy = uniform(rng, r + 1, canvas - r - 1);
      const double cx = uniform(rng, r + 1, canvas - r - 1);
      const bool clear = std::all_of(placed.begin(), placed.end(), [&](const auto& p) {
        return std::hypot(p[0] - cy, p[1] - cx) > p[2] + r + 2.0;
      });
      if (!clear) continue;
      placed.push_back({cy, cx, r});
      const int cat = uniform_int(rng, 0, static_cast<int>(categories.size()) - 1);
      const auto& kind = categories[static_cast<std::size_t>(cat)];
      const BinaryMask m = rasterize_shape(kind, cy, cx, r, canvas, canvas);
      paint(ps.image, m, kind, rng);
      const int id = static_cast<int>(placed.size());
      for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i]) ps.instance_map[i] = id;
      }
      ps.instance_categories[id] = cat + 1;
    }
    compact_instances(ps);
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

}  // namespace zutis

#include "zutis/curation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>

#include "zutis/autograd.hpp"
#include "zutis/error.hpp"
#include "zutis/io.hpp"

namespace zutis {

// ---------------------------------------------------------------- index

void IndexDataset::validate() const {
  if (image_refs.empty()) throw DataError("index dataset is empty");
  if (embeddings.rows() != static_cast<Eigen::Index>(image_refs.size())) {
    throw DataError("index dataset: embedding rows differ from locator count");
  }
  for (Eigen::Index r = 0; r < embeddings.rows(); ++r) {
    if (std::abs(embeddings.row(r).norm() - 1.0f) > 1e-5f) {
      throw DataError("index dataset: embedding " + std::to_string(r) + " is not unit-norm");
    }
  }
}

IndexDataset IndexDataset::load(const std::filesystem::path& dir, int dim) {
  const auto emb_path = dir / "embeddings.f32";
  const auto loc_path = dir / "locators.txt";
  if (!std::filesystem::exists(emb_path)) throw IoError("missing embeddings file: " + emb_path.string());
  if (!std::filesystem::exists(loc_path)) throw IoError("missing locator list: " + loc_path.string());
  IndexDataset ds;
  std::ifstream loc(loc_path);
  for (std::string line; std::getline(loc, line);) {
    if (!line.empty()) ds.image_refs.push_back(line);
  }
  const auto bytes = std::filesystem::file_size(emb_path);
  const auto expected = ds.image_refs.size() * static_cast<std::size_t>(dim) * sizeof(float);
  if (bytes != expected) {
    throw DataError("embeddings file " + emb_path.string() + " has " + std::to_string(bytes) + " bytes, expected " +
                    std::to_string(expected));
  }
  ds.embeddings.resize(static_cast<Eigen::Index>(ds.image_refs.size()), dim);
  std::ifstream emb(emb_path, std::ios::binary);
  emb.read(reinterpret_cast<char*>(ds.embeddings.data()), static_cast<std::streamsize>(expected));
  if (!emb) throw IoError("failed reading " + emb_path.string());
  ds.validate();
  return ds;
}

void IndexDataset::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream emb(dir / "embeddings.f32", std::ios::binary);
  emb.write(reinterpret_cast<const char*>(embeddings.data()),
            static_cast<std::streamsize>(embeddings.size() * sizeof(float)));
  std::string list;
  for (const auto& r : image_refs) list += r + "\n";
  write_text(dir / "locators.txt", list);
}

Archive build_archive(const IndexDataset& index, const CategoryPrompt& prompt, int k) {
  if (k < 1) throw ArgumentError("build_archive: k must be >= 1");
  if (index.dim() != prompt.embedding.size()) {
    throw ArgumentError("build_archive: index dimension differs from prompt embedding");
  }
  const Eigen::VectorXf sims = index.embeddings * prompt.embedding;
  std::vector<int> order(static_cast<std::size_t>(index.size()));
  std::iota(order.begin(), order.end(), 0);
  const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&](int a, int b) { return sims(a) > sims(b) || (sims(a) == sims(b) && a < b); });
  Archive a;
  a.category_name = prompt.category_name;
  a.k = k;
  a.member_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take));
  for (int i : a.member_indices) a.similarities.push_back(sims(i));
  return a;
}

// ---------------------------------------------------------------- saliency

void ShapesOracleDetector::add(std::string locator, BinaryMask mask) { masks_[std::move(locator)] = std::move(mask); }

BinaryMask ShapesOracleDetector::detect(const Image& image, std::string_view locator) const {
  auto it = masks_.find(locator);
  if (it == masks_.end()) throw DetectionError("shapes oracle has no mask for '" + std::string(locator) + "'");
  if (it->second.height() != image.height() || it->second.width() != image.width()) {
    throw DetectionError("shapes oracle mask size differs from image for '" + std::string(locator) + "'");
  }
  return it->second;
}

BinaryMask ExternalMaskDetector::detect(const Image& image, std::string_view locator) const {
  const auto path = dir_ / (std::filesystem::path(std::string(locator)).stem().string() + ".png");
  if (!std::filesystem::exists(path)) throw DetectionError("no precomputed mask at " + path.string());
  BinaryMask m = read_png_mask(path);
  if (m.height() != image.height() || m.width() != image.width()) m = resize_nearest(m, image.height(), image.width());
  return m;
}

BinaryMask generate_pseudo_mask(const Image& image, const SaliencyDetector& detector, std::string_view locator) {
  if (image.empty()) throw ArgumentError("generate_pseudo_mask: empty image");
  BinaryMask m = detector.detect(image, locator);
  if (m.height() != image.height() || m.width() != image.width()) {
    throw DetectionError("detector returned a mask of the wrong size");
  }
  for (auto& v : m.storage()) v = v != 0;
  return m;
}

// ---------------------------------------------------------------- samples

void PseudoSample::validate() const {
  if (instance_map.height() != image.height() || instance_map.width() != image.width()) {
    throw DataError("pseudo sample: instance map size differs from image");
  }
  std::set<int> present;
  for (auto v : instance_map.values()) {
    if (v < 0) throw DataError("pseudo sample: negative instance id");
    if (v != 0) present.insert(v);
  }
  const int n = static_cast<int>(instance_categories.size());
  int expect = 1;
  for (const auto& [id, cat] : instance_categories) {
    if (id != expect++) throw DataError("pseudo sample: instance ids are not contiguous from 1");
    if (cat < 0) throw DataError("pseudo sample: negative category index");
  }
  if (static_cast<int>(present.size()) != n || (n > 0 && *present.rbegin() != n)) {
    throw DataError("pseudo sample: instance map ids do not match the category table");
  }
}

LabelMap PseudoSample::semantic_map() const {
  LabelMap out(instance_map.height(), instance_map.width(), 0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const int id = instance_map[i];
    if (id != 0) out[i] = instance_categories.at(id);
  }
  return out;
}

BinaryMask PseudoSample::instance_mask(int id) const {
  BinaryMask m(instance_map.height(), instance_map.width(), 0);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = instance_map[i] == id;
  return m;
}

void compact_instances(PseudoSample& sample) {
  std::map<int, long> counts;
  for (auto v : sample.instance_map.values()) {
    if (v != 0) ++counts[v];
  }
  std::map<int, int> remap;
  std::map<int, int> categories;
  int next = 1;
  for (const auto& [id, cat] : sample.instance_categories) {
    if (counts.count(id)) {
      remap[id] = next;
      categories[next] = cat;
      ++next;
    }
  }
  for (auto& v : sample.instance_map.storage()) {
    if (v == 0) continue;
    auto it = remap.find(v);
    v = it == remap.end() ? 0 : it->second;
  }
  sample.instance_categories = std::move(categories);
}

namespace {

struct Bbox {
  int y0, x0, y1, x1;  // inclusive
  long area;
};

Bbox mask_bbox(const BinaryMask& m) {
  Bbox b{m.height(), m.width(), -1, -1, 0};
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      if (!m(y, x)) continue;
      b.y0 = std::min(b.y0, y);
      b.x0 = std::min(b.x0, x);
      b.y1 = std::max(b.y1, y);
      b.x1 = std::max(b.x1, x);
      ++b.area;
    }
  }
  return b;
}

long on_canvas(const BinaryMask& m, int dy, int dx, int h, int w) {
  long n = 0;
  for (int y = 0; y < m.height(); ++y) {
    const int ty = y + dy;
    if (ty < 0 || ty >= h) continue;
    for (int x = 0; x < m.width(); ++x) {
      const int tx = x + dx;
      n += m(y, x) && tx >= 0 && tx < w;
    }
  }
  return n;
}

std::pair<int, int> choose_offset(const BinaryMask& m, int h, int w, Rng& rng) {
  const Bbox b = mask_bbox(m);
  if (b.area == 0) return {0, 0};
  for (int attempt = 0; attempt < 64; ++attempt) {
    const int dy = uniform_int(rng, -b.y1, h - 1 - b.y0);
    const int dx = uniform_int(rng, -b.x1, w - 1 - b.x0);
    if (2 * on_canvas(m, dy, dx, h, w) >= b.area) return {dy, dx};
  }
  // Centre the box.
  return {(h - (b.y1 - b.y0 + 1)) / 2 - b.y0, (w - (b.x1 - b.x0 + 1)) / 2 - b.x0};
}

}  // namespace

PseudoSample compose_copy_paste(std::span<const PasteSource> sources, int canvas_h, int canvas_w, Rng& rng) {
  if (sources.empty()) throw ArgumentError("compose_copy_paste: no sources");
  if (sources.size() > static_cast<std::size_t>(kMaxPasteSources)) {
    throw ArgumentError("compose_copy_paste: more than 10 sources");
  }
  if (canvas_h < 1 || canvas_w < 1) throw ArgumentError("compose_copy_paste: empty canvas");
  for (const auto& s : sources) {
    if (s.mask.height() != s.image.height() || s.mask.width() != s.image.width()) {
      throw ArgumentError("compose_copy_paste: mask and image sizes differ");
    }
    for (auto v : s.mask.values()) {
      if (v > 1) throw ArgumentError("compose_copy_paste: mask is not binary");
    }
  }

  PseudoSample out;
  out.image = Image(canvas_h, canvas_w, 0);
  out.instance_map = LabelMap(canvas_h, canvas_w, 0);
  const auto& first = sources.front();
  for (int y = 0; y < std::min(canvas_h, first.image.height()); ++y) {
    for (int x = 0; x < std::min(canvas_w, first.image.width()); ++x) {
      for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = first.image.at(y, x, c);
    }
  }

  for (std::size_t i = 0; i < sources.size(); ++i) {
    const auto& s = sources[i];
    const int id = static_cast<int>(i) + 1;
    int dy = 0, dx = 0;
    if (s.offset) {
      dy = (*s.offset)[0];
      dx = (*s.offset)[1];
    } else if (i > 0) {
      std::tie(dy, dx) = choose_offset(s.mask, canvas_h, canvas_w, rng);
    }
    for (int y = 0; y < s.mask.height(); ++y) {
      const int ty = y + dy;
      if (ty < 0 || ty >= canvas_h) continue;
      for (int x = 0; x < s.mask.width(); ++x) {
        const int tx = x + dx;
        if (tx < 0 || tx >= canvas_w || !s.mask(y, x)) continue;
        out.instance_map(ty, tx) = id;
        for (int c = 0; c < 3; ++c) out.image.at(ty, tx, c) = s.image.at(y, x, c);
      }
    }
    out.instance_categories[id] = s.category;
    if (!s.provenance.empty()) out.provenance.push_back(s.provenance);
  }
  compact_instances(out);
  return out;
}

// ---------------------------------------------------------------- augmentation

AugmentConfig AugmentConfig::identity(int size) {
  AugmentConfig c;
  c.flip_prob = 0.0;
  c.scale_min = c.scale_max = 1.0;
  c.crop_size = size;
  c.jitter_prob = 0.0;
  c.gray_prob = 0.0;
  c.blur_prob = 0.0;
  return c;
}

PseudoSample hflip(const PseudoSample& s) {
  PseudoSample out = s;
  const int h = s.image.height(), w = s.image.width();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = s.image.at(y, w - 1 - x, c);
      out.instance_map(y, x) = s.instance_map(y, w - 1 - x);
    }
  }
  return out;
}

Image resize_bilinear(const Image& image, int out_h, int out_w) {
  if (image.empty()) throw ArgumentError("resize_bilinear: empty image");
  const auto ty = ag::bilinear_taps(image.height(), out_h);
  const auto tx = ag::bilinear_taps(image.width(), out_w);
  Image out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const float fy = ty.frac[y];
    for (int x = 0; x < out_w; ++x) {
      const float fx = tx.frac[x];
      for (int c = 0; c < 3; ++c) {
        const float v = (1 - fy) * ((1 - fx) * image.at(ty.lo[y], tx.lo[x], c) + fx * image.at(ty.lo[y], tx.hi[x], c)) +
                        fy * ((1 - fx) * image.at(ty.hi[y], tx.lo[x], c) + fx * image.at(ty.hi[y], tx.hi[x], c));
        out.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

namespace {

template <typename T>
Grid<T> nearest_impl(const Grid<T>& map, int out_h, int out_w) {
  Grid<T> out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const int sy = std::min(map.height() - 1, static_cast<int>((y + 0.5) * map.height() / out_h));
    for (int x = 0; x < out_w; ++x) {
      const int sx = std::min(map.width() - 1, static_cast<int>((x + 0.5) * map.width() / out_w));
      out(y, x) = map(sy, sx);
    }
  }
  return out;
}

std::array<float, 3> rgb_to_hsv(float r, float g, float b) {
  const float mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const float d = mx - mn;
  float h = 0.0f;
  if (d > 0) {
    if (mx == r) {
      h = std::fmod((g - b) / d, 6.0f);
    } else if (mx == g) {
      h = (b - r) / d + 2.0f;
    } else {
      h = (r - g) / d + 4.0f;
    }
    h /= 6.0f;
    if (h < 0) h += 1.0f;
  }
  return {h, mx > 0 ? d / mx : 0.0f, mx};
}

std::array<float, 3> hsv_to_rgb(float h, float s, float v) {
  h = h - std::floor(h);
  const float c = v * s;
  const float hp = h * 6.0f;
  const float x = c * (1 - std::abs(std::fmod(hp, 2.0f) - 1));
  float r = 0, g = 0, b = 0;
  if (hp < 1) {
    r = c, g = x;
  } else if (hp < 2) {
    r = x, g = c;
  } else if (hp < 3) {
    g = c, b = x;
  } else if (hp < 4) {
    g = x, b = c;
  } else if (hp < 5) {
    r = x, b = c;
  } else {
    r = c, b = x;
  }
  const float m = v - c;
  return {r + m, g + m, b + m};
}

std::uint8_t to_byte(float v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0f), 0L, 255L)); }

Image color_jitter(const Image& img, const AugmentConfig& cfg, Rng& rng) {
  const float bf = static_cast<float>(uniform(rng, 1 - cfg.brightness, 1 + cfg.brightness));
  const float cf = static_cast<float>(uniform(rng, 1 - cfg.contrast, 1 + cfg.contrast));
  const float sf = static_cast<float>(uniform(rng, 1 - cfg.saturation, 1 + cfg.saturation));
  const float hf = static_cast<float>(uniform(rng, -cfg.hue, cfg.hue));
  const int h = img.height(), w = img.width();
  std::vector<float> px(static_cast<std::size_t>(h) * w * 3);
  double gray_sum = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float* p = &px[(static_cast<std::size_t>(y) * w + x) * 3];
      for (int c = 0; c < 3; ++c) p[c] = std::clamp(img.at(y, x, c) / 255.0f * bf, 0.0f, 1.0f);
      gray_sum += 0.299f * p[0] + 0.587f * p[1] + 0.114f * p[2];
    }
  }
  const float mean = static_cast<float>(gray_sum / (static_cast<double>(h) * w));
  Image out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float* p = &px[(static_cast<std::size_t>(y) * w + x) * 3];
      for (int c = 0; c < 3; ++c) p[c] = std::clamp((p[c] - mean) * cf + mean, 0.0f, 1.0f);
      const float g = 0.299f * p[0] + 0.587f * p[1] + 0.114f * p[2];
      for (int c = 0; c < 3; ++c) p[c] = std::clamp((p[c] - g) * sf + g, 0.0f, 1.0f);
      auto hsv = rgb_to_hsv(p[0], p[1], p[2]);
      const auto rgb = hsv_to_rgb(hsv[0] + hf, hsv[1], hsv[2]);
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = to_byte(rgb[c]);
    }
  }
  return out;
}

}  // namespace

LabelMap resize_nearest(const LabelMap& map, int out_h, int out_w) { return nearest_impl(map, out_h, out_w); }
BinaryMask resize_nearest(const BinaryMask& map, int out_h, int out_w) { return nearest_impl(map, out_h, out_w); }

Image to_grayscale(const Image& image) {
  Image out(image.height(), image.width());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const float g = (0.299f * image.at(y, x, 0) + 0.587f * image.at(y, x, 1) + 0.114f * image.at(y, x, 2)) / 255.0f;
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = to_byte(g);
    }
  }
  return out;
}

Image gaussian_blur(const Image& image, int kernel, double sigma) {
  if (kernel < 1 || kernel % 2 == 0) throw ArgumentError("gaussian_blur: kernel must be odd and positive");
  const int r = kernel / 2;
  std::vector<float> k(static_cast<std::size_t>(kernel));
  float sum = 0;
  for (int i = -r; i <= r; ++i) {
    k[static_cast<std::size_t>(i + r)] = static_cast<float>(std::exp(-0.5 * i * i / (sigma * sigma)));
    sum += k[static_cast<std::size_t>(i + r)];
  }
  for (auto& v : k) v /= sum;
  const int h = image.height(), w = image.width();
  std::vector<float> tmp(static_cast<std::size_t>(h) * w * 3);
  auto clampi = [](int v, int hi) { return std::clamp(v, 0, hi - 1); };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        float acc = 0;
        for (int i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * image.at(y, clampi(x + i, w), c);
        tmp[(static_cast<std::size_t>(y) * w + x) * 3 + c] = acc;
      }
    }
  }
  Image out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        float acc = 0;
        for (int i = -r; i <= r; ++i) {
          acc += k[static_cast<std::size_t>(i + r)] * tmp[(static_cast<std::size_t>(clampi(y + i, h)) * w + x) * 3 + c];
        }
        out.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(acc), 0L, 255L));
      }
    }
  }
  return out;
}

AugmentResult augment(const PseudoSample& sample, const AugmentConfig& cfg, Rng& rng) {
  sample.validate();
  if (cfg.crop_size < 1) throw ArgumentError("augment: crop size must be positive");
  if (cfg.scale_min <= 0 || cfg.scale_max < cfg.scale_min) throw ArgumentError("augment: bad rescale range");

  AugmentResult res;
  GeometricDraw& g = res.geometry;
  g.flipped = bernoulli(rng, cfg.flip_prob);
  PseudoSample cur = g.flipped ? hflip(sample) : sample;

  g.scale = cfg.scale_min == cfg.scale_max ? cfg.scale_min : uniform(rng, cfg.scale_min, cfg.scale_max);
  g.scaled_h = std::max(1, static_cast<int>(std::lround(cur.image.height() * g.scale)));
  g.scaled_w = std::max(1, static_cast<int>(std::lround(cur.image.width() * g.scale)));
  if (g.scaled_h != cur.image.height() || g.scaled_w != cur.image.width()) {
    cur.image = resize_bilinear(cur.image, g.scaled_h, g.scaled_w);
    cur.instance_map = resize_nearest(cur.instance_map, g.scaled_h, g.scaled_w);
  }

  // Pad-then-crop: offsets may be negative when the rescaled image is smaller.
  g.out_h = g.out_w = cfg.crop_size;
  auto pick = [&](int extent) {
    const int slack = extent - cfg.crop_size;
    return uniform_int(rng, std::min(0, slack), std::max(0, slack));
  };
  g.offset_y = pick(g.scaled_h);
  g.offset_x = pick(g.scaled_w);
  PseudoSample out;
  out.image = Image(g.out_h, g.out_w, 0);
  out.instance_map = LabelMap(g.out_h, g.out_w, 0);
  for (int y = 0; y < g.out_h; ++y) {
    const int sy = y + g.offset_y;
    if (sy < 0 || sy >= g.scaled_h) continue;
    for (int x = 0; x < g.out_w; ++x) {
      const int sx = x + g.offset_x;
      if (sx < 0 || sx >= g.scaled_w) continue;
      for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = cur.image.at(sy, sx, c);
      out.instance_map(y, x) = cur.instance_map(sy, sx);
    }
  }
  out.instance_categories = sample.instance_categories;
  out.provenance = sample.provenance;

  if (bernoulli(rng, cfg.jitter_prob)) out.image = color_jitter(out.image, cfg, rng);
  if (bernoulli(rng, cfg.gray_prob)) out.image = to_grayscale(out.image);
  if (bernoulli(rng, cfg.blur_prob)) {
    int k = static_cast<int>(std::lround(cfg.blur_kernel_frac * std::min(g.out_h, g.out_w)));
    k = std::max(3, k | 1);
    out.image = gaussian_blur(out.image, k, uniform(rng, 0.1, 2.0));
  }

  compact_instances(out);
  res.sample = std::move(out);
  return res;
}

// ---------------------------------------------------------------- sampling

namespace {

PasteSource augment_source(const PasteSource& src, const AugmentConfig& aug, Rng& rng) {
  PseudoSample s;
  s.image = src.image;
  s.instance_map = LabelMap(src.mask.height(), src.mask.width(), 0);
  for (std::size_t i = 0; i < s.instance_map.size(); ++i) s.instance_map[i] = src.mask[i] ? 1 : 0;
  if (count_foreground(src.mask) > 0) s.instance_categories[1] = src.category;
  AugmentResult r = augment(s, aug, rng);
  PasteSource out;
  out.image = std::move(r.sample.image);
  out.mask = BinaryMask(r.sample.instance_map.height(), r.sample.instance_map.width(), 0);
  for (std::size_t i = 0; i < out.mask.size(); ++i) out.mask[i] = r.sample.instance_map[i] == 1;
  out.category = src.category;
  out.provenance = src.provenance;
  return out;
}

}  // namespace

CopyPasteDraw sample_copy_paste_batch(std::span<const ArchivePool> pools, const CopyPasteConfig& cp,
                                      const AugmentConfig& aug, Rng& rng) {
  if (pools.empty()) throw ArgumentError("sample_copy_paste_batch: no archives");
  std::vector<const ArchivePool*> valid;
  for (const auto& p : pools) {
    if (p.members.empty()) {
      std::clog << "warning: archive '" << p.name << "' has no usable pseudo-masks; skipped\n";
    } else {
      valid.push_back(&p);
    }
  }
  if (valid.empty()) throw ArgumentError("sample_copy_paste_batch: no archive has usable pseudo-masks");
  if (cp.max_sources < 1 || cp.max_sources > kMaxPasteSources) {
    throw ArgumentError("sample_copy_paste_batch: max_sources must be in [1, 10]");
  }

  auto pick_pool = [&]() { return valid[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(valid.size()) - 1))]; };
  auto pick_member = [&](const ArchivePool& p) -> const PasteSource& {
    return p.members[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(p.members.size()) - 1))];
  };

  CopyPasteDraw draw;
  std::vector<PasteSource> chosen;
  if (!cp.enabled) {
    draw.requested_sources = 1;
    chosen.push_back(augment_source(pick_member(*pick_pool()), aug, rng));
  } else {
    draw.requested_sources = uniform_int(rng, 1, cp.max_sources);
    draw.same_archive = bernoulli(rng, cp.same_archive_prob);
    if (draw.same_archive) {
      const ArchivePool& pool = *pick_pool();
      std::vector<int> idx(pool.members.size());
      std::iota(idx.begin(), idx.end(), 0);
      const int n = std::min<int>(draw.requested_sources, static_cast<int>(idx.size()));
      for (int i = 0; i < n; ++i) {
        const int j = uniform_int(rng, i, static_cast<int>(idx.size()) - 1);
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
        chosen.push_back(augment_source(pool.members[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])], aug, rng));
      }
    } else {
      for (int i = 0; i < draw.requested_sources; ++i) chosen.push_back(augment_source(pick_member(*pick_pool()), aug, rng));
    }
  }
  draw.sample = compose_copy_paste(chosen, aug.crop_size, aug.crop_size, rng);
  return draw;
}

}  // namespace zutis

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "zutis/curation.hpp"
#include "zutis/error.hpp"
#include "zutis/io.hpp"
#include "zutis/shapes.hpp"

using namespace zutis;
namespace fs = std::filesystem;

namespace {

// Returns fixed vectors per text, for exact prompt arithmetic.
class TableEncoder final : public TextEncoder {
 public:
  explicit TableEncoder(std::map<std::string, Eigen::VectorXf> table) : table_(std::move(table)) {}
  Eigen::VectorXf encode(std::string_view text) const override { return table_.at(std::string(text)); }
  int dim() const override { return static_cast<int>(table_.begin()->second.size()); }

 private:
  std::map<std::string, Eigen::VectorXf> table_;
};

Eigen::VectorXf unit(int dim, int axis) {
  Eigen::VectorXf v = Eigen::VectorXf::Zero(dim);
  v(axis) = 1.0f;
  return v;
}

IndexDataset index_with_similarities(const std::vector<float>& sims) {
  // Rows (s, sqrt(1 - s^2)) against the prompt (1, 0) have dot product s.
  IndexDataset idx;
  idx.embeddings.resize(static_cast<Eigen::Index>(sims.size()), 2);
  for (std::size_t i = 0; i < sims.size(); ++i) {
    idx.embeddings(static_cast<Eigen::Index>(i), 0) = sims[i];
    idx.embeddings(static_cast<Eigen::Index>(i), 1) = std::sqrt(1.0f - sims[i] * sims[i]);
    idx.image_refs.push_back("img" + std::to_string(i));
  }
  return idx;
}

CategoryPrompt axis_prompt() {
  CategoryPrompt p;
  p.category_name = "x";
  p.templates = {"{}"};
  p.embedding = unit(2, 0);
  return p;
}

BinaryMask rect(int h, int w, int y0, int x0, int y1, int x1) {
  BinaryMask m(h, w);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m(y, x) = 1;
  return m;
}

PasteSource source(const BinaryMask& m, int category, std::array<int, 2> offset = {0, 0}, std::uint8_t shade = 100) {
  PasteSource s;
  s.image = Image(m.height(), m.width(), shade);
  s.mask = m;
  s.category = category;
  s.provenance = "p" + std::to_string(category);
  s.offset = offset;
  return s;
}

PseudoSample random_sample(Rng& rng, int h, int w, int n) {
  PseudoSample s;
  s.image = Image(h, w);
  for (auto& b : s.image.bytes()) b = static_cast<std::uint8_t>(uniform_int(rng, 0, 255));
  s.instance_map = LabelMap(h, w);
  for (int i = 1; i <= n; ++i) {
    const int y0 = uniform_int(rng, 0, h - 4), x0 = uniform_int(rng, 0, w - 4);
    const int y1 = uniform_int(rng, y0 + 2, h), x1 = uniform_int(rng, x0 + 2, w);
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) s.instance_map(y, x) = i;
    s.instance_categories[i] = uniform_int(rng, 1, 3);
  }
  compact_instances(s);
  return s;
}

}  // namespace

TEST_SUITE("curation") {
  TEST_CASE("prompt averaging") {
    const TableEncoder enc({{"a x", unit(3, 0)}, {"b x", unit(3, 1)}, {"neg x", -unit(3, 0)}});
    const auto one = encode_category_prompts("x", {"a {}"}, enc);
    CHECK(one.embedding.isApprox(unit(3, 0)));
    const auto two = encode_category_prompts("x", {"a {}", "b {}"}, enc);
    CHECK(two.embedding(0) == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-6));
    CHECK(two.embedding(1) == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-6));
    CHECK(two.embedding(2) == 0.0f);
    CHECK_THROWS_AS(encode_category_prompts("x", {"a {}", "neg {}"}, enc), DegeneratePromptError);
    CHECK_THROWS_AS(encode_category_prompts("x", {}, enc), ArgumentError);
  }

  TEST_CASE("prompt averaging ignores template order") {
    const HashTextEncoder enc(32);
    auto t = default_prompt_templates();
    REQUIRE(t.size() == 85);
    const auto a = encode_category_prompts("circle", t, enc);
    std::reverse(t.begin(), t.end());
    const auto b = encode_category_prompts("circle", t, enc);
    CHECK((a.embedding - b.embedding).norm() <= 1e-6);
    CHECK(a.embedding.norm() == doctest::Approx(1.0).epsilon(1e-5));
  }

  TEST_CASE("retrieval ordering") {
    const auto idx = index_with_similarities({0.9f, 0.1f, 0.5f});
    CHECK(build_archive(idx, axis_prompt(), 2).member_indices == std::vector<int>{0, 2});
    CHECK(build_archive(idx, axis_prompt(), 3).member_indices == std::vector<int>{0, 2, 1});
    CHECK(build_archive(idx, axis_prompt(), 7).member_indices.size() == 3);
    const auto tie = index_with_similarities({0.5f, 0.5f, 0.1f});
    CHECK(build_archive(tie, axis_prompt(), 1).member_indices == std::vector<int>{0});
    CHECK_THROWS_AS(build_archive(idx, axis_prompt(), 0), ArgumentError);
  }

  TEST_CASE("retrieval matches a stable brute-force sort") {
    Rng rng = make_rng(3);
    for (int trial = 0; trial < 30; ++trial) {
      std::vector<float> sims;
      const int n = uniform_int(rng, 1, 40);
      for (int i = 0; i < n; ++i) sims.push_back(static_cast<float>(uniform_int(rng, 0, 6)) / 8.0f);
      const auto idx = index_with_similarities(sims);
      const int k = uniform_int(rng, 1, 45);
      const auto a = build_archive(idx, axis_prompt(), k);
      std::vector<int> order(static_cast<std::size_t>(n));
      std::iota(order.begin(), order.end(), 0);
      const Eigen::VectorXf dots = idx.embeddings * axis_prompt().embedding;
      std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return dots(x) > dots(y); });
      order.resize(static_cast<std::size_t>(std::min(k, n)));
      CHECK(a.member_indices == order);
      for (std::size_t i = 1; i < a.similarities.size(); ++i) CHECK(a.similarities[i - 1] >= a.similarities[i]);
    }
  }

  TEST_CASE("index dataset validation and storage") {
    auto idx = index_with_similarities({0.3f, 0.8f});
    CHECK_NOTHROW(idx.validate());
    const fs::path dir = fs::temp_directory_path() / "zutis_test_index";
    idx.save(dir);
    const auto back = IndexDataset::load(dir, 2);
    CHECK(back.embeddings == idx.embeddings);
    CHECK(back.image_refs == idx.image_refs);
    CHECK_THROWS_AS(IndexDataset::load(dir, 3), DataError);
    CHECK_THROWS_AS(IndexDataset::load(dir / "missing", 2), IoError);
    idx.embeddings(0, 0) = 2.0f;
    CHECK_THROWS_AS(idx.validate(), DataError);
    fs::remove_all(dir);
  }

  TEST_CASE("shapes oracle returns the generator mask") {
    Rng rng = make_rng(4);
    const auto corpus = make_shapes_dataset(6, default_shape_categories(), 48, rng, 2);
    ShapesOracleDetector det;
    for (const auto& it : corpus.items) det.add(it.locator, it.mask);
    for (const auto& it : corpus.items) {
      const BinaryMask m = generate_pseudo_mask(it.image, det, it.locator);
      CHECK(m == it.mask);
      CHECK(count_foreground(m) == (it.category.empty() ? 0 : count_foreground(it.mask)));
    }
    CHECK_THROWS_AS(generate_pseudo_mask(corpus.items[0].image, det, "unknown"), DetectionError);
  }

  TEST_CASE("external masks come back at the image size") {
    const fs::path dir = fs::temp_directory_path() / "zutis_test_masks";
    write_png_mask(dir / "pic.png", rect(10, 10, 0, 0, 5, 5));
    const ExternalMaskDetector det(dir);
    const BinaryMask m = generate_pseudo_mask(Image(20, 30), det, "some/where/pic.jpg");
    CHECK(m.height() == 20);
    CHECK(m.width() == 30);
    CHECK(m(0, 0) == 1);
    CHECK(m(19, 29) == 0);
    CHECK_THROWS_AS(generate_pseudo_mask(Image(4, 4), det, "absent.png"), DetectionError);
    fs::remove_all(dir);
  }

  TEST_CASE("copy-paste composition") {
    Rng rng = make_rng(5);
    const BinaryMask a = rect(8, 8, 0, 0, 3, 3), b = rect(8, 8, 5, 5, 8, 8);
    {
      const std::vector<PasteSource> one{source(a, 2)};
      const auto s = compose_copy_paste(one, 8, 8, rng);
      CHECK(s.instance_mask(1) == a);
      CHECK(s.num_instances() == 1);
      CHECK(s.instance_categories.at(1) == 2);
    }
    {
      const std::vector<PasteSource> two{source(a, 1), source(b, 3)};
      const auto s = compose_copy_paste(two, 8, 8, rng);
      CHECK(s.instance_mask(1) == a);
      CHECK(s.instance_mask(2) == b);
      CHECK(s.instance_categories == std::map<int, int>{{1, 1}, {2, 3}});
    }
    {
      const std::vector<PasteSource> cover{source(a, 1), source(BinaryMask(8, 8, 1), 3, {0, 0}, 200)};
      const auto s = compose_copy_paste(cover, 8, 8, rng);
      CHECK(s.num_instances() == 1);
      CHECK(s.instance_categories.at(1) == 3);
      CHECK(s.image.at(1, 1, 0) == 200);
    }
    CHECK_THROWS_AS(compose_copy_paste(std::vector<PasteSource>{}, 8, 8, rng), ArgumentError);
  }

  TEST_CASE("later pastes win overlapping pixels") {
    Rng rng = make_rng(6);
    for (int trial = 0; trial < 40; ++trial) {
      std::vector<PasteSource> srcs;
      const int n = uniform_int(rng, 2, 5);
      for (int i = 0; i < n; ++i) {
        const int y0 = uniform_int(rng, 0, 10), x0 = uniform_int(rng, 0, 10);
        srcs.push_back(source(rect(16, 16, y0, x0, y0 + 5, x0 + 5), i + 1,
                              {uniform_int(rng, -3, 3), uniform_int(rng, -3, 3)}, static_cast<std::uint8_t>(i * 40)));
      }
      srcs[0].offset = std::array<int, 2>{0, 0};
      const auto s = compose_copy_paste(srcs, 16, 16, rng);
      CHECK_NOTHROW(s.validate());
      // Pixel-level simulation: the last source covering a pixel owns it.
      for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 16; ++x) {
          int owner = 0;
          for (int i = 0; i < n; ++i) {
            const auto [dy, dx] = *srcs[static_cast<std::size_t>(i)].offset;
            const int sy = y - dy, sx = x - dx;
            if (sy >= 0 && sy < 16 && sx >= 0 && sx < 16 && srcs[static_cast<std::size_t>(i)].mask(sy, sx)) owner = i + 1;
          }
          const int id = s.instance_map(y, x);
          if (owner == 0) {
            CHECK(id == 0);
          } else {
            REQUIRE(id > 0);
            CHECK(s.instance_categories.at(id) == owner);  // categories were set to the paste index
          }
        }
      }
    }
  }

  TEST_CASE("random paste offsets keep at least half of each mask") {
    Rng rng = make_rng(7);
    for (int trial = 0; trial < 100; ++trial) {
      PasteSource canvas = source(BinaryMask(32, 32), 1);
      canvas.mask(0, 0) = 1;
      PasteSource obj = source(rect(32, 32, 10, 10, 20, 20), 2);
      obj.offset.reset();
      const std::vector<PasteSource> srcs{canvas, obj};
      const auto s = compose_copy_paste(srcs, 32, 32, rng);
      long kept = 0;
      for (const auto& [id, cat] : s.instance_categories)
        if (cat == 2) kept = count_foreground(s.instance_mask(id));
      CHECK(kept >= 50);
    }
  }

  TEST_CASE("partition invariant after compaction") {
    Rng rng = make_rng(8);
    for (int trial = 0; trial < 30; ++trial) {
      PseudoSample s = random_sample(rng, 12, 12, uniform_int(rng, 1, 6));
      CHECK_NOTHROW(s.validate());
      LabelMap cover(12, 12);
      for (int id = 0; id <= s.num_instances(); ++id) {
        const BinaryMask m = id == 0 ? BinaryMask(12, 12) : s.instance_mask(id);
        for (std::size_t i = 0; i < m.size(); ++i) cover[i] += m[i];
      }
      for (std::size_t i = 0; i < cover.size(); ++i) CHECK(cover[i] == (s.instance_map[i] > 0 ? 1 : 0));
    }
  }

  TEST_CASE("validate rejects gaps and unlabelled ids") {
    PseudoSample s;
    s.image = Image(2, 2);
    s.instance_map = LabelMap(2, 2);
    s.instance_map(0, 0) = 2;
    s.instance_categories[2] = 1;
    CHECK_THROWS_AS(s.validate(), DataError);
    s.instance_map(0, 0) = 1;
    CHECK_THROWS_AS(s.validate(), DataError);
  }

  TEST_CASE("horizontal flip is an involution") {
    Rng rng = make_rng(9);
    const PseudoSample s = random_sample(rng, 9, 13, 3);
    CHECK(hflip(hflip(s)) == s);
    AugmentConfig cfg = AugmentConfig::identity(0);
    cfg.flip_prob = 1.0;
    cfg.crop_size = 13;
    PseudoSample sq = random_sample(rng, 13, 13, 3);
    const auto once = augment(sq, cfg, rng).sample;
    const auto twice = augment(once, cfg, rng).sample;
    CHECK(twice.image == sq.image);
    CHECK(twice.instance_map == sq.instance_map);
  }

  TEST_CASE("augmented labels follow the image geometry exactly") {
    Rng rng = make_rng(10);
    AugmentConfig cfg;
    cfg.crop_size = 24;
    cfg.scale_min = 0.3;
    cfg.scale_max = 1.6;
    cfg.jitter_prob = cfg.gray_prob = cfg.blur_prob = 0.0;
    for (int trial = 0; trial < 40; ++trial) {
      const PseudoSample s = random_sample(rng, 30, 20, 4);
      const auto r = augment(s, cfg, rng);
      const auto& g = r.geometry;
      CHECK(r.sample.image.height() == 24);
      CHECK(r.sample.image.width() == 24);
      // Oracle: flip, nearest-resize, then shift with zero padding.
      const PseudoSample f = g.flipped ? hflip(s) : s;
      const LabelMap scaled = resize_nearest(f.instance_map, g.scaled_h, g.scaled_w);
      const Image scaled_img = g.scaled_h == 30 && g.scaled_w == 20 ? f.image : resize_bilinear(f.image, g.scaled_h, g.scaled_w);
      std::map<int, int> id_map;  // oracle id -> output id
      for (int y = 0; y < 24; ++y) {
        for (int x = 0; x < 24; ++x) {
          const int sy = y + g.offset_y, sx = x + g.offset_x;
          const bool in = sy >= 0 && sy < g.scaled_h && sx >= 0 && sx < g.scaled_w;
          const int expect = in ? scaled(sy, sx) : 0;
          const int got = r.sample.instance_map(y, x);
          CHECK((expect == 0) == (got == 0));
          if (expect != 0) {
            const auto [it, fresh] = id_map.emplace(expect, got);
            CHECK(it->second == got);
            CHECK(r.sample.instance_categories.at(got) == s.instance_categories.at(expect));
          }
          for (int c = 0; c < 3; ++c) CHECK(r.sample.image.at(y, x, c) == (in ? scaled_img.at(sy, sx, c) : 0));
        }
      }
      CHECK(static_cast<int>(id_map.size()) == r.sample.num_instances());
    }
  }

  TEST_CASE("default training crop is 384") {
    Rng rng = make_rng(11);
    const AugmentConfig cfg;
    CHECK(cfg.crop_size == 384);
    const auto r = augment(random_sample(rng, 40, 50, 2), cfg, rng);
    CHECK(r.sample.image.height() == 384);
    CHECK(r.sample.image.width() == 384);
    CHECK(r.sample.instance_map.height() == 384);
  }

  TEST_CASE("photometric transforms leave labels alone") {
    Rng rng = make_rng(12);
    AugmentConfig cfg = AugmentConfig::identity(16);
    cfg.jitter_prob = cfg.gray_prob = cfg.blur_prob = 1.0;
    const PseudoSample s = random_sample(rng, 16, 16, 3);
    const auto r = augment(s, cfg, rng);
    CHECK(r.sample.instance_map == s.instance_map);
    const Image g = to_grayscale(s.image);
    for (int y = 0; y < 16; ++y) CHECK((g.at(y, 3, 0) == g.at(y, 3, 1) && g.at(y, 3, 1) == g.at(y, 3, 2)));
  }

  TEST_CASE("copy-paste batches") {
    Rng rng = make_rng(13);
    std::vector<ArchivePool> pools;
    for (int c = 1; c <= 10; ++c) {
      ArchivePool p;
      p.name = "c" + std::to_string(c);
      p.category = c;
      for (int m = 0; m < 12; ++m) p.members.push_back(source(rect(12, 12, 2, 2, 6 + m % 4, 8), c));
      pools.push_back(std::move(p));
    }
    const AugmentConfig aug = AugmentConfig::identity(12);
    CopyPasteConfig cp;

    cp.same_archive_prob = 1.0;
    for (int i = 0; i < 50; ++i) {
      const auto d = sample_copy_paste_batch(pools, cp, aug, rng);
      std::set<int> cats;
      for (const auto& [id, cat] : d.sample.instance_categories) cats.insert(cat);
      CHECK(cats.size() == 1);
      CHECK(d.requested_sources >= 1);
      CHECK(d.requested_sources <= 10);
    }

    cp.same_archive_prob = 0.0;
    std::set<int> seen;
    int mixed = 0;
    for (int i = 0; i < 200; ++i) {
      const auto d = sample_copy_paste_batch(pools, cp, aug, rng);
      CHECK_FALSE(d.same_archive);
      std::set<int> cats;
      for (const auto& [id, cat] : d.sample.instance_categories) cats.insert(cat);
      mixed += cats.size() > 1;
      seen.insert(cats.begin(), cats.end());
    }
    CHECK(seen.size() == 10);
    CHECK(mixed > 50);

    cp.same_archive_prob = 0.5;
    int same = 0;
    const int draws = 10000;
    std::vector<int> counts(11);
    for (int i = 0; i < draws; ++i) {
      Rng r = make_rng(99, static_cast<std::uint64_t>(i));
      const auto d = sample_copy_paste_batch(std::span(pools).first(2), cp, AugmentConfig::identity(12), r);
      same += d.same_archive;
      ++counts[static_cast<std::size_t>(d.requested_sources)];
    }
    CHECK(std::abs(same / static_cast<double>(draws) - 0.5) <= 0.02);
    for (int k = 1; k <= 10; ++k) CHECK(std::abs(counts[static_cast<std::size_t>(k)] / static_cast<double>(draws) - 0.1) <= 0.02);
  }

  TEST_CASE("empty archives are skipped") {
    Rng rng = make_rng(14);
    std::vector<ArchivePool> pools(2);
    pools[0].name = "empty";
    pools[0].category = 1;
    pools[1].name = "full";
    pools[1].category = 2;
    pools[1].members.push_back(source(rect(8, 8, 1, 1, 4, 4), 2));
    const auto d = sample_copy_paste_batch(pools, CopyPasteConfig{}, AugmentConfig::identity(8), rng);
    for (const auto& [id, cat] : d.sample.instance_categories) CHECK(cat == 2);
    pools.pop_back();
    CHECK_THROWS_AS(sample_copy_paste_batch(pools, CopyPasteConfig{}, AugmentConfig::identity(8), rng), ArgumentError);
  }

  TEST_CASE("disabled copy-paste yields single sources") {
    Rng rng = make_rng(15);
    std::vector<ArchivePool> pools(1);
    pools[0].category = 1;
    for (int m = 0; m < 5; ++m) pools[0].members.push_back(source(rect(8, 8, 1, 1, 4, 4), 1));
    CopyPasteConfig cp;
    cp.enabled = false;
    for (int i = 0; i < 20; ++i) CHECK(sample_copy_paste_batch(pools, cp, AugmentConfig::identity(8), rng).sample.num_instances() == 1);
  }
}

TEST_SUITE("shapes") {
  TEST_CASE("deterministic and balanced") {
    Rng a = make_rng(1), b = make_rng(1);
    const auto ca = make_shapes_dataset(30, default_shape_categories(), 32, a);
    const auto cb = make_shapes_dataset(30, default_shape_categories(), 32, b);
    REQUIRE(ca.items.size() == 30);
    std::map<std::string, int> per;
    for (std::size_t i = 0; i < ca.items.size(); ++i) {
      CHECK(ca.items[i].image == cb.items[i].image);
      CHECK(ca.items[i].mask == cb.items[i].mask);
      CHECK(count_foreground(ca.items[i].mask) >= 1);
      ++per[ca.items[i].category];
    }
    CHECK(per == std::map<std::string, int>{{"circle", 10}, {"square", 10}, {"triangle", 10}});
  }

  TEST_CASE("blank images carry no object") {
    Rng rng = make_rng(2);
    const auto c = make_shapes_dataset(3, default_shape_categories(), 32, rng, 4);
    CHECK(c.items.size() == 7);
    for (std::size_t i = 3; i < 7; ++i) {
      CHECK(c.items[i].category.empty());
      CHECK(count_foreground(c.items[i].mask) == 0);
    }
  }

  TEST_CASE("embeddings retrieve their own category") {
    Rng rng = make_rng(3);
    const auto corpus = make_shapes_dataset(60, default_shape_categories(), 32, rng, 3);
    const HashTextEncoder enc(64);
    const auto idx = embed_shapes_corpus(corpus, enc, default_prompt_templates(), 0.5, rng);
    CHECK_NOTHROW(idx.validate());
    for (const auto& cat : default_shape_categories()) {
      const auto a = build_archive(idx, encode_category_prompts(cat, default_prompt_templates(), enc), 10);
      for (int m : a.member_indices) CHECK(corpus.items[static_cast<std::size_t>(m)].category == cat);
    }
  }

  TEST_CASE("scenes hold disjoint labelled objects") {
    Rng rng = make_rng(4);
    const auto scenes = make_shapes_scenes(20, default_shape_categories(), 64, 1, 4, rng);
    REQUIRE(scenes.size() == 20);
    for (const auto& s : scenes) {
      CHECK_NOTHROW(s.sample.validate());
      CHECK(s.sample.num_instances() >= 1);
      CHECK(s.sample.num_instances() <= 4);
      for (const auto& [id, cat] : s.sample.instance_categories) {
        CHECK(cat >= 1);
        CHECK(cat <= 3);
      }
    }
  }

  TEST_CASE("rasterized shapes sit inside their circumcircle") {
    for (const auto& kind : all_shape_kinds()) {
      const BinaryMask m = rasterize_shape(kind, 20, 20, 10, 40, 40);
      CHECK(count_foreground(m) > 50);
      for (int y = 0; y < 40; ++y)
        for (int x = 0; x < 40; ++x)
          if (m(y, x)) CHECK(std::hypot(y + 0.5 - 20, x + 0.5 - 20) <= 10.0 + 1e-9);
    }
    CHECK_THROWS_AS(rasterize_shape("blob", 1, 1, 1, 4, 4), ArgumentError);
  }
}

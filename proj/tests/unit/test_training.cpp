#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "zutis/error.hpp"
#include "zutis/io.hpp"
#include "zutis/shapes.hpp"
#include "zutis/training.hpp"
#include "support.hpp"

using namespace zutis;
using namespace zutis::test;
namespace fs = std::filesystem;

namespace {

// Sets d(loss)/dp = g for a 1 x n parameter via loss = p * g^T.
void set_grad(const Var& p, const Matrix& g) {
  ag::backward(ag::matmul(p, ag::constant(g.transpose())));
}

// Reference AdamW in double precision.
struct RefAdam {
  std::vector<double> w, m, v;
  long t = 0;
  void step(const std::vector<double>& g, double lr, double wd, bool decay, double clip_scale, const OptimConfig& c) {
    ++t;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] * clip_scale;
      m[i] = c.beta1 * m[i] + (1 - c.beta1) * gi;
      v[i] = c.beta2 * v[i] + (1 - c.beta2) * gi * gi;
      if (decay) w[i] *= 1 - lr * wd;
      const double mh = m[i] / (1 - std::pow(c.beta1, t)), vh = v[i] / (1 - std::pow(c.beta2, t));
      w[i] -= lr * mh / (std::sqrt(vh) + c.eps);
    }
  }
};

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("poly schedule") {
    const OptimConfig defaults;
    CHECK(defaults.lr == 5e-5);
    CHECK(defaults.encoder_lr == 5e-6);
    CHECK(defaults.weight_decay == 0.05);
    CHECK(poly_lr(5e-5, 0, 20000, 0.9) == 5e-5);
    CHECK(poly_lr(5e-5, 20000, 20000, 0.9) == 0.0);
    CHECK(poly_lr(5e-5, 25000, 20000, 0.9) == 0.0);
    CHECK(poly_lr(1.0, 5000, 10000, 0.9) == doctest::Approx(std::pow(0.5, 0.9)).epsilon(1e-12));
    double prev = 1.0;
    for (int it = 1; it <= 100; ++it) {
      const double lr = poly_lr(1.0, it, 100, 0.9);
      CHECK(lr < prev);
      prev = lr;
    }
  }

  TEST_CASE("adamw matches a double-precision reference") {
    OptimConfig cfg;
    cfg.lr = 1e-2;
    cfg.encoder_lr = 1e-3;
    cfg.max_iter = 10;
    cfg.grad_clip = 0.5;
    Rng rng = make_rng(1);
    const Var enc = ag::parameter(random_matrix(rng, 1, 4));
    const Var head = ag::parameter(random_matrix(rng, 1, 3));
    AdamW opt({{"enc", enc, ParamGroup::kEncoder, true}, {"head", head, ParamGroup::kHead, false}}, cfg);

    auto to_vec = [](const Matrix& m) { return std::vector<double>(m.data(), m.data() + m.size()); };
    RefAdam re{to_vec(enc.value()), std::vector<double>(4), std::vector<double>(4)};
    RefAdam rh{to_vec(head.value()), std::vector<double>(3), std::vector<double>(3)};
    for (int it = 0; it < 5; ++it) {
      const Matrix ge = random_matrix(rng, 1, 4, 0.4), gh = random_matrix(rng, 1, 3, 0.4);
      enc.zero_grad();
      head.zero_grad();
      set_grad(enc, ge);
      set_grad(head, gh);
      const double norm = std::sqrt(ge.cast<double>().squaredNorm() + gh.cast<double>().squaredNorm());
      CHECK(opt.step(it) == doctest::Approx(norm).epsilon(1e-6));
      const double clip = norm > 0.5 ? 0.5 / norm : 1.0;
      re.step(to_vec(ge), poly_lr(1e-3, it, 10, 0.9), 0.05, true, clip, cfg);
      rh.step(to_vec(gh), poly_lr(1e-2, it, 10, 0.9), 0.05, false, clip, cfg);
      for (int i = 0; i < 4; ++i) CHECK(enc.value()(0, i) == doctest::Approx(re.w[static_cast<std::size_t>(i)]).epsilon(1e-5));
      for (int i = 0; i < 3; ++i) CHECK(head.value()(0, i) == doctest::Approx(rh.w[static_cast<std::size_t>(i)]).epsilon(1e-5));
    }
    CHECK(opt.steps() == 5);
    CHECK(opt.lr_at(0, ParamGroup::kEncoder) == doctest::Approx(1e-3));
  }

  TEST_CASE("non-finite gradients abort the step") {
    const Var p = ag::parameter(Matrix::Zero(1, 2));
    AdamW opt({{"p", p, ParamGroup::kHead, true}}, OptimConfig{});
    Matrix g(1, 2);
    g << 1.0f, std::numeric_limits<float>::quiet_NaN();
    set_grad(p, g);
    CHECK_THROWS_AS(opt.step(0), NumericError);
  }

  TEST_CASE("model parameters split into groups and decay sets") {
    const Segmenter model(small_config(), 1);
    bool enc = false, head = false;
    for (const auto& p : model.parameters()) {
      const bool is_enc = p.name.starts_with("encoder.");
      CHECK((p.group == ParamGroup::kEncoder) == is_enc);
      enc = enc || is_enc;
      head = head || !is_enc;
      if (p.var.rows() == 1) CHECK_FALSE(p.decay);
    }
    CHECK(enc);
    CHECK(head);
  }

  TEST_CASE("checkpoint round trip and rejection") {
    const fs::path dir = fs::temp_directory_path() / "zutis_test_ckpt";
    fs::remove_all(dir);
    Rng rng = make_rng(2);
    Checkpoint c;
    c.config_json = R"({"a":1})";
    c.iteration = 42;
    c.seed = 7;
    c.params["x"] = random_matrix(rng, 2, 3);
    c.adam["x"] = {random_matrix(rng, 2, 3), random_matrix(rng, 2, 3)};
    c.adam_steps = 41;
    save_checkpoint(dir / "c.ckpt", c);
    const Checkpoint back = load_checkpoint(dir / "c.ckpt");
    CHECK(back.config_json == c.config_json);
    CHECK(back.iteration == 42);
    CHECK(back.seed == 7);
    CHECK(back.params.at("x") == c.params.at("x"));
    CHECK(back.adam.at("x").m == c.adam.at("x").m);
    CHECK(back.adam.at("x").v == c.adam.at("x").v);
    CHECK(back.adam_steps == 41);

    std::string bytes = read_text(dir / "c.ckpt");
    std::string bad = bytes;
    bad[0] = 'X';
    write_text(dir / "magic.ckpt", bad);
    CHECK_THROWS_AS(load_checkpoint(dir / "magic.ckpt"), DataError);
    bad = bytes;
    bad[8] = 9;
    write_text(dir / "version.ckpt", bad);
    CHECK_THROWS_AS(load_checkpoint(dir / "version.ckpt"), DataError);
    write_text(dir / "short.ckpt", bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), DataError);
    CHECK_THROWS_AS(load_checkpoint(dir / "absent.ckpt"), IoError);
    fs::remove_all(dir);
  }

  TEST_CASE("training targets follow the feature grid") {
    PseudoSample s;
    s.image = Image(8, 8);
    s.instance_map = LabelMap(8, 8);
    s.instance_map(0, 0) = 1;  // vanishes at 4x4: cell centres sit on odd pixels
    for (int y = 4; y < 8; ++y)
      for (int x = 4; x < 8; ++x) s.instance_map(y, x) = 2;
    s.instance_categories = {{1, 1}, {2, 3}};
    const TrainingTarget t = make_training_target(s, 4, 4);
    REQUIRE(t.masks.size() == 1);
    CHECK(t.categories == std::vector<int>{3});
    CHECK(count_foreground(t.masks[0]) == 4);
    CHECK(t.semantic(3, 3) == 3);
    CHECK(t.semantic(0, 0) == 0);
  }

  TEST_CASE("overfitting one batch keeps lowering the loss") {
    Rng rng = make_rng(3);
    const auto scenes = make_shapes_scenes(2, default_shape_categories(), 32, 1, 3, rng);
    const std::vector<PseudoSample> batch{scenes[0].sample, scenes[1].sample};
    const TextBank bank = shapes_bank(overfit_config().text_dim);
    Segmenter model(overfit_config(), 4);
    // At 3e-3 the loss spikes whenever the matching flips; 1e-3 decreases steadily.
    const auto losses = overfit(model, bank, batch, 200, 1e-3);
    for (std::size_t i = 0; i + 50 < losses.size(); ++i) CHECK(losses[i + 50] < losses[i]);
    CHECK(losses.back() < 0.5 * losses.front());
  }

  TEST_CASE("the text bank stays frozen while training") {
    Rng rng = make_rng(5);
    const auto scenes = make_shapes_scenes(1, default_shape_categories(), 32, 1, 2, rng);
    const TextBank bank = shapes_bank(overfit_config().text_dim);
    const Matrix before = bank.embeddings();
    Segmenter model(overfit_config(), 6);
    overfit(model, bank, {scenes[0].sample}, 3);
    CHECK(bank.embeddings() == before);
  }

  TEST_CASE("non-finite losses dump the batch") {
    Rng rng = make_rng(7);
    const auto scenes = make_shapes_scenes(1, default_shape_categories(), 32, 1, 2, rng);
    const TextBank bank = shapes_bank(overfit_config().text_dim);
    Segmenter model(overfit_config(), 8);
    auto state = model.state();
    for (auto& [name, m] : state)
      if (name.starts_with("projection.")) m.setConstant(std::numeric_limits<float>::quiet_NaN());
    model.load_state(state);
    const fs::path dump = fs::temp_directory_path() / "zutis_test_dump";
    fs::remove_all(dump);
    TrainConfig cfg;
    Trainer trainer(model, bank, cfg);
    trainer.set_dump_dir(dump);
    const std::vector<PseudoSample> batch{scenes[0].sample};
    CHECK_THROWS_AS(trainer.step(batch), NumericError);
    CHECK(list_sample_ids(dump) == std::vector<std::string>{"batch_0"});
    fs::remove_all(dump);
  }

  TEST_CASE("run logs and checkpoints on schedule") {
    Rng rng = make_rng(9);
    const auto scenes = make_shapes_scenes(1, default_shape_categories(), 32, 1, 2, rng);
    const TextBank bank = shapes_bank(overfit_config().text_dim);
    Segmenter model(overfit_config(), 10);
    TrainConfig cfg;
    cfg.iterations = 12;
    cfg.log_interval = 4;
    cfg.checkpoint_interval = 5;
    cfg.optim.max_iter = 12;
    Trainer trainer(model, bank, cfg);
    std::vector<int> logged, saved;
    trainer.run([&](int) { return std::vector<PseudoSample>{scenes[0].sample}; },
                [&](const TrainLogRecord& r) { logged.push_back(r.iteration); },
                [&](int it) { saved.push_back(it); });
    CHECK(logged == std::vector<int>{4, 8, 12});
    CHECK(saved == std::vector<int>{5, 10, 12});
    CHECK(trainer.iteration() == 12);
  }
}

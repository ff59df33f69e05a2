#include <doctest.h>

#include <filesystem>

#include <nlohmann/json.hpp>

#include "zutis/config.hpp"
#include "zutis/error.hpp"
#include "zutis/io.hpp"

using namespace zutis;
namespace fs = std::filesystem;
using nlohmann::json;

TEST_SUITE("config") {
  TEST_CASE("defaults follow the published recipe") {
    const RunConfig c;
    CHECK(c.archive_k == 500);
    CHECK(c.copy_paste.max_sources == 10);
    CHECK(c.copy_paste.same_archive_prob == 0.5);
    CHECK(c.augment.crop_size == 384);
    CHECK(c.train.optim.lr == 5e-5);
    CHECK(c.train.optim.encoder_lr == 5e-6);
    CHECK(c.train.optim.weight_decay == 0.05);
    CHECK(c.train.loss.lambda_mask == 1.0);
    CHECK(c.inference.temperature == 5.0);
    CHECK(c.inference.nms_iou_threshold == 0.5);
    CHECK(c.inference.binarize_threshold == 0.5);
    CHECK(c.templates().size() == 85);
    CHECK(c.bank_names() == std::vector<std::string>{"background", "circle", "square", "triangle"});
  }

  TEST_CASE("json round trip is the identity") {
    RunConfig c;
    c.seed = 11;
    c.categories = {"square", "circle"};
    c.archive_k = 9;
    c.model.stop_gradient = false;
    c.train.iterations = 17;
    c.inference.nms = false;
    c.inference.mask_restore = MaskRestore::kBilinear;
    c.eval_mode = EvalModes::kClassAgnostic;
    const auto j = to_json(c);
    const RunConfig back = run_config_from_json(json::parse(j.dump()));
    CHECK(to_json(back).dump() == j.dump());
    CHECK(back.train.optim.max_iter == 17);
    CHECK(config_hash(back) == config_hash(c));
  }

  TEST_CASE("unknown keys are rejected at any depth") {
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"sead": 1})")), ArgumentError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"train": {"iters": 1}})")), ArgumentError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"data": {"shapes": {"size": 1}}})")), ArgumentError);
    try {
      run_config_from_json(json::parse(R"({"model": {"queries": 3}})"));
      FAIL("accepted an unknown key");
    } catch (const ArgumentError& e) {
      CHECK(std::string(e.what()).find("model.queries") != std::string::npos);
    }
  }

  TEST_CASE("bad values are rejected") {
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"archive": {"k": "many"}})")), ArgumentError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"archive": {"k": 0}})")), ArgumentError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"categories": []})")), ArgumentError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"categories": ["a", "a"]})")), ArgumentError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"categories": ["background"]})")), ArgumentError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"copy_paste": {"max_sources": 11}})")), ArgumentError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"copy_paste": {"same_archive_prob": 1.5}})")), ArgumentError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"inference": {"mask_restore": "cubic"}})")), ArgumentError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"evaluation": {"mode": "all"}})")), ArgumentError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"data": {"saliency": "magic"}})")), ArgumentError);
  }

  TEST_CASE("hash tracks every field") {
    const RunConfig a;
    RunConfig b;
    CHECK(config_hash(a) == config_hash(b));
    CHECK(config_hash(a).size() == 16);
    b.seed = 1;
    CHECK(config_hash(a) != config_hash(b));
    b = a;
    b.inference.temperature = 4.0;
    CHECK(config_hash(a) != config_hash(b));
  }

  TEST_CASE("config files load with comments and report their path") {
    const fs::path dir = fs::temp_directory_path() / "zutis_test_config";
    fs::remove_all(dir);
    write_text(dir / "ok.json", "{\n  // a comment\n  \"seed\": 3, \"archive\": {\"k\": 4}\n}\n");
    const RunConfig c = load_run_config(dir / "ok.json");
    CHECK(c.seed == 3);
    CHECK(c.archive_k == 4);
    write_text(dir / "broken.json", "{\"seed\": ");
    try {
      load_run_config(dir / "broken.json");
      FAIL("parsed a truncated file");
    } catch (const ArgumentError& e) {
      CHECK(std::string(e.what()).find("broken.json") != std::string::npos);
    }
    CHECK_THROWS_AS(load_run_config(dir / "absent.json"), IoError);
    fs::remove_all(dir);
  }
}

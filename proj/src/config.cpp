#include "zutis/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "zutis/error.hpp"

namespace zutis {
namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

// Reads fields from one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ArgumentError("config: '" + path_ + "' must be an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ArgumentError("config: unknown key '" + qualified(key) + "'");
    }
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ArgumentError("config: bad value for '" + qualified(key) + "': " + e.what());
    }
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  Section sub(const std::string& key) {
    seen_.insert(key);
    return Section(j_.at(key), qualified(key));
  }

 private:
  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string eval_modes_name(EvalModes m) {
  switch (m) {
    case EvalModes::kClassAware: return "class-aware";
    case EvalModes::kClassAgnostic: return "class-agnostic";
    case EvalModes::kBoth: return "both";
  }
  return "both";
}

EvalModes parse_eval_modes(const std::string& s) {
  if (s == "class-aware") return EvalModes::kClassAware;
  if (s == "class-agnostic") return EvalModes::kClassAgnostic;
  if (s == "both") return EvalModes::kBoth;
  throw ArgumentError("config: evaluation.mode must be class-aware, class-agnostic or both");
}

}  // namespace

std::vector<std::string> RunConfig::bank_names() const {
  std::vector<std::string> names{background};
  names.insert(names.end(), categories.begin(), categories.end());
  return names;
}

const std::vector<std::string>& RunConfig::templates() const {
  return prompt_templates.empty() ? default_prompt_templates() : prompt_templates;
}

void RunConfig::validate() const {
  if (categories.empty()) throw ArgumentError("config: no categories");
  std::set<std::string> names(categories.begin(), categories.end());
  if (names.size() != categories.size() || names.count(background)) {
    throw ArgumentError("config: category names must be distinct and differ from the background name");
  }
  if (archive_k < 1) throw ArgumentError("config: archive.k must be >= 1");
  if (copy_paste.max_sources < 1 || copy_paste.max_sources > kMaxPasteSources) {
    throw ArgumentError("config: copy_paste.max_sources must be in [1, 10]");
  }
  if (copy_paste.same_archive_prob < 0 || copy_paste.same_archive_prob > 1) {
    throw ArgumentError("config: copy_paste.same_archive_prob must be in [0, 1]");
  }
  if (augment.crop_size < model.patch_size) throw ArgumentError("config: crop size is smaller than one patch");
  if (model.visual_dim % model.encoder_heads != 0) throw ArgumentError("config: e_v must be divisible by encoder heads");
  if (model.decoder_dim % model.decoder_heads != 0) throw ArgumentError("config: d must be divisible by decoder heads");
  if (model.num_queries < 1) throw ArgumentError("config: model.num_queries must be >= 1");
  if (train.iterations < 1 || train.batch_size < 1) throw ArgumentError("config: iterations and batch size must be >= 1");
  if (data.saliency != "shapes-oracle" && data.saliency != "external") {
    throw ArgumentError("config: data.saliency must be shapes-oracle or external");
  }
  inference.validate();
}

ojson to_json(const RunConfig& c) {
  ojson j;
  j["seed"] = c.seed;
  j["categories"] = c.categories;
  j["background"] = c.background;
  j["prompt_templates"] = c.prompt_templates;
  j["archive"] = {{"k", c.archive_k}};
  const auto& s = c.data.shapes;
  j["data"] = {{"index_dir", c.data.index_dir},
               {"saliency", c.data.saliency},
               {"mask_dir", c.data.mask_dir},
               {"predict_dir", c.data.predict_dir},
               {"ground_truth_dir", c.data.ground_truth_dir},
               {"shapes",
                {{"canvas", s.canvas},
                 {"corpus_size", s.corpus_size},
                 {"blank_images", s.blank_images},
                 {"embed_noise", s.embed_noise},
                 {"eval_scenes", s.eval_scenes},
                 {"eval_min_objects", s.eval_min_objects},
                 {"eval_max_objects", s.eval_max_objects}}}};
  j["copy_paste"] = {{"enabled", c.copy_paste.enabled},
                     {"max_sources", c.copy_paste.max_sources},
                     {"same_archive_prob", c.copy_paste.same_archive_prob}};
  const auto& a = c.augment;
  j["augment"] = {{"flip_prob", a.flip_prob},     {"scale_min", a.scale_min},   {"scale_max", a.scale_max},
                  {"crop_size", a.crop_size},     {"jitter_prob", a.jitter_prob}, {"brightness", a.brightness},
                  {"contrast", a.contrast},       {"saturation", a.saturation}, {"hue", a.hue},
                  {"gray_prob", a.gray_prob},     {"blur_prob", a.blur_prob},   {"blur_kernel_frac", a.blur_kernel_frac}};
  const auto& m = c.model;
  j["model"] = {{"encoder", m.encoder},
                {"feature_dir", m.feature_dir},
                {"patch_size", m.patch_size},
                {"visual_dim", m.visual_dim},
                {"text_dim", m.text_dim},
                {"decoder_dim", m.decoder_dim},
                {"encoder_layers", m.encoder_layers},
                {"encoder_heads", m.encoder_heads},
                {"decoder_heads", m.decoder_heads},
                {"num_queries", m.num_queries},
                {"stop_gradient", m.stop_gradient}};
  const auto& t = c.train;
  j["train"] = {{"lr", t.optim.lr},
                {"encoder_lr", t.optim.encoder_lr},
                {"weight_decay", t.optim.weight_decay},
                {"beta1", t.optim.beta1},
                {"beta2", t.optim.beta2},
                {"eps", t.optim.eps},
                {"poly_power", t.optim.poly_power},
                {"grad_clip", t.optim.grad_clip},
                {"lambda_mask", t.loss.lambda_mask},
                {"rematch_aux", t.loss.rematch_aux},
                {"iterations", t.iterations},
                {"batch_size", t.batch_size},
                {"log_interval", t.log_interval},
                {"checkpoint_interval", t.checkpoint_interval}};
  const auto& i = c.inference;
  j["inference"] = {{"binarize_threshold", i.binarize_threshold},
                    {"temperature", i.temperature},
                    {"nms_iou_threshold", i.nms_iou_threshold},
                    {"nms", i.nms},
                    {"max_long_side", i.max_long_side},
                    {"score_floor", i.score_floor},
                    {"mask_restore", to_string(i.mask_restore)}};
  j["evaluation"] = {{"mode", eval_modes_name(c.eval_mode)}};
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  {
    Section root(j, "");
    root.get("seed", c.seed);
    root.get("categories", c.categories);
    root.get("background", c.background);
    root.get("prompt_templates", c.prompt_templates);
    if (root.has("archive")) root.sub("archive").get("k", c.archive_k);
    if (root.has("data")) {
      Section d = root.sub("data");
      d.get("index_dir", c.data.index_dir);
      d.get("saliency", c.data.saliency);
      d.get("mask_dir", c.data.mask_dir);
      d.get("predict_dir", c.data.predict_dir);
      d.get("ground_truth_dir", c.data.ground_truth_dir);
      if (d.has("shapes")) {
        Section s = d.sub("shapes");
        auto& x = c.data.shapes;
        s.get("canvas", x.canvas);
        s.get("corpus_size", x.corpus_size);
        s.get("blank_images", x.blank_images);
        s.get("embed_noise", x.embed_noise);
        s.get("eval_scenes", x.eval_scenes);
        s.get("eval_min_objects", x.eval_min_objects);
        s.get("eval_max_objects", x.eval_max_objects);
      }
    }
    if (root.has("copy_paste")) {
      Section s = root.sub("copy_paste");
      s.get("enabled", c.copy_paste.enabled);
      s.get("max_sources", c.copy_paste.max_sources);
      s.get("same_archive_prob", c.copy_paste.same_archive_prob);
    }
    if (root.has("augment")) {
      Section s = root.sub("augment");
      auto& a = c.augment;
      s.get("flip_prob", a.flip_prob);
      s.get("scale_min", a.scale_min);
      s.get("scale_max", a.scale_max);
      s.get("crop_size", a.crop_size);
      s.get("jitter_prob", a.jitter_prob);
      s.get("brightness", a.brightness);
      s.get("contrast", a.contrast);
      s.get("saturation", a.saturation);
      s.get("hue", a.hue);
      s.get("gray_prob", a.gray_prob);
      s.get("blur_prob", a.blur_prob);
      s.get("blur_kernel_frac", a.blur_kernel_frac);
    }
    if (root.has("model")) {
      Section s = root.sub("model");
      auto& m = c.model;
      s.get("encoder", m.encoder);
      s.get("feature_dir", m.feature_dir);
      s.get("patch_size", m.patch_size);
      s.get("visual_dim", m.visual_dim);
      s.get("text_dim", m.text_dim);
      s.get("decoder_dim", m.decoder_dim);
      s.get("encoder_layers", m.encoder_layers);
      s.get("encoder_heads", m.encoder_heads);
      s.get("decoder_heads", m.decoder_heads);
      s.get("num_queries", m.num_queries);
      s.get("stop_gradient", m.stop_gradient);
    }
    if (root.has("train")) {
      Section s = root.sub("train");
      auto& t = c.train;
      s.get("lr", t.optim.lr);
      s.get("encoder_lr", t.optim.encoder_lr);
      s.get("weight_decay", t.optim.weight_decay);
      s.get("beta1", t.optim.beta1);
      s.get("beta2", t.optim.beta2);
      s.get("eps", t.optim.eps);
      s.get("poly_power", t.optim.poly_power);
      s.get("grad_clip", t.optim.grad_clip);
      s.get("lambda_mask", t.loss.lambda_mask);
      s.get("rematch_aux", t.loss.rematch_aux);
      s.get("iterations", t.iterations);
      s.get("batch_size", t.batch_size);
      s.get("log_interval", t.log_interval);
      s.get("checkpoint_interval", t.checkpoint_interval);
    }
    if (root.has("inference")) {
      Section s = root.sub("inference");
      auto& i = c.inference;
      s.get("binarize_threshold", i.binarize_threshold);
      s.get("temperature", i.temperature);
      s.get("nms_iou_threshold", i.nms_iou_threshold);
      s.get("nms", i.nms);
      s.get("max_long_side", i.max_long_side);
      s.get("score_floor", i.score_floor);
      std::string restore = to_string(i.mask_restore);
      s.get("mask_restore", restore);
      i.mask_restore = parse_mask_restore(restore);
    }
    if (root.has("evaluation")) {
      Section s = root.sub("evaluation");
      std::string mode = eval_modes_name(c.eval_mode);
      s.get("mode", mode);
      c.eval_mode = parse_eval_modes(mode);
    }
  }
  c.train.optim.max_iter = c.train.iterations;
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ArgumentError("config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

std::string config_hash(const std::string& canonical_json) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(canonical_json)));
  return buf;
}

std::string config_hash(const RunConfig& cfg) { return config_hash(to_json(cfg).dump()); }

}  // namespace zutis

#include "zutis/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "zutis/error.hpp"
#include "zutis/io.hpp"
#include "zutis/shapes.hpp"

namespace zutis {
namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

// Independent random streams per stage; training batches use kBatchStream + iteration.
constexpr std::uint64_t kCorpusStream = 11;
constexpr std::uint64_t kEmbedStream = 12;
constexpr std::uint64_t kSceneStream = 13;
constexpr std::uint64_t kBatchStream = 1'000'000;

fs::path resolve(const fs::path& root, const std::string& configured, const fs::path& fallback) {
  if (configured.empty()) return root / fallback;
  const fs::path p(configured);
  return p.is_absolute() ? p : root / p;
}

void say_to(const std::function<void(const std::string&)>& say, const std::string& msg) {
  if (say) say(msg);
}

std::vector<std::string> sorted_pngs(const fs::path& dir) {
  std::vector<std::string> stems;
  if (!fs::exists(dir)) return stems;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") stems.push_back(e.path().stem().string());
  }
  std::sort(stems.begin(), stems.end());
  return stems;
}

int index_in(const std::vector<std::string>& names, const std::string& name) {
  const auto it = std::find(names.begin(), names.end(), name);
  return it == names.end() ? -1 : static_cast<int>(it - names.begin());
}

std::array<std::uint8_t, 3> palette_color(std::string_view name) {
  const std::uint64_t h = fnv1a(name);
  // Keep every channel away from black so overlays stay visible.
  return {static_cast<std::uint8_t>(64 + (h & 0xbf)), static_cast<std::uint8_t>(64 + ((h >> 8) & 0xbf)),
          static_cast<std::uint8_t>(64 + ((h >> 16) & 0xbf))};
}

}  // namespace

RunPaths RunPaths::under(const fs::path& root, const RunConfig& cfg) {
  RunPaths p;
  p.index_dir = resolve(root, cfg.data.index_dir, "corpus");
  p.masks = cfg.data.mask_dir.empty() ? p.index_dir / "masks" : resolve(root, cfg.data.mask_dir, "");
  p.archives = root / "archives";
  p.pseudo = root / "pseudo";
  p.train = root / "train";
  p.eval_images = resolve(root, cfg.data.predict_dir, "eval/images");
  p.ground_truth = resolve(root, cfg.data.ground_truth_dir, "eval/ground_truth");
  p.predictions = root / "predictions";
  p.metrics = root / "metrics.txt";
  return p;
}

void check_device() {
  const char* dev = std::getenv("ZUTIS_DEVICE");
  if (dev && std::string_view(dev) != "cpu" && std::string_view(dev) != "") {
    throw ArgumentError(std::string("ZUTIS_DEVICE=") + dev + " is not available; only 'cpu' is supported");
  }
}

TextBank build_text_bank(const RunConfig& cfg, const std::vector<std::string>& names) {
  const HashTextEncoder encoder(cfg.model.text_dim);
  return make_text_bank(names, cfg.templates(), encoder);
}

CorpusSummary generate_shapes_corpus(const RunConfig& cfg, const RunPaths& paths) {
  for (const auto& c : cfg.categories) {
    if (!is_shape_kind(c)) throw ArgumentError("shapes corpus: unknown shape category '" + c + "'");
  }
  const auto& s = cfg.data.shapes;
  const std::string hash = config_hash(cfg);
  CorpusSummary out;

  Rng corpus_rng = make_rng(cfg.seed, kCorpusStream);
  const ShapesCorpus corpus = make_shapes_dataset(s.corpus_size, cfg.categories, s.canvas, corpus_rng, s.blank_images);
  fs::remove_all(paths.index_dir);
  for (const auto& item : corpus.items) {
    write_png_rgb(paths.index_dir / "images" / (item.locator + ".png"), item.image);
    write_png_mask(paths.index_dir / "masks" / (item.locator + ".png"), item.mask);
    if (item.category.empty()) ++out.blanks; else ++out.images;
  }
  const HashTextEncoder encoder(cfg.model.text_dim);
  Rng embed_rng = make_rng(cfg.seed, kEmbedStream);
  embed_shapes_corpus(corpus, encoder, cfg.templates(), s.embed_noise, embed_rng).save(paths.index_dir);
  write_text(paths.index_dir / "config.txt", "config " + hash + "\n");

  Rng scene_rng = make_rng(cfg.seed, kSceneStream);
  const auto scenes = make_shapes_scenes(s.eval_scenes, cfg.categories, s.canvas, s.eval_min_objects,
                                         s.eval_max_objects, scene_rng);
  fs::remove_all(paths.eval_images);
  fs::remove_all(paths.ground_truth);
  fs::create_directories(paths.eval_images);
  const auto names = cfg.bank_names();
  for (const auto& scene : scenes) {
    write_png_rgb(paths.eval_images / (scene.id + ".png"), scene.sample.image);
    write_pseudo_sample(paths.ground_truth, scene.id, scene.sample, names, hash);
  }
  out.eval_scenes = static_cast<int>(scenes.size());
  return out;
}

ArchiveSummary build_archives(const RunConfig& cfg, const RunPaths& paths) {
  if (!fs::exists(paths.index_dir / "embeddings.f32")) {
    throw IoError("missing embeddings file " + (paths.index_dir / "embeddings.f32").string());
  }
  const IndexDataset index = IndexDataset::load(paths.index_dir, cfg.model.text_dim);
  const HashTextEncoder encoder(cfg.model.text_dim);
  const std::string hash = config_hash(cfg);
  ArchiveSummary out;
  if (cfg.archive_k > index.size()) {
    out.truncated = true;
    std::cerr << "warning: archive k=" << cfg.archive_k << " exceeds the index size " << index.size()
              << "; archives hold the whole index\n";
  }
  fs::remove_all(paths.archives);
  for (const auto& cat : cfg.categories) {
    const CategoryPrompt prompt = encode_category_prompts(cat, cfg.templates(), encoder);
    const Archive a = build_archive(index, prompt, cfg.archive_k);
    write_archive_manifest(paths.archives / (cat + ".txt"), a, index, hash);
    ArchiveSummary::Entry e{cat, static_cast<int>(a.member_indices.size()), 0.0f, 0.0f};
    if (!a.similarities.empty()) {
      e.max_similarity = a.similarities.front();
      e.min_similarity = a.similarities.back();
    }
    out.entries.push_back(e);
  }
  return out;
}

PseudoLabelSummary make_pseudo_labels(const RunConfig& cfg, const RunPaths& paths) {
  std::vector<ArchiveManifest> manifests;
  for (const auto& cat : cfg.categories) {
    const fs::path p = paths.archives / (cat + ".txt");
    if (!fs::exists(p)) throw IoError("missing archive manifest " + p.string() + " (run build-archives first)");
    manifests.push_back(read_archive_manifest(p));
  }

  std::unique_ptr<SaliencyDetector> detector;
  if (cfg.data.saliency == "shapes-oracle") {
    auto oracle = std::make_unique<ShapesOracleDetector>();
    std::set<std::string> seen;
    for (const auto& m : manifests) {
      for (const auto& loc : m.locators) {
        const fs::path mp = paths.index_dir / "masks" / (loc + ".png");
        if (seen.insert(loc).second && fs::exists(mp)) oracle->add(loc, read_png_mask(mp));
      }
    }
    detector = std::move(oracle);
  } else {
    detector = std::make_unique<ExternalMaskDetector>(paths.masks);
  }

  const auto names = cfg.bank_names();
  const std::string hash = config_hash(cfg);
  PseudoLabelSummary out;
  std::set<std::string> discarded;
  fs::remove_all(paths.pseudo);
  fs::create_directories(paths.pseudo);
  for (std::size_t c = 0; c < manifests.size(); ++c) {
    const std::string& cat = cfg.categories[c];
    for (const auto& loc : manifests[c].locators) {
      const Image image = read_png_rgb(paths.index_dir / "images" / (loc + ".png"));
      BinaryMask mask;
      try {
        mask = generate_pseudo_mask(image, *detector, loc);
      } catch (const DetectionError& e) {
        out.missing.push_back(loc);
        continue;
      }
      if (std::none_of(mask.values().begin(), mask.values().end(), [](auto v) { return v != 0; })) {
        // Counted once per image even when several archives retrieved it.
        if (discarded.insert(loc).second) ++out.discarded_empty;
        continue;
      }
      PseudoSample s;
      s.image = image;
      s.instance_map = LabelMap(mask.height(), mask.width());
      for (std::size_t i = 0; i < mask.size(); ++i) s.instance_map[i] = mask[i] ? 1 : 0;
      s.instance_categories[1] = static_cast<int>(c) + 1;
      s.provenance.push_back(cat + ":" + loc);
      write_pseudo_sample(paths.pseudo, cat + "__" + loc, s, names, hash);
      ++out.written;
    }
  }
  std::string summary = "config " + hash + "\nwritten " + std::to_string(out.written) + "\ndiscarded_empty " +
                        std::to_string(out.discarded_empty) + "\nmissing " + std::to_string(out.missing.size()) + "\n";
  for (const auto& m : out.missing) summary += "missing_locator " + m + "\n";
  write_text(paths.pseudo / "summary.txt", summary);
  for (const auto& m : out.missing) std::cerr << "warning: detector has no mask for " << m << "; skipped\n";
  return out;
}

std::vector<ArchivePool> load_archive_pools(const RunConfig& cfg, const fs::path& store) {
  const auto names = cfg.bank_names();
  std::vector<ArchivePool> pools(cfg.categories.size());
  for (std::size_t c = 0; c < pools.size(); ++c) {
    pools[c].name = cfg.categories[c];
    pools[c].category = static_cast<int>(c) + 1;
  }
  for (const auto& id : list_sample_ids(store)) {
    const PseudoSample s = read_pseudo_sample(store, id, names);
    for (const auto& [inst, cat] : s.instance_categories) {
      if (cat < 1) continue;
      PasteSource src;
      src.image = s.image;
      src.mask = s.instance_mask(inst);
      src.category = cat;
      src.provenance = s.provenance.empty() ? id : s.provenance.front();
      pools[static_cast<std::size_t>(cat - 1)].members.push_back(std::move(src));
    }
  }
  return pools;
}

namespace {

Checkpoint make_checkpoint(const RunConfig& cfg, const Segmenter& model, AdamW& opt, int iteration) {
  Checkpoint ck;
  ck.config_json = to_json(cfg).dump();
  ck.iteration = iteration;
  ck.seed = cfg.seed;
  ck.params = model.state();
  ck.adam = opt.state();
  ck.adam_steps = opt.steps();
  return ck;
}

std::string log_line(const TrainLogRecord& r, const std::string& hash) {
  ojson j;
  j["iteration"] = r.iteration;
  j["lr"] = r.lr;
  j["total"] = r.report.total;
  j["l_ce"] = r.report.l_ce;
  j["l_mask"] = r.report.l_mask;
  j["l_dice"] = r.report.l_dice;
  j["l_bce"] = r.report.l_bce;
  j["aux"] = r.report.aux;
  j["wall_time"] = r.wall_seconds;
  j["config"] = hash;
  return j.dump() + "\n";
}

std::vector<std::string> model_diff(const ModelConfig& a, const ModelConfig& b) {
  std::vector<std::string> d;
  auto cmp = [&](const char* name, auto x, auto y) {
    if (x != y) {
      std::ostringstream s;
      s << name << ": checkpoint " << x << " vs config " << y;
      d.push_back(s.str());
    }
  };
  cmp("patch_size", a.patch_size, b.patch_size);
  cmp("visual_dim", a.visual_dim, b.visual_dim);
  cmp("text_dim", a.text_dim, b.text_dim);
  cmp("decoder_dim", a.decoder_dim, b.decoder_dim);
  cmp("encoder_layers", a.encoder_layers, b.encoder_layers);
  cmp("encoder_heads", a.encoder_heads, b.encoder_heads);
  cmp("decoder_heads", a.decoder_heads, b.decoder_heads);
  cmp("num_queries", a.num_queries, b.num_queries);
  cmp("encoder", a.encoder, b.encoder);
  return d;
}

}  // namespace

TrainSummary train_model(const RunConfig& cfg, const RunPaths& paths, const std::optional<fs::path>& resume,
                         const std::function<void(const TrainLogRecord&)>& progress) {
  const auto pools = load_archive_pools(cfg, paths.pseudo);
  if (std::all_of(pools.begin(), pools.end(), [](const ArchivePool& p) { return p.members.empty(); })) {
    throw DataError("pseudo-label store " + paths.pseudo.string() + " is empty (run make-pseudo-labels first)");
  }
  const TextBank bank = build_text_bank(cfg, cfg.bank_names());
  Segmenter model(cfg.model, cfg.seed);
  Trainer trainer(model, bank, cfg.train);
  trainer.set_dump_dir(paths.train / "nonfinite_batch");
  if (resume) {
    Checkpoint ck = load_checkpoint(*resume);
    const RunConfig saved = run_config_from_json(json::parse(ck.config_json));
    const auto diff = model_diff(saved.model, cfg.model);
    if (!diff.empty()) {
      std::string msg = "checkpoint " + resume->string() + " does not match the config:";
      for (const auto& d : diff) msg += "\n  " + d;
      throw ArgumentError(msg);
    }
    model.load_state(ck.params);
    trainer.optimizer().load_state(std::move(ck.adam), ck.adam_steps);
    trainer.set_iteration(ck.iteration);
  }

  fs::create_directories(paths.train);
  const std::string hash = config_hash(cfg);
  std::ofstream log(paths.train / "train_log.jsonl", resume ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot write " + (paths.train / "train_log.jsonl").string());

  TrainSummary out;
  const BatchFn batches = [&](int it) {
    Rng rng = make_rng(cfg.seed, kBatchStream + static_cast<std::uint64_t>(it));
    std::vector<PseudoSample> batch;
    batch.reserve(static_cast<std::size_t>(cfg.train.batch_size));
    for (int b = 0; b < cfg.train.batch_size; ++b) {
      batch.push_back(sample_copy_paste_batch(pools, cfg.copy_paste, cfg.augment, rng).sample);
    }
    return batch;
  };
  trainer.run(
      batches,
      [&](const TrainLogRecord& r) {
        log << log_line(r, hash);
        log.flush();
        out.last = r.report;
        if (progress) progress(r);
      },
      [&](int it) {
        char name[32];
        std::snprintf(name, sizeof name, "ckpt_%06d.ckpt", it);
        const Checkpoint ck = make_checkpoint(cfg, model, trainer.optimizer(), it);
        save_checkpoint(paths.train / name, ck);
        save_checkpoint(paths.train / "model.ckpt", ck);
      });
  out.iterations = trainer.iteration();
  out.checkpoint = paths.train / "model.ckpt";
  return out;
}

Segmenter load_model(const RunConfig& cfg, const fs::path& checkpoint) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const RunConfig saved = run_config_from_json(json::parse(ck.config_json));
  const auto diff = model_diff(saved.model, cfg.model);
  if (!diff.empty()) {
    std::string msg = "checkpoint " + checkpoint.string() + " does not match the config:";
    for (const auto& d : diff) msg += "\n  " + d;
    throw ArgumentError(msg);
  }
  // Feature paths and stop-gradient are runtime settings; dimensions come from the checkpoint.
  Segmenter model(cfg.model, ck.seed);
  model.load_state(ck.params);
  return model;
}

Image render_overlay(const Image& image, const LabelMap& semantic, std::span<const InstancePrediction> instances,
                     const std::vector<std::string>& names) {
  Image out = image;
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const int label = semantic(y, x);
      if (label <= 0 || label >= static_cast<int>(names.size())) continue;
      const auto c = palette_color(names[static_cast<std::size_t>(label)]);
      for (int ch = 0; ch < 3; ++ch) {
        out.at(y, x, ch) = static_cast<std::uint8_t>((out.at(y, x, ch) + c[static_cast<std::size_t>(ch)]) / 2);
      }
    }
  }
  // Instance outlines: mask pixels with a 4-neighbour outside the mask.
  for (const auto& inst : instances) {
    if (inst.category < 0 || inst.category >= static_cast<int>(names.size())) continue;
    const auto c = palette_color(names[static_cast<std::size_t>(inst.category)]);
    const auto& m = inst.mask;
    for (int y = 0; y < m.height(); ++y) {
      for (int x = 0; x < m.width(); ++x) {
        if (!m(y, x)) continue;
        const bool edge = y == 0 || x == 0 || y == m.height() - 1 || x == m.width() - 1 || !m(y - 1, x) ||
                          !m(y + 1, x) || !m(y, x - 1) || !m(y, x + 1);
        if (!edge) continue;
        for (int ch = 0; ch < 3; ++ch) out.at(y, x, ch) = c[static_cast<std::size_t>(ch)];
      }
    }
  }
  return out;
}

PredictSummary predict_images(const RunConfig& cfg, const RunPaths& paths, const fs::path& checkpoint,
                              const std::vector<std::string>& categories, bool overlays,
                              const std::optional<InferenceConfig>& inference) {
  std::vector<std::string> names{cfg.background};
  const auto& cats = categories.empty() ? cfg.categories : categories;
  names.insert(names.end(), cats.begin(), cats.end());
  const TextBank bank = build_text_bank(cfg, names);
  const Segmenter model = load_model(cfg, checkpoint);
  const InferenceConfig icfg = inference.value_or(cfg.inference);
  icfg.validate();
  const std::string hash = config_hash(cfg);

  fs::remove_all(paths.predictions);
  fs::create_directories(paths.predictions / "semantic");
  std::string names_txt;
  for (const auto& n : names) names_txt += n + "\n";
  write_text(paths.predictions / "categories.txt", names_txt);

  PredictSummary out;
  out.bank = names;
  std::string records;
  for (const auto& id : sorted_pngs(paths.eval_images)) {
    const Image image = read_png_rgb(paths.eval_images / (id + ".png"));
    const JointPrediction pred = predict(image, model, bank, icfg, id);
    Grid<std::uint16_t> sem(pred.semantic.labels.height(), pred.semantic.labels.width());
    for (std::size_t i = 0; i < sem.size(); ++i) sem[i] = static_cast<std::uint16_t>(pred.semantic.labels[i]);
    write_png_gray16(paths.predictions / "semantic" / (id + ".png"), sem);
    for (const auto& inst : pred.instances) {
      const RleMask rle = rle_encode(inst.mask);
      ojson j;
      j["image"] = id;
      j["category"] = names[static_cast<std::size_t>(inst.category)];
      j["confidence"] = inst.confidence;
      j["rle"] = {{"height", rle.height}, {"width", rle.width}, {"counts", rle.counts}};
      j["config"] = hash;
      records += j.dump() + "\n";
      ++out.instances;
    }
    if (overlays) {
      write_png_rgb(paths.predictions / "overlays" / (id + ".png"),
                    render_overlay(image, pred.semantic.labels, pred.instances, names));
    }
    ++out.images;
  }
  write_text(paths.predictions / "predictions.jsonl", records);
  return out;
}

std::vector<PredictionRecord> read_prediction_records(const fs::path& jsonl) {
  std::vector<PredictionRecord> out;
  std::istringstream in(read_text(jsonl));
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      PredictionRecord r;
      r.image = j.at("image").get<std::string>();
      r.category = j.at("category").get<std::string>();
      r.confidence = j.at("confidence").get<double>();
      const auto& rle = j.at("rle");
      r.mask = rle_decode(RleMask{rle.at("height").get<int>(), rle.at("width").get<int>(),
                                  rle.at("counts").get<std::vector<std::uint32_t>>()});
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw DataError(jsonl.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::string MetricsReport::to_text() const {
  std::string t = "config_hash " + config_hash + "\nimages " + std::to_string(images) + "\n";
  t += "semantic.miou " + format_float(semantic.miou) + "\n";
  for (std::size_t c = 0; c < class_names.size() && c < semantic.iou.size(); ++c) {
    t += "semantic.iou." + class_names[c] + " " + (semantic.present[c] ? format_float(semantic.iou[c]) : "absent") + "\n";
  }
  for (const auto* r : {class_aware ? &*class_aware : nullptr, class_agnostic ? &*class_agnostic : nullptr}) {
    if (!r) continue;
    const std::string p = to_string(r->mode);
    if (!r->defined) {
      t += p + ".ap undefined\n";
      continue;
    }
    t += p + ".ap " + format_float(r->ap) + "\n";
    t += p + ".ap50 " + format_float(r->ap50) + "\n";
    t += p + ".ap75 " + format_float(r->ap75) + "\n";
  }
  for (const auto& m : mismatches) t += "mismatch " + m + "\n";
  return t;
}

MetricsReport evaluate_predictions(const RunConfig& cfg, const RunPaths& paths, EvalModes modes) {
  MetricsReport rep;
  rep.config_hash = config_hash(cfg);
  const fs::path cats = paths.predictions / "categories.txt";
  {
    std::istringstream in(read_text(cats));
    for (std::string line; std::getline(in, line);) {
      if (!line.empty()) rep.class_names.push_back(line);
    }
  }
  if (rep.class_names.empty()) throw DataError(cats.string() + " lists no categories");
  const auto& names = rep.class_names;

  const auto records = read_prediction_records(paths.predictions / "predictions.jsonl");
  const auto gt_ids = list_sample_ids(paths.ground_truth);
  std::map<std::string, int> image_index;
  for (std::size_t i = 0; i < gt_ids.size(); ++i) image_index[gt_ids[i]] = static_cast<int>(i);

  std::vector<LabelMap> sem_pred, sem_gt;
  std::vector<EvalInstance> pred_inst, gt_inst;
  for (std::size_t i = 0; i < gt_ids.size(); ++i) {
    const auto& id = gt_ids[i];
    const PseudoSample gt = read_pseudo_sample(paths.ground_truth, id, names);
    for (const auto& [inst, cat] : gt.instance_categories) {
      gt_inst.push_back(EvalInstance{static_cast<int>(i), gt.instance_mask(inst), cat, 1.0});
    }
    const fs::path sp = paths.predictions / "semantic" / (id + ".png");
    if (!fs::exists(sp)) {
      rep.mismatches.push_back("no prediction for ground-truth image " + id);
      continue;
    }
    const auto sem = read_png_gray16(sp);
    if (sem.height() != gt.instance_map.height() || sem.width() != gt.instance_map.width()) {
      rep.mismatches.push_back("semantic size differs from ground truth for " + id);
      continue;
    }
    LabelMap pm(sem.height(), sem.width());
    for (std::size_t k = 0; k < sem.size(); ++k) pm[k] = sem[k];
    sem_pred.push_back(std::move(pm));
    sem_gt.push_back(gt.semantic_map());
  }
  std::set<std::string> unknown;
  for (const auto& r : records) {
    const auto it = image_index.find(r.image);
    if (it == image_index.end()) {
      unknown.insert(r.image);
      continue;
    }
    const int cat = index_in(names, r.category);
    if (cat < 0) throw DataError("prediction for " + r.image + " has unknown category " + r.category);
    pred_inst.push_back(EvalInstance{it->second, r.mask, cat, r.confidence});
  }
  for (const auto& u : unknown) rep.mismatches.push_back("prediction for unknown image " + u);
  for (const auto& id : sorted_pngs(paths.predictions / "semantic")) {
    if (!image_index.count(id) && !unknown.count(id)) rep.mismatches.push_back("prediction for unknown image " + id);
  }

  rep.images = static_cast<int>(sem_gt.size());
  rep.semantic = compute_miou(sem_pred, sem_gt, static_cast<int>(names.size()));
  if (modes != EvalModes::kClassAgnostic) rep.class_aware = compute_mask_ap(pred_inst, gt_inst, ApMode::kClassAware);
  if (modes != EvalModes::kClassAware) rep.class_agnostic = compute_mask_ap(pred_inst, gt_inst, ApMode::kClassAgnostic);

  write_text(paths.metrics, rep.to_text());
  // Precision-recall curves, one block per mode, category and IoU threshold.
  std::string pr = "# config " + rep.config_hash + "\nmode\tcategory\tiou\trecall\tprecision\n";
  for (const auto* r : {rep.class_aware ? &*rep.class_aware : nullptr,
                        rep.class_agnostic ? &*rep.class_agnostic : nullptr}) {
    if (!r) continue;
    for (const auto& c : r->curves) {
      const std::string cat = c.category < 0 ? "*" : names.at(static_cast<std::size_t>(c.category));
      for (std::size_t k = 0; k < c.precision.size(); ++k) {
        pr += to_string(r->mode) + "\t" + cat + "\t" + format_float(c.iou_threshold) + "\t" +
              format_float(static_cast<double>(k) / 100.0) + "\t" + format_float(c.precision[k]) + "\n";
      }
    }
  }
  fs::path pr_path = paths.metrics;
  pr_path.replace_filename(paths.metrics.stem().string() + "_pr.tsv");
  write_text(pr_path, pr);
  return rep;
}

DemoResult run_demo(const RunConfig& cfg, const fs::path& root, const std::function<void(const std::string&)>& say) {
  const RunPaths paths = RunPaths::under(root, cfg);
  DemoResult r;
  r.corpus = generate_shapes_corpus(cfg, paths);
  say_to(say, "corpus: " + std::to_string(r.corpus.images) + " shape images, " + std::to_string(r.corpus.blanks) +
                  " blanks, " + std::to_string(r.corpus.eval_scenes) + " eval scenes");
  r.archives = build_archives(cfg, paths);
  for (const auto& e : r.archives.entries) {
    say_to(say, "archive " + e.category + ": " + std::to_string(e.size) + " members, similarity " +
                    format_float(e.min_similarity) + " .. " + format_float(e.max_similarity));
  }
  r.pseudo = make_pseudo_labels(cfg, paths);
  say_to(say, "pseudo-labels: " + std::to_string(r.pseudo.written) + " written, " +
                  std::to_string(r.pseudo.discarded_empty) + " empty discarded");
  r.train = train_model(cfg, paths, {}, [&](const TrainLogRecord& rec) {
    say_to(say, "iter " + std::to_string(rec.iteration) + " loss " + format_float(rec.report.total));
  });
  r.predict = predict_images(cfg, paths, r.train.checkpoint);
  r.metrics = evaluate_predictions(cfg, paths, cfg.eval_mode);
  say_to(say, r.metrics.to_text());
  return r;
}

namespace {

AblationRow row_from(const std::string& setting, const MetricsReport& m) {
  AblationRow row;
  row.setting = setting;
  if (m.class_agnostic && m.class_agnostic->defined) {
    row.ap_agnostic = m.class_agnostic->ap;
    row.ap50_agnostic = m.class_agnostic->ap50;
  }
  if (m.class_aware && m.class_aware->defined) {
    row.ap_aware = m.class_aware->ap;
    row.ap50_aware = m.class_aware->ap50;
  }
  row.miou = m.semantic.miou;
  return row;
}

RunPaths variant_paths(const RunPaths& shared, const fs::path& dir) {
  RunPaths p = shared;
  p.train = dir / "train";
  p.predictions = dir / "predictions";
  p.metrics = dir / "metrics.txt";
  return p;
}

// A finished checkpoint trained under exactly this config.
bool reusable_checkpoint(const RunConfig& cfg, const fs::path& ckpt) {
  if (!fs::exists(ckpt)) return false;
  const Checkpoint c = load_checkpoint(ckpt);
  return c.config_json == to_json(cfg).dump() && c.iteration == cfg.train.iterations;
}

}  // namespace

std::vector<AblationRow> run_ablation(const RunConfig& cfg, const fs::path& root, const std::string& axis,
                                      const std::function<void(const std::string&)>& say) {
  if (axis != "stop_grad" && axis != "nms" && axis != "copy_paste" && axis != "temperature") {
    throw ArgumentError("unknown ablation axis '" + axis + "' (stop_grad, nms, copy_paste, temperature)");
  }
  const RunPaths shared = RunPaths::under(root, cfg);
  if (!fs::exists(shared.index_dir / "embeddings.f32")) generate_shapes_corpus(cfg, shared);
  build_archives(cfg, shared);
  make_pseudo_labels(cfg, shared);

  const fs::path base = root / ("ablate_" + axis);
  std::vector<AblationRow> rows;
  // Models live under <root>/models/<config hash> so axes that share a
  // configuration (every "on" setting is the base config) train it once.
  auto trained_model = [&](const RunConfig& c, const std::string& setting) {
    RunPaths p = shared;
    p.train = root / "models" / config_hash(c) / "train";
    const fs::path ckpt = p.train / "model.ckpt";
    if (reusable_checkpoint(c, ckpt)) {
      say_to(say, "reusing trained model for " + setting);
      return ckpt;
    }
    say_to(say, "training " + setting);
    return train_model(c, p).checkpoint;
  };
  auto train_eval = [&](const RunConfig& c, const std::string& tag, const std::string& setting) {
    const RunPaths p = variant_paths(shared, base / tag);
    predict_images(c, p, trained_model(c, setting));
    rows.push_back(row_from(setting, evaluate_predictions(c, p, EvalModes::kBoth)));
  };

  if (axis == "stop_grad" || axis == "copy_paste") {
    for (const bool on : {false, true}) {
      RunConfig c = cfg;
      if (axis == "stop_grad") c.model.stop_gradient = on;
      else c.copy_paste.enabled = on;
      train_eval(c, on ? "on" : "off", std::string(axis == "stop_grad" ? "stop-grad " : "copy-paste ") + (on ? "on" : "off"));
    }
  } else {
    const fs::path model = trained_model(cfg, "shared model");
    std::vector<std::pair<std::string, InferenceConfig>> settings;
    if (axis == "nms") {
      for (const bool on : {false, true}) {
        InferenceConfig ic = cfg.inference;
        ic.nms = on;
        settings.emplace_back(std::string("nms ") + (on ? "on" : "off"), ic);
      }
    } else {
      for (const double tau : {0.1, 0.5, 1.0, 5.0, 10.0}) {
        InferenceConfig ic = cfg.inference;
        ic.temperature = tau;
        settings.emplace_back("tau " + format_float(tau), ic);
      }
    }
    for (const auto& [setting, ic] : settings) {
      RunConfig c = cfg;
      c.inference = ic;
      std::string tag = setting;
      std::replace(tag.begin(), tag.end(), ' ', '_');
      const RunPaths p = variant_paths(shared, base / tag);
      predict_images(c, p, model, {}, false, ic);
      rows.push_back(row_from(setting, evaluate_predictions(c, p, EvalModes::kBoth)));
    }
  }
  write_text(root / ("ablation_" + axis + ".md"), format_ablation(axis, rows));
  return rows;
}

std::string format_ablation(const std::string& axis, const std::vector<AblationRow>& rows) {
  std::string t = "# Ablation: " + axis + "\n\n";
  t += "| setting | class-agnostic AP | class-agnostic AP50 | class-aware AP | class-aware AP50 | mIoU |\n";
  t += "|---|---|---|---|---|---|\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "| %s | %.4f | %.4f | %.4f | %.4f | %.4f |\n", r.setting.c_str(), r.ap_agnostic,
                  r.ap50_agnostic, r.ap_aware, r.ap50_aware, r.miou);
    t += buf;
  }
  return t;
}

}  // namespace zutis

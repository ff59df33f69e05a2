// Python bindings. Masks and label maps travel as 2-D numpy arrays, images as
// H x W x 3 uint8 arrays, configs as RunConfig objects built from JSON.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "zutis/config.hpp"
#include "zutis/error.hpp"
#include "zutis/evaluation.hpp"
#include "zutis/hungarian.hpp"
#include "zutis/inference.hpp"
#include "zutis/io.hpp"
#include "zutis/losses.hpp"
#include "zutis/pipeline.hpp"

namespace py = pybind11;
using namespace zutis;

namespace {

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using I32Array = py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>;
using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

template <typename T, typename A>
Grid<T> grid_from(const A& a, const char* what) {
  if (a.ndim() != 2) throw ArgumentError(std::string(what) + " must be a 2-D array");
  Grid<T> g(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), g.storage().begin());
  return g;
}

BinaryMask mask_from(const U8Array& a) {
  BinaryMask m = grid_from<std::uint8_t>(a, "mask");
  for (auto& v : m.storage()) v = v != 0;
  return m;
}

template <typename T>
py::array_t<T> to_array(const Grid<T>& g) {
  py::array_t<T> out({g.height(), g.width()});
  std::copy(g.storage().begin(), g.storage().end(), out.mutable_data());
  return out;
}

Image image_from(const U8Array& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw ArgumentError("image must be an H x W x 3 uint8 array");
  Image img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), img.bytes().begin());
  return img;
}

std::vector<double> flat(const F64Array& a) { return {a.data(), a.data() + a.size()}; }

std::vector<EvalInstance> instances_from(const py::list& items) {
  std::vector<EvalInstance> out;
  for (const auto& item : items) {
    const auto d = item.cast<py::dict>();
    EvalInstance e;
    e.image = d["image"].cast<int>();
    e.mask = mask_from(d["mask"].cast<U8Array>());
    e.category = d["category"].cast<int>();
    if (d.contains("score")) e.score = d["score"].cast<double>();
    out.push_back(std::move(e));
  }
  return out;
}

py::dict detection_dict(const DetectionEvalResult& r) {
  py::dict d;
  d["mode"] = to_string(r.mode);
  d["defined"] = r.defined;
  d["ap"] = r.ap;
  d["ap50"] = r.ap50;
  d["ap75"] = r.ap75;
  d["thresholds"] = r.thresholds;
  d["per_threshold"] = r.per_threshold;
  return d;
}

py::dict semantic_dict(const SemanticEvalResult& r) {
  py::dict d;
  d["miou"] = r.miou;
  d["iou"] = r.iou;
  d["present"] = r.present;
  return d;
}

py::dict metrics_dict(const MetricsReport& m) {
  py::dict d;
  d["config_hash"] = m.config_hash;
  d["class_names"] = m.class_names;
  d["images"] = m.images;
  d["semantic"] = semantic_dict(m.semantic);
  if (m.class_aware) d["class_aware"] = detection_dict(*m.class_aware);
  if (m.class_agnostic) d["class_agnostic"] = detection_dict(*m.class_agnostic);
  d["mismatches"] = m.mismatches;
  return d;
}

EvalModes eval_modes_from(const std::string& s) {
  if (s == "both") return EvalModes::kBoth;
  return parse_ap_mode(s) == ApMode::kClassAware ? EvalModes::kClassAware : EvalModes::kClassAgnostic;
}

}  // namespace

PYBIND11_MODULE(_zutis, m) {
  m.doc() = "Zero-shot instance and semantic segmentation from retrieved pseudo-labels";

  py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  // ------------------------------------------------------------ config
  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_static(
          "from_json", [](const std::string& text) { return run_config_from_json(nlohmann::json::parse(text)); },
          py::arg("text"))
      .def_static("load", &load_run_config, py::arg("path"))
      .def("to_json", [](const RunConfig& c) { return to_json(c).dump(2); })
      .def("hash", [](const RunConfig& c) { return config_hash(c); })
      .def_readwrite("seed", &RunConfig::seed)
      .def_readwrite("categories", &RunConfig::categories)
      .def_readwrite("archive_k", &RunConfig::archive_k)
      .def("bank_names", &RunConfig::bank_names);

  // ------------------------------------------------------------ matching and losses
  m.def(
      "hungarian_match",
      [](const F64Array& costs) {
        if (costs.ndim() != 2) throw ArgumentError("costs must be a 2-D array");
        CostMatrix c(costs.shape(0), costs.shape(1));
        for (py::ssize_t r = 0; r < costs.shape(0); ++r)
          for (py::ssize_t k = 0; k < costs.shape(1); ++k) c(r, k) = costs.at(r, k);
        return hungarian_match(c).pairs;
      },
      py::arg("costs"), "Minimum-cost (row, column) pairs, sorted by row.");

  m.def(
      "dice_loss",
      [](const F64Array& pred, const F64Array& target, double eps) {
        return dice_loss<double>(flat(pred), flat(target), eps);
      },
      py::arg("pred"), py::arg("target"), py::arg("eps") = kDiceSmoothing);
  m.def(
      "bce_mask_loss",
      [](const F64Array& pred, const F64Array& target) { return bce_mask_loss<double>(flat(pred), flat(target)); },
      py::arg("pred"), py::arg("target"));
  m.def(
      "semantic_ce_loss",
      [](const F64Array& probs, const I32Array& targets) {
        if (probs.ndim() != 2) throw ArgumentError("probs must be pixels x classes");
        const std::vector<int> t(targets.data(), targets.data() + targets.size());
        return semantic_ce_loss<double>(flat(probs), t, static_cast<int>(probs.shape(1)));
      },
      py::arg("probs"), py::arg("targets"));

  // ------------------------------------------------------------ masks and metrics
  m.def(
      "binary_iou", [](const U8Array& a, const U8Array& b) { return binary_iou(mask_from(a), mask_from(b)); },
      py::arg("a"), py::arg("b"));
  m.def(
      "rle_encode",
      [](const U8Array& mask) {
        const RleMask r = rle_encode(mask_from(mask));
        py::dict d;
        d["height"] = r.height;
        d["width"] = r.width;
        d["counts"] = r.counts;
        return d;
      },
      py::arg("mask"));
  m.def(
      "rle_decode",
      [](const py::dict& d) {
        return to_array(rle_decode(RleMask{d["height"].cast<int>(), d["width"].cast<int>(),
                                           d["counts"].cast<std::vector<std::uint32_t>>()}));
      },
      py::arg("rle"));
  m.def(
      "compute_miou",
      [](const std::vector<I32Array>& preds, const std::vector<I32Array>& gts, int num_classes) {
        std::vector<LabelMap> p, g;
        for (const auto& a : preds) p.push_back(grid_from<std::int32_t>(a, "prediction"));
        for (const auto& a : gts) g.push_back(grid_from<std::int32_t>(a, "ground truth"));
        return semantic_dict(compute_miou(p, g, num_classes));
      },
      py::arg("predictions"), py::arg("ground_truths"), py::arg("num_classes"));
  m.def(
      "compute_mask_ap",
      [](const py::list& preds, const py::list& gts, const std::string& mode) {
        return detection_dict(compute_mask_ap(instances_from(preds), instances_from(gts), parse_ap_mode(mode)));
      },
      py::arg("predictions"), py::arg("ground_truths"), py::arg("mode") = "class-aware",
      "Instances are dicts with image, mask, category and (for predictions) score.");
  m.def(
      "mask_nms",
      [](const std::vector<U8Array>& masks, const std::vector<double>& confidences, double iou_threshold) {
        if (masks.size() != confidences.size()) throw ArgumentError("masks and confidences differ in length");
        std::vector<InstancePrediction> preds;
        for (std::size_t i = 0; i < masks.size(); ++i) {
          preds.push_back({mask_from(masks[i]), static_cast<int>(i), confidences[i]});
        }
        std::stable_sort(preds.begin(), preds.end(),
                         [](const auto& a, const auto& b) { return a.confidence > b.confidence; });
        std::vector<int> kept;
        for (const auto& p : mask_nms(std::move(preds), iou_threshold)) kept.push_back(p.category);
        return kept;
      },
      py::arg("masks"), py::arg("confidences"), py::arg("iou_threshold") = 0.5,
      "Indices of the masks kept by greedy NMS, highest confidence first.");

  // ------------------------------------------------------------ pipeline stages
  auto paths = [](const RunConfig& c, const fs::path& root) { return RunPaths::under(root, c); };
  m.def(
      "generate_shapes_corpus",
      [paths](const RunConfig& c, const fs::path& root) {
        const auto s = generate_shapes_corpus(c, paths(c, root));
        return py::dict(py::arg("images") = s.images, py::arg("blanks") = s.blanks,
                        py::arg("eval_scenes") = s.eval_scenes);
      },
      py::arg("config"), py::arg("root"));
  m.def(
      "build_archives",
      [paths](const RunConfig& c, const fs::path& root) {
        py::dict sizes;
        for (const auto& e : build_archives(c, paths(c, root)).entries) sizes[py::str(e.category)] = e.size;
        return sizes;
      },
      py::arg("config"), py::arg("root"), "Archive size per category.");
  m.def(
      "make_pseudo_labels",
      [paths](const RunConfig& c, const fs::path& root) {
        const auto s = make_pseudo_labels(c, paths(c, root));
        return py::dict(py::arg("written") = s.written, py::arg("discarded_empty") = s.discarded_empty,
                        py::arg("missing") = s.missing);
      },
      py::arg("config"), py::arg("root"));
  m.def(
      "train",
      [paths](const RunConfig& c, const fs::path& root, std::optional<fs::path> resume) {
        py::gil_scoped_release release;
        return train_model(c, paths(c, root), resume).checkpoint;
      },
      py::arg("config"), py::arg("root"), py::arg("resume") = std::nullopt, "Returns the final checkpoint path.");
  m.def(
      "predict",
      [paths](const RunConfig& c, const fs::path& root, std::optional<fs::path> checkpoint,
              const std::vector<std::string>& categories) {
        const RunPaths p = paths(c, root);
        const auto s = predict_images(c, p, checkpoint.value_or(p.train / "model.ckpt"), categories);
        return py::dict(py::arg("images") = s.images, py::arg("instances") = s.instances, py::arg("bank") = s.bank);
      },
      py::arg("config"), py::arg("root"), py::arg("checkpoint") = std::nullopt,
      py::arg("categories") = std::vector<std::string>{});
  m.def(
      "evaluate",
      [paths](const RunConfig& c, const fs::path& root, const std::string& mode) {
        return metrics_dict(evaluate_predictions(c, paths(c, root), eval_modes_from(mode)));
      },
      py::arg("config"), py::arg("root"), py::arg("mode") = "both");
  m.def(
      "run_demo",
      [](const RunConfig& c, const fs::path& root) {
        MetricsReport r;
        {
          py::gil_scoped_release release;
          r = run_demo(c, root).metrics;
        }
        return metrics_dict(r);
      },
      py::arg("config"), py::arg("root"), "Whole shapes pipeline; returns the metrics.");
  m.def(
      "run_ablation",
      [](const RunConfig& c, const fs::path& root, const std::string& axis) {
        std::vector<AblationRow> rows;
        {
          py::gil_scoped_release release;
          rows = run_ablation(c, root, axis);
        }
        py::list out;
        for (const auto& r : rows) {
          out.append(py::dict(py::arg("setting") = r.setting, py::arg("ap_agnostic") = r.ap_agnostic,
                              py::arg("ap50_agnostic") = r.ap50_agnostic, py::arg("ap_aware") = r.ap_aware,
                              py::arg("ap50_aware") = r.ap50_aware, py::arg("miou") = r.miou));
        }
        return out;
      },
      py::arg("config"), py::arg("root"), py::arg("axis"));

  // ------------------------------------------------------------ single-image inference
  m.def(
      "predict_image",
      [](const RunConfig& c, const fs::path& checkpoint, const U8Array& image,
         const std::vector<std::string>& categories) {
        std::vector<std::string> names{c.background};
        const auto& cats = categories.empty() ? c.categories : categories;
        names.insert(names.end(), cats.begin(), cats.end());
        const TextBank bank = build_text_bank(c, names);
        const Segmenter model = load_model(c, checkpoint);
        const JointPrediction p = predict(image_from(image), model, bank, c.inference);
        py::list instances;
        for (const auto& inst : p.instances) {
          instances.append(py::dict(py::arg("mask") = to_array(inst.mask),
                                    py::arg("category") = names[static_cast<std::size_t>(inst.category)],
                                    py::arg("confidence") = inst.confidence));
        }
        return py::make_tuple(to_array(p.semantic.labels), names, instances);
      },
      py::arg("config"), py::arg("checkpoint"), py::arg("image"), py::arg("categories") = std::vector<std::string>{},
      "Returns (label map, bank names, instances).");
}

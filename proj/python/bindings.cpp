#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "instseg/assembly.hpp"
#include "instseg/eval.hpp"
#include "instseg/losses.hpp"
#include "instseg/net.hpp"
#include "instseg/synthdata.hpp"
#include "instseg/tensor_io.hpp"
#include "instseg/trainer.hpp"

namespace py = pybind11;
using namespace instseg;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  std::vector<int> dims;
  for (py::ssize_t i = 0; i < a.ndim(); ++i) dims.push_back(static_cast<int>(a.shape(i)));
  std::vector<double> data(a.data(), a.data() + a.size());
  return Tensor(std::move(dims), std::move(data));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape;
  for (int d : t.dims()) shape.push_back(d);
  py::array_t<double> a(shape);
  std::copy(t.data(), t.data() + t.size(), a.mutable_data());
  return a;
}

LabelMap labels_from_array(const py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw std::invalid_argument("label map must be 2-d");
  LabelMap m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.values.begin());
  return m;
}

py::array_t<std::int32_t> array_from_labels(const LabelMap& m) {
  py::array_t<std::int32_t> a({static_cast<py::ssize_t>(m.height), static_cast<py::ssize_t>(m.width)});
  std::copy(m.values.begin(), m.values.end(), a.mutable_data());
  return a;
}

Box box_from_tuple(const std::array<double, 4>& b) { return Box{b[0], b[1], b[2], b[3]}; }

py::dict hypothesis_to_dict(const InstanceHypothesis& hyp) {
  py::dict d;
  d["category"] = hyp.category;
  d["confidence"] = hyp.confidence;
  d["box"] = py::make_tuple(hyp.box.y_min, hyp.box.x_min, hyp.box.y_max, hyp.box.x_max);
  d["mask"] = array_from_tensor(hyp.mask_tensor());
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Segmentation-first instance segmentation toolkit";

  m.def("compute_fov", &compute_fov, py::arg("output_stride"), py::arg("kernel"),
        py::arg("dilation"), "Classifier field-of-view in input pixels");

  m.def("fov_table", [] {
    py::list rows;
    for (const FovTableRow& r : fov_reference_rows()) {
      rows.append(py::make_tuple(r.depth, r.output_stride, r.kernel, r.dilation, r.fov));
    }
    return rows;
  });

  m.def(
      "box_iou",
      [](const std::array<double, 4>& a, const std::array<double, 4>& b) {
        return box_iou(box_from_tuple(a), box_from_tuple(b));
      },
      py::arg("a"), py::arg("b"), "IoU of two (y0, x0, y1, x1) boxes");

  m.def(
      "softmax_channels",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& logits) {
        return array_from_tensor(softmax_channels(tensor_from_array(logits)));
      },
      py::arg("logits"));

  m.def(
      "argmax_channels",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& scores) {
        return array_from_labels(argmax_channels(tensor_from_array(scores)));
      },
      py::arg("scores"));

  m.def("smoothed_l1", &smoothed_l1, py::arg("x"));

  m.def(
      "bootstrapped_cross_entropy",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& probs,
         const py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>& labels,
         double t0, int min_kept) {
        const Tensor p = tensor_from_array(probs);
        const LabelMap l = labels_from_array(labels);
        const BootstrapConfig cfg{t0, min_kept, 0.7};
        const PixelSelection sel = select_hard_semantic(p, l, cfg);
        const SemanticLossResult r = bootstrapped_cross_entropy(
            std::span<const Tensor>(&p, 1), std::span<const LabelMap>(&l, 1), sel);
        py::dict out;
        out["loss"] = r.loss;
        out["t_eff"] = sel.t_eff;
        out["kept"] = sel.count();
        out["grad_logits"] = array_from_tensor(r.grad_logits[0]);
        return out;
      },
      py::arg("probs"), py::arg("labels"), py::arg("t0") = 0.6, py::arg("min_kept") = 512,
      "Bootstrapped pixel cross-entropy over one crop");

  m.def(
      "run_instance_pipeline",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& probs,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& transforms,
         int stride, int top_n, double box_nms_iou, double region_nms_iou,
         int min_cluster_pixels) {
        PipelineConfig cfg;
        cfg.top_n = top_n;
        cfg.box_nms_iou = box_nms_iou;
        cfg.region_nms_iou = region_nms_iou;
        cfg.min_cluster_pixels = min_cluster_pixels;
        const auto hyps =
            run_instance_pipeline(tensor_from_array(probs), tensor_from_array(transforms), stride, cfg);
        py::list out;
        for (const auto& hyp : hyps) out.append(hypothesis_to_dict(hyp));
        return out;
      },
      py::arg("probs"), py::arg("transforms"), py::arg("stride") = 1, py::arg("top_n") = 2,
      py::arg("box_nms_iou") = 0.3, py::arg("region_nms_iou") = 0.5,
      py::arg("min_cluster_pixels") = 4,
      "Score maps + transform maps -> instance hypotheses");

  m.def(
      "semantic_metrics",
      [](const py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>& pred,
         const py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>& gt,
         int classes) {
        const SemanticMetrics s = semantic_metrics(labels_from_array(pred), labels_from_array(gt), classes);
        py::dict out;
        out["pixel_acc"] = s.pixel_acc;
        out["mean_acc"] = s.mean_acc;
        out["mean_iou"] = s.mean_iou;
        return out;
      },
      py::arg("pred"), py::arg("gt"), py::arg("classes"));

  m.def(
      "average_precision",
      [](const std::vector<std::pair<double, bool>>& ranked, int num_gt) {
        CategoryMatches cm;
        cm.category = 1;
        cm.num_gt = num_gt;
        for (const auto& [conf, tp] : ranked) cm.entries.push_back({conf, tp, 0.0});
        std::stable_sort(cm.entries.begin(), cm.entries.end(),
                         [](const MatchEntry& a, const MatchEntry& b) {
                           return a.confidence > b.confidence;
                         });
        return average_precision(cm);
      },
      py::arg("ranked"), py::arg("num_gt"),
      "All-point interpolated AP from (confidence, is_tp) pairs");

  m.def(
      "generate_sample",
      [](int height, int width, int categories, int min_instances, int max_instances, int min_size,
         int max_size, const std::vector<double>& class_skew, std::uint64_t seed, int index) {
        SceneConfig cfg;
        cfg.image_height = height;
        cfg.image_width = width;
        cfg.num_categories = categories;
        cfg.min_instances = min_instances;
        cfg.max_instances = max_instances;
        cfg.min_size = min_size;
        cfg.max_size = max_size;
        cfg.class_skew = class_skew;
        cfg.seed = seed;
        const Sample s = generate_sample(cfg, index);
        py::dict out;
        out["image"] = array_from_tensor(s.image);
        out["semantic"] = array_from_labels(s.semantic);
        out["instances"] = array_from_labels(s.instances);
        py::list records;
        for (const InstanceRecord& r : s.records) {
          py::dict rec;
          rec["id"] = r.id;
          rec["category"] = r.category;
          rec["box"] = py::make_tuple(r.box.y_min, r.box.x_min, r.box.y_max, r.box.x_max);
          records.append(rec);
        }
        out["records"] = records;
        return out;
      },
      py::arg("height") = 64, py::arg("width") = 64, py::arg("categories") = 3,
      py::arg("min_instances") = 2, py::arg("max_instances") = 5, py::arg("min_size") = 8,
      py::arg("max_size") = 28, py::arg("class_skew") = std::vector<double>{},
      py::arg("seed") = 1, py::arg("index") = 0);

  m.def("generate_dataset",
        [](int height, int width, int categories, int min_instances, int max_instances,
           int min_size, int max_size, const std::vector<double>& class_skew, std::uint64_t seed,
           int count, const std::string& out_dir) {
          SceneConfig cfg;
          cfg.image_height = height;
          cfg.image_width = width;
          cfg.num_categories = categories;
          cfg.min_instances = min_instances;
          cfg.max_instances = max_instances;
          cfg.min_size = min_size;
          cfg.max_size = max_size;
          cfg.class_skew = class_skew;
          cfg.seed = seed;
          const Manifest m2 = generate_dataset(cfg, count, out_dir);
          return m2.samples.size();
        },
        py::arg("height"), py::arg("width"), py::arg("categories"), py::arg("min_instances"),
        py::arg("max_instances"), py::arg("min_size"), py::arg("max_size"),
        py::arg("class_skew"), py::arg("seed"), py::arg("count"), py::arg("out_dir"));

  m.def(
      "read_tensor",
      [](const std::string& path) { return array_from_tensor(read_tensor(path)); },
      py::arg("path"));
  m.def(
      "write_tensor",
      [](const std::string& path,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
        write_tensor(path, tensor_from_array(a));
      },
      py::arg("path"), py::arg("array"));

  m.def(
      "train_semantic",
      [](const std::string& config_json, const std::string& out_dir) {
        const TrainResult r = train_semantic(TrainConfig::from_json_string(config_json), out_dir);
        return r.log.empty() ? 0.0 : r.log.back().loss;
      },
      py::arg("config_json"), py::arg("out_dir"), "Returns the final training loss");
  m.def(
      "train_localization",
      [](const std::string& config_json, const std::string& out_dir) {
        const TrainResult r =
            train_localization(TrainConfig::from_json_string(config_json), out_dir);
        return r.log.empty() ? 0.0 : r.log.back().loss;
      },
      py::arg("config_json"), py::arg("out_dir"));

  m.def(
      "eval_semantic",
      [](const std::string& manifest, const std::string& checkpoint, const std::string& upsample) {
        const Network net = Network::load_checkpoint(checkpoint);
        const SemanticMetrics s = eval_semantic_dataset(net, load_dataset(manifest), upsample);
        py::dict out;
        out["pixel_acc"] = s.pixel_acc;
        out["mean_acc"] = s.mean_acc;
        out["mean_iou"] = s.mean_iou;
        return out;
      },
      py::arg("manifest"), py::arg("checkpoint"), py::arg("upsample") = "nearest");

  m.def(
      "eval_instances",
      [](const std::string& manifest, const std::string& semantic_checkpoint,
         const std::string& loc_checkpoint, bool oracle_semantic, int top_n, double box_nms_iou,
         double region_nms_iou, int min_cluster_pixels, const std::string& upsample) {
        const Dataset data = load_dataset(manifest);
        EndToEndOptions options;
        options.pipeline.top_n = top_n;
        options.pipeline.box_nms_iou = box_nms_iou;
        options.pipeline.region_nms_iou = region_nms_iou;
        options.pipeline.min_cluster_pixels = min_cluster_pixels;
        options.oracle_semantic = oracle_semantic;
        options.upsample = upsample;
        std::optional<Network> semantic;
        if (!oracle_semantic) semantic = Network::load_checkpoint(semantic_checkpoint);
        const Network loc = Network::load_checkpoint(loc_checkpoint);
        const EndToEndResult r = run_end_to_end(semantic ? &*semantic : nullptr, loc, data, options);
        py::dict out;
        out["map_r_0.5"] = r.metrics.map50;
        out["map_r_0.7"] = r.metrics.map70;
        out["map_r_vol"] = r.metrics.map_vol;
        out["images"] = r.images;
        out["predictions"] = r.predictions;
        return out;
      },
      py::arg("manifest"), py::arg("semantic_checkpoint") = std::string(),
      py::arg("loc_checkpoint") = std::string(), py::arg("oracle_semantic") = false,
      py::arg("top_n") = 2, py::arg("box_nms_iou") = 0.3, py::arg("region_nms_iou") = 0.5,
      py::arg("min_cluster_pixels") = 4, py::arg("upsample") = "nearest");

#ifdef INSTSEG_VERSION
  m.attr("__version__") = INSTSEG_VERSION;
#else
  m.attr("__version__") = "dev";
#endif
}

#include "instseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace instseg {

void TrainConfig::validate() const {
  network.validate();
  if (crops_per_batch < 1) throw std::invalid_argument("train: crops_per_batch must be >= 1");
  if (crop_size < network.target_output_stride) {
    throw std::invalid_argument("train: crop size must be >= network output stride");
  }
  if (iterations < 1) throw std::invalid_argument("train: iterations must be >= 1");
  if (loss_resolution != "input" && loss_resolution != "output") {
    throw std::invalid_argument("train: loss_resolution must be 'input' or 'output'");
  }
  if (optimizer.lr_schedule != "poly" && optimizer.lr_schedule != "step") {
    throw std::invalid_argument("train: lr_schedule must be 'poly' or 'step'");
  }
  if (bootstrap.enabled) bootstrap.to_config().validate();
}

TrainConfig TrainConfig::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("train config is not valid JSON: ") + e.what());
  }
  TrainConfig c;
  c.network = Network::config_from_json_string(j.at("network").dump());
  if (j.contains("bootstrap")) {
    const auto& b = j.at("bootstrap");
    c.bootstrap.enabled = b.value("enabled", true);
    c.bootstrap.t0 = b.value("t0", c.bootstrap.t0);
    c.bootstrap.min_kept = b.value("min_kept", c.bootstrap.min_kept);
    c.bootstrap.iou_threshold = b.value("iou_threshold", c.bootstrap.iou_threshold);
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    c.optimizer.lr = o.value("lr", c.optimizer.lr);
    c.optimizer.momentum = o.value("momentum", c.optimizer.momentum);
    c.optimizer.weight_decay = o.value("weight_decay", c.optimizer.weight_decay);
    c.optimizer.grad_clip = o.value("grad_clip", c.optimizer.grad_clip);
    c.optimizer.lr_schedule = o.value("lr_schedule", c.optimizer.lr_schedule);
  }
  c.crops_per_batch = j.value("crops_per_batch", c.crops_per_batch);
  c.crop_size = j.value("crop_size", c.crop_size);
  c.iterations = j.value("iterations", c.iterations);
  c.seed = j.value("seed", c.seed);
  c.manifest = j.value("manifest", std::string());
  c.loss_resolution = j.value("loss_resolution", c.loss_resolution);
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open train config " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json_string(text);
}

std::string TrainConfig::to_json_string() const {
  json j;
  j["network"] = json::parse(Network::config_to_json(network));
  j["bootstrap"] = {{"enabled", bootstrap.enabled},
                    {"t0", bootstrap.t0},
                    {"min_kept", bootstrap.min_kept},
                    {"iou_threshold", bootstrap.iou_threshold}};
  j["optimizer"] = {{"lr", optimizer.lr},
                    {"momentum", optimizer.momentum},
                    {"weight_decay", optimizer.weight_decay},
                    {"grad_clip", optimizer.grad_clip},
                    {"lr_schedule", optimizer.lr_schedule}};
  j["crops_per_batch"] = crops_per_batch;
  j["crop_size"] = crop_size;
  j["iterations"] = iterations;
  j["seed"] = seed;
  j["manifest"] = manifest;
  j["loss_resolution"] = loss_resolution;
  return j.dump(2);
}

Dataset load_dataset(const std::string& manifest_path) {
  const Manifest manifest = load_manifest(manifest_path);
  const std::string base = fs::path(manifest_path).parent_path().string();
  Dataset data;
  data.config = manifest.config;
  data.samples.reserve(manifest.samples.size());
  for (const auto& entry : manifest.samples) {
    data.samples.push_back(load_sample(entry, base));
  }
  return data;
}

namespace {

struct CropView {
  Tensor image;
  LabelMap semantic;
  LabelMap instances;
  std::vector<InstanceRecord> records;  // boxes in crop coordinates
};

CropView make_crop(const Sample& s, int y0, int x0, int size, bool flip) {
  CropView crop;
  crop.image = Tensor({3, size, size});
  crop.semantic = LabelMap(size, size);
  crop.instances = LabelMap(size, size);
  for (int y = 0; y < size; ++y) {
    const int sy = y0 + y;
    for (int x = 0; x < size; ++x) {
      const int sx = flip ? x0 + size - 1 - x : x0 + x;
      for (int c = 0; c < 3; ++c) crop.image.at(c, y, x) = s.image.at(c, sy, sx);
      crop.semantic.at(y, x) = s.semantic.at(sy, sx);
      crop.instances.at(y, x) = s.instances.at(sy, sx);
    }
  }
  crop.records = s.records;
  for (InstanceRecord& r : crop.records) {
    r.box.y_min -= y0;
    r.box.y_max -= y0;
    if (flip) {
      const double new_min = x0 + size - r.box.x_max;
      const double new_max = x0 + size - r.box.x_min;
      r.box.x_min = new_min;
      r.box.x_max = new_max;
    } else {
      r.box.x_min -= x0;
      r.box.x_max -= x0;
    }
  }
  return crop;
}

double schedule_lr(const OptimizerConfig& opt, int step, int iterations) {
  if (opt.lr_schedule == "step") {
    return step * 3 >= iterations * 2 ? opt.lr * 0.1 : opt.lr;
  }
  const double progress = static_cast<double>(step) / iterations;
  return opt.lr * std::pow(1.0 - progress, 0.9);
}

LabelMap downsample_labels(const LabelMap& labels, int stride, int out_h, int out_w) {
  LabelMap out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const int sy = std::min(labels.height - 1, y * stride + stride / 2);
    for (int x = 0; x < out_w; ++x) {
      const int sx = std::min(labels.width - 1, x * stride + stride / 2);
      out.at(y, x) = labels.at(sy, sx);
    }
  }
  return out;
}

struct CropPick {
  int sample, y0, x0;
  bool flip;
};

CropPick pick_crop(Rng& rng, const Dataset& data, int crop_size) {
  const int index = static_cast<int>(rng.uniform_int(0, static_cast<int>(data.samples.size()) - 1));
  const Sample& s = data.samples[static_cast<size_t>(index)];
  const int h = s.semantic.height, w = s.semantic.width;
  if (h < crop_size || w < crop_size) {
    throw std::invalid_argument("train: crop size exceeds image size");
  }
  const int y0 = static_cast<int>(rng.uniform_int(0, h - crop_size));
  const int x0 = static_cast<int>(rng.uniform_int(0, w - crop_size));
  return {index, y0, x0, rng.bernoulli(0.5)};
}

void finalize_training(const TrainConfig& cfg, Network& net, std::vector<TrainLogRow> log,
                       const std::string& out_dir, TrainResult& result) {
  net.save_checkpoint(out_dir);
  std::ofstream cfg_out(fs::path(out_dir) / "train_config.json", std::ios::trunc);
  cfg_out << cfg.to_json_string() << "\n";
  write_train_log_csv((fs::path(out_dir) / "log.csv").string(), log);
  result.log = std::move(log);
  result.checkpoint_dir = out_dir;
}

}  // namespace

TrainResult train_semantic(const TrainConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  if (cfg.network.head != HeadKind::kSemantic) {
    throw std::invalid_argument("train_semantic: config head must be semantic");
  }
  const Dataset data = load_dataset(cfg.manifest);
  if (data.samples.empty()) throw std::invalid_argument("train_semantic: empty dataset");
  if (data.config.num_categories != cfg.network.num_categories) {
    throw std::invalid_argument("train_semantic: dataset has " +
                                std::to_string(data.config.num_categories) +
                                " categories, network expects " +
                                std::to_string(cfg.network.num_categories));
  }

  Network net(cfg.network);
  Rng rng(cfg.seed);
  net.init_params(rng);
  SgdOptimizer opt(net);
  const int stride = net.output_stride();
  const bool input_res = cfg.loss_resolution == "input";
  const BootstrapConfig bootstrap = cfg.bootstrap.to_config();

  std::vector<TrainLogRow> log;
  TrainResult result;
  for (int step = 0; step < cfg.iterations; ++step) {
    const double lr = schedule_lr(cfg.optimizer, step, cfg.iterations);
    net.zero_grads();
    std::vector<ForwardCache> caches(static_cast<size_t>(cfg.crops_per_batch));
    std::vector<Tensor> logits(static_cast<size_t>(cfg.crops_per_batch));
    std::vector<Tensor> probs;
    std::vector<LabelMap> labels;
    for (int b = 0; b < cfg.crops_per_batch; ++b) {
      const CropPick pick = pick_crop(rng, data, cfg.crop_size);
      const CropView crop = make_crop(data.samples[static_cast<size_t>(pick.sample)], pick.y0,
                                      pick.x0, cfg.crop_size, pick.flip);
      logits[static_cast<size_t>(b)] = net.forward(crop.image, caches[static_cast<size_t>(b)]);
      const Tensor& raw = logits[static_cast<size_t>(b)];
      if (input_res) {
        probs.push_back(softmax_channels(
            upsample_bilinear(raw, stride, crop.semantic.height, crop.semantic.width)));
        labels.push_back(crop.semantic);
      } else {
        probs.push_back(softmax_channels(raw));
        labels.push_back(downsample_labels(crop.semantic, stride, raw.dim(1), raw.dim(2)));
      }
    }
    const PixelSelection selection = select_hard_semantic(probs, labels, bootstrap);
    const SemanticLossResult loss = bootstrapped_cross_entropy(probs, labels, selection);
    if (!std::isfinite(loss.loss)) {
      throw std::runtime_error("train_semantic: loss diverged at step " + std::to_string(step));
    }
    for (int b = 0; b < cfg.crops_per_batch; ++b) {
      Tensor g = loss.grad_logits[static_cast<size_t>(b)];
      if (input_res) {
        g = upsample_bilinear_backward(g, stride, logits[static_cast<size_t>(b)].dim(1),
                                       logits[static_cast<size_t>(b)].dim(2));
      }
      net.backward(caches[static_cast<size_t>(b)], g);
    }
    opt.step(lr, cfg.optimizer.momentum, cfg.optimizer.weight_decay, cfg.optimizer.grad_clip);
    log.push_back({step, lr, loss.loss, selection.t_eff, selection.count()});
  }
  finalize_training(cfg, net, std::move(log), out_dir, result);
  return result;
}

LocTargets build_loc_targets(const LabelMap& instances, const std::vector<InstanceRecord>& records,
                             int num_categories, int encode_stride, int cell, int out_h,
                             int out_w) {
  LocTargets t;
  t.maps = Tensor({4 * num_categories, out_h, out_w});
  t.category = LabelMap(out_h, out_w, 0);
  t.instance = LabelMap(out_h, out_w, 0);
  t.cell = cell;
  t.encode_stride = encode_stride;
  int max_id = 0;
  for (const InstanceRecord& r : records) max_id = std::max(max_id, r.id);
  t.boxes_by_id.assign(static_cast<size_t>(max_id), Box{});
  std::vector<int> category_by_id(static_cast<size_t>(max_id) + 1, 0);
  for (const InstanceRecord& r : records) {
    t.boxes_by_id[static_cast<size_t>(r.id - 1)] = r.box;
    category_by_id[static_cast<size_t>(r.id)] = r.category;
  }
  for (int y = 0; y < out_h; ++y) {
    const int sy = std::min(instances.height - 1, y * cell + cell / 2);
    for (int x = 0; x < out_w; ++x) {
      const int sx = std::min(instances.width - 1, x * cell + cell / 2);
      const int id = instances.at(sy, sx);
      if (id <= 0) continue;
      const int category = category_by_id[static_cast<size_t>(id)];
      if (category <= 0 || category > num_categories) {
        throw std::invalid_argument("build_loc_targets: instance with invalid category");
      }
      const Box& box = t.boxes_by_id[static_cast<size_t>(id - 1)];
      const LocTarget enc =
          encode_loc(box, (y + 0.5) * cell, (x + 0.5) * cell, encode_stride);
      const int base = 4 * (category - 1);
      t.maps.at(base + 0, y, x) = enc.dy;
      t.maps.at(base + 1, y, x) = enc.dx;
      t.maps.at(base + 2, y, x) = enc.log_h;
      t.maps.at(base + 3, y, x) = enc.log_w;
      t.category.at(y, x) = category;
      t.instance.at(y, x) = id;
    }
  }
  return t;
}

TrainResult train_localization(const TrainConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  if (cfg.network.head != HeadKind::kLocalization) {
    throw std::invalid_argument("train_localization: config head must be localization");
  }
  const Dataset data = load_dataset(cfg.manifest);
  if (data.samples.empty()) throw std::invalid_argument("train_localization: empty dataset");
  bool any_foreground = false;
  for (const Sample& s : data.samples) any_foreground |= !s.records.empty();
  if (!any_foreground) throw std::invalid_argument("train_localization: no foreground pixels");

  Network net(cfg.network);
  Rng rng(cfg.seed);
  net.init_params(rng);
  SgdOptimizer opt(net);
  const int stride = net.output_stride();
  const int num_categories = cfg.network.num_categories;
  const BootstrapConfig bootstrap = cfg.bootstrap.to_config();

  // "input" resolution supervises every instance pixel through the
  // nearest-upsampled maps, matching how the pipeline decodes at test time;
  // "output" supervises only cells whose center pixel is foreground.
  const bool input_res = cfg.loss_resolution == "input";
  std::vector<TrainLogRow> log;
  TrainResult result;
  for (int step = 0; step < cfg.iterations; ++step) {
    const double lr = schedule_lr(cfg.optimizer, step, cfg.iterations);
    net.zero_grads();
    std::vector<ForwardCache> caches(static_cast<size_t>(cfg.crops_per_batch));
    std::vector<Tensor> raw(static_cast<size_t>(cfg.crops_per_batch));
    std::vector<Tensor> preds;
    std::vector<LocTargets> targets;
    for (int b = 0; b < cfg.crops_per_batch; ++b) {
      const CropPick pick = pick_crop(rng, data, cfg.crop_size);
      const CropView crop = make_crop(data.samples[static_cast<size_t>(pick.sample)], pick.y0,
                                      pick.x0, cfg.crop_size, pick.flip);
      Tensor out = net.forward(crop.image, caches[static_cast<size_t>(b)]);
      raw[static_cast<size_t>(b)] = out;
      if (input_res) {
        targets.push_back(build_loc_targets(crop.instances, crop.records, num_categories, stride,
                                            1, crop.instances.height, crop.instances.width));
        preds.push_back(
            upsample_nearest(out, stride, crop.instances.height, crop.instances.width));
      } else {
        targets.push_back(build_loc_targets(crop.instances, crop.records, num_categories, stride,
                                            stride, out.dim(1), out.dim(2)));
        preds.push_back(std::move(out));
      }
    }
    const PixelSelection selection = select_hard_localization(preds, targets, bootstrap);
    const LocalizationLossResult loss = localization_loss(preds, targets, selection);
    if (!std::isfinite(loss.loss)) {
      throw std::runtime_error("train_localization: loss diverged at step " + std::to_string(step));
    }
    for (int b = 0; b < cfg.crops_per_batch; ++b) {
      Tensor g = loss.grad_maps[static_cast<size_t>(b)];
      if (input_res) {
        g = upsample_nearest_backward(g, stride, raw[static_cast<size_t>(b)].dim(1),
                                      raw[static_cast<size_t>(b)].dim(2));
      }
      net.backward(caches[static_cast<size_t>(b)], g);
    }
    opt.step(lr, cfg.optimizer.momentum, cfg.optimizer.weight_decay, cfg.optimizer.grad_clip);
    log.push_back({step, lr, loss.loss, selection.t_eff, selection.count()});
  }
  finalize_training(cfg, net, std::move(log), out_dir, result);
  return result;
}

Tensor infer_semantic(const Network& net, const Tensor& image, const std::string& upsample) {
  if (net.config().head != HeadKind::kSemantic) {
    throw std::invalid_argument("infer_semantic: checkpoint has a localization head");
  }
  const Tensor logits = net.forward(image);
  const int stride = net.output_stride();
  Tensor up;
  if (upsample == "nearest") {
    up = upsample_nearest(logits, stride, image.dim(1), image.dim(2));
  } else if (upsample == "bilinear") {
    up = upsample_bilinear(logits, stride, image.dim(1), image.dim(2));
  } else {
    throw std::invalid_argument("infer_semantic: unknown upsample mode '" + upsample + "'");
  }
  return softmax_channels(up);
}

Tensor infer_localization(const Network& net, const Tensor& image) {
  if (net.config().head != HeadKind::kLocalization) {
    throw std::invalid_argument("infer_localization: checkpoint has a semantic head");
  }
  return net.forward(image);
}

Tensor oracle_probs(const LabelMap& semantic, int num_categories) {
  Tensor probs({num_categories + 1, semantic.height, semantic.width});
  for (int y = 0; y < semantic.height; ++y) {
    for (int x = 0; x < semantic.width; ++x) {
      const int label = std::clamp(semantic.at(y, x), 0, num_categories);
      probs.at(label, y, x) = 1.0;
    }
  }
  return probs;
}

std::vector<EvalInstance> dataset_ground_truth(const Dataset& data) {
  std::vector<EvalInstance> gts;
  for (size_t i = 0; i < data.samples.size(); ++i) {
    const Sample& s = data.samples[i];
    std::vector<EvalInstance> by_id(s.records.size());
    for (const InstanceRecord& r : s.records) {
      EvalInstance& e = by_id[static_cast<size_t>(r.id - 1)];
      e.image = static_cast<int>(i);
      e.category = r.category;
    }
    for (int y = 0; y < s.instances.height; ++y) {
      for (int x = 0; x < s.instances.width; ++x) {
        const int id = s.instances.at(y, x);
        if (id > 0) by_id[static_cast<size_t>(id - 1)].pixels.push_back(y * s.instances.width + x);
      }
    }
    for (auto& e : by_id) gts.push_back(std::move(e));
  }
  return gts;
}

EndToEndResult run_end_to_end(const Network* semantic, const Network& localization,
                              const Dataset& data, const EndToEndOptions& options) {
  if (!options.oracle_semantic && semantic == nullptr) {
    throw std::invalid_argument("run_end_to_end: need a semantic network or oracle mode");
  }
  const int num_categories = data.config.num_categories;
  std::vector<EvalInstance> preds;
  int total_hyps = 0;
  for (size_t i = 0; i < data.samples.size(); ++i) {
    const Sample& s = data.samples[i];
    const Tensor probs = options.oracle_semantic
                             ? oracle_probs(s.semantic, num_categories)
                             : infer_semantic(*semantic, s.image, options.upsample);
    const Tensor tmaps = infer_localization(localization, s.image);
    const std::vector<InstanceHypothesis> hyps =
        run_instance_pipeline(probs, tmaps, localization.output_stride(), options.pipeline);
    if (!options.artifact_dir.empty()) {
      char stem[32];
      std::snprintf(stem, sizeof(stem), "image_%05zu", i);
      write_hypotheses(options.artifact_dir, stem, hyps);
    }
    for (const InstanceHypothesis& hyp : hyps) {
      EvalInstance e;
      e.image = static_cast<int>(i);
      e.category = hyp.category;
      e.confidence = hyp.confidence;
      e.pixels = hyp.cluster;
      preds.push_back(std::move(e));
      ++total_hyps;
    }
  }
  const std::vector<EvalInstance> gts = dataset_ground_truth(data);
  EndToEndResult result;
  result.images = static_cast<int>(data.samples.size());
  result.predictions = total_hyps;
  result.ground_truth = static_cast<int>(gts.size());
  // An empty manifest yields an empty report rather than an error.
  if (result.images > 0) result.metrics = instance_metrics(preds, gts, num_categories);
  return result;
}

SemanticMetrics eval_semantic_dataset(const Network& net, const Dataset& data,
                                      const std::string& upsample) {
  ConfusionMatrix cm(data.config.num_categories + 1);
  for (const Sample& s : data.samples) {
    const Tensor probs = infer_semantic(net, s.image, upsample);
    cm.accumulate(argmax_channels(probs), s.semantic);
  }
  return semantic_metrics(cm);
}

void write_train_log_csv(const std::string& path, const std::vector<TrainLogRow>& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write training log " + path);
  out << "step,lr,loss,t_eff,kept\n";
  char line[160];
  for (const TrainLogRow& row : log) {
    std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%.17g,%lld\n", row.step, row.lr, row.loss,
                  row.t_eff, static_cast<long long>(row.kept));
    out << line;
  }
}

}  // namespace instseg

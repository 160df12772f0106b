#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "instseg/assembly.hpp"
#include "instseg/eval.hpp"
#include "instseg/net.hpp"
#include "instseg/synthdata.hpp"
#include "instseg/tensor_io.hpp"
#include "instseg/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace instseg;

namespace {

struct SynthArgs {
  std::string out;
  int count = 100;
  std::uint64_t seed = 1;
  int height = 64, width = 64, categories = 3;
  int min_instances = 2, max_instances = 5;
  int min_size = 8, max_size = 28;
  std::string skew;
};

SceneConfig scene_from_args(const SynthArgs& a) {
  SceneConfig c;
  c.image_height = a.height;
  c.image_width = a.width;
  c.num_categories = a.categories;
  c.min_instances = a.min_instances;
  c.max_instances = a.max_instances;
  c.min_size = a.min_size;
  c.max_size = a.max_size;
  c.seed = a.seed;
  if (!a.skew.empty()) {
    std::stringstream ss(a.skew);
    std::string item;
    while (std::getline(ss, item, ',')) c.class_skew.push_back(std::stod(item));
  }
  return c;
}

int cmd_synth(const SynthArgs& args) {
  const Manifest m = generate_dataset(scene_from_args(args), args.count, args.out);
  std::printf("wrote %zu samples to %s\n", m.samples.size(),
              (fs::path(args.out) / "manifest.json").string().c_str());
  return 0;
}

TrainConfig load_train_config(const std::string& path, const std::string& manifest_override,
                              std::int64_t seed_override, int min_kept_override) {
  TrainConfig cfg = TrainConfig::from_json_file(path);
  if (!manifest_override.empty()) cfg.manifest = manifest_override;
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  if (min_kept_override >= 0) cfg.bootstrap.min_kept = min_kept_override;
  return cfg;
}

int cmd_train(const std::string& config_path, const std::string& manifest,
              std::int64_t seed, int min_kept, const std::string& out, HeadKind head) {
  const TrainConfig cfg = load_train_config(config_path, manifest, seed, min_kept);
  const TrainResult r = head == HeadKind::kSemantic ? train_semantic(cfg, out)
                                                    : train_localization(cfg, out);
  std::printf("trained %zu steps; final loss %.6f; checkpoint at %s\n", r.log.size(),
              r.log.empty() ? 0.0 : r.log.back().loss, r.checkpoint_dir.c_str());
  return 0;
}

int cmd_infer(const std::string& checkpoint, const std::string& image_path,
              const std::string& out, bool bilinear) {
  const Network net = Network::load_checkpoint(checkpoint);
  const Tensor image = read_tensor(image_path);
  fs::create_directories(out);
  if (net.config().head == HeadKind::kSemantic) {
    const Tensor probs = infer_semantic(net, image, bilinear ? "bilinear" : "nearest");
    const std::string path = (fs::path(out) / "probs.fcrt").string();
    write_tensor(path, probs);
    std::printf("wrote %s\n", path.c_str());
  } else {
    const Tensor maps = infer_localization(net, image);
    const std::string path = (fs::path(out) / "transforms.fcrt").string();
    write_tensor(path, maps);
    std::printf("wrote %s (stride %d)\n", path.c_str(), net.output_stride());
  }
  return 0;
}

void write_report(const std::string& out_dir, const json& doc,
                  const std::vector<std::pair<std::string, double>>& table_rows) {
  fs::create_directories(out_dir);
  std::ofstream jf(fs::path(out_dir) / "metrics.json", std::ios::trunc);
  jf << doc.dump(2) << "\n";
  const std::string table = format_metrics_table(table_rows);
  std::ofstream tf(fs::path(out_dir) / "metrics.txt", std::ios::trunc);
  tf << table;
  std::fputs(table.c_str(), stdout);
}

int cmd_eval_semantic(const std::string& manifest, const std::string& checkpoint,
                      const std::string& out, bool bilinear) {
  const Network net = Network::load_checkpoint(checkpoint);
  const Dataset data = load_dataset(manifest);
  const SemanticMetrics m = eval_semantic_dataset(net, data, bilinear ? "bilinear" : "nearest");
  json doc{{"pixel_acc", m.pixel_acc}, {"mean_acc", m.mean_acc}, {"mean_iou", m.mean_iou}};
  json per_class = json::object();
  for (size_t c = 0; c < m.class_iou.size(); ++c) {
    if (!std::isnan(m.class_iou[c])) per_class[std::to_string(c)] = m.class_iou[c];
  }
  doc["class_iou"] = per_class;
  write_report(out, doc,
               {{"pixel_acc", m.pixel_acc}, {"mean_acc", m.mean_acc}, {"mean_iou", m.mean_iou}});
  return 0;
}

struct EvalInstanceArgs {
  std::string manifest, pred_dir, semantic_checkpoint, loc_checkpoint, out;
  std::string train_semantic_config, train_loc_config;
  bool oracle_semantic = false;
  bool bilinear = false;
  int top_n = 2;
  double box_nms = 0.3, region_nms = 0.5;
  int min_cluster = 4;
};

int cmd_eval_instance(EvalInstanceArgs args) {
  // train-first mode: produce the checkpoints under --out before evaluating
  if (!args.train_semantic_config.empty()) {
    const std::string dir = (fs::path(args.out) / "checkpoints" / "semantic").string();
    train_semantic(TrainConfig::from_json_file(args.train_semantic_config), dir);
    args.semantic_checkpoint = dir;
  }
  if (!args.train_loc_config.empty()) {
    const std::string dir = (fs::path(args.out) / "checkpoints" / "localization").string();
    train_localization(TrainConfig::from_json_file(args.train_loc_config), dir);
    args.loc_checkpoint = dir;
  }
  const Dataset data = load_dataset(args.manifest);
  if (data.samples.empty()) {
    write_report(args.out, json{{"images", 0}, {"predictions", 0}, {"ground_truth", 0}}, {});
    return 0;
  }
  EndToEndResult result;
  if (!args.pred_dir.empty()) {
    // pre-assembled hypotheses mode
    std::vector<EvalInstance> preds;
    for (size_t i = 0; i < data.samples.size(); ++i) {
      char stem[48];
      std::snprintf(stem, sizeof(stem), "image_%05zu_hypotheses.json", i);
      const fs::path path = fs::path(args.pred_dir) / stem;
      if (!fs::exists(path)) continue;
      for (const InstanceHypothesis& hyp : read_hypotheses(path.string())) {
        EvalInstance e;
        e.image = static_cast<int>(i);
        e.category = hyp.category;
        e.confidence = hyp.confidence;
        e.pixels = hyp.cluster;
        preds.push_back(std::move(e));
      }
    }
    const auto gts = dataset_ground_truth(data);
    result.metrics = instance_metrics(preds, gts, data.config.num_categories);
    result.images = static_cast<int>(data.samples.size());
    result.predictions = static_cast<int>(preds.size());
    result.ground_truth = static_cast<int>(gts.size());
  } else {
    EndToEndOptions options;
    options.pipeline.top_n = args.top_n;
    options.pipeline.box_nms_iou = args.box_nms;
    options.pipeline.region_nms_iou = args.region_nms;
    options.pipeline.min_cluster_pixels = args.min_cluster;
    options.oracle_semantic = args.oracle_semantic;
    options.upsample = args.bilinear ? "bilinear" : "nearest";
    options.artifact_dir = (fs::path(args.out) / "predictions").string();

    std::optional<Network> semantic;
    if (!args.oracle_semantic) {
      if (args.semantic_checkpoint.empty()) {
        throw std::invalid_argument("eval-instance needs --semantic-checkpoint or --oracle-semantic");
      }
      semantic = Network::load_checkpoint(args.semantic_checkpoint);
    }
    if (args.loc_checkpoint.empty()) {
      throw std::invalid_argument("eval-instance needs --loc-checkpoint");
    }
    const Network loc = Network::load_checkpoint(args.loc_checkpoint);
    result = run_end_to_end(semantic ? &*semantic : nullptr, loc, data, options);
  }
  json doc{{"map_r_0.5", result.metrics.map50},
           {"map_r_0.7", result.metrics.map70},
           {"map_r_vol", result.metrics.map_vol},
           {"images", result.images},
           {"predictions", result.predictions},
           {"ground_truth", result.ground_truth}};
  write_report(args.out, doc,
               {{"map_r_0.5", result.metrics.map50},
                {"map_r_0.7", result.metrics.map70},
                {"map_r_vol", result.metrics.map_vol}});
  return 0;
}

struct AssembleArgs {
  std::string manifest, semantic_checkpoint, loc_checkpoint;
  std::string probs_path, transforms_path;
  int stride = 8;
  std::string out;
  bool oracle_semantic = false;
  bool bilinear = false;
  int top_n = 2;
  double box_nms = 0.3, region_nms = 0.5;
  int min_cluster = 4;
};

int cmd_assemble(const AssembleArgs& args) {
  PipelineConfig cfg;
  cfg.top_n = args.top_n;
  cfg.box_nms_iou = args.box_nms;
  cfg.region_nms_iou = args.region_nms;
  cfg.min_cluster_pixels = args.min_cluster;

  if (!args.probs_path.empty()) {
    const Tensor probs = read_tensor(args.probs_path);
    const Tensor tmaps = read_tensor(args.transforms_path);
    const auto hyps = run_instance_pipeline(probs, tmaps, args.stride, cfg);
    write_hypotheses(args.out, "image_00000", hyps);
    std::printf("image_00000: %zu hypotheses\n", hyps.size());
    return 0;
  }

  const Dataset data = load_dataset(args.manifest);
  std::optional<Network> semantic;
  if (!args.oracle_semantic) {
    if (args.semantic_checkpoint.empty()) {
      throw std::invalid_argument("assemble needs --semantic-checkpoint or --oracle-semantic");
    }
    semantic = Network::load_checkpoint(args.semantic_checkpoint);
  }
  const Network loc = Network::load_checkpoint(args.loc_checkpoint);
  for (size_t i = 0; i < data.samples.size(); ++i) {
    const Sample& s = data.samples[i];
    const Tensor probs = args.oracle_semantic
                             ? oracle_probs(s.semantic, data.config.num_categories)
                             : infer_semantic(*semantic, s.image,
                                              args.bilinear ? "bilinear" : "nearest");
    const Tensor tmaps = infer_localization(loc, s.image);
    const auto hyps = run_instance_pipeline(probs, tmaps, loc.output_stride(), cfg);
    char stem[32];
    std::snprintf(stem, sizeof(stem), "image_%05zu", i);
    write_hypotheses(args.out, stem, hyps);
    std::printf("%s: %zu hypotheses\n", stem, hyps.size());
  }
  return 0;
}

int cmd_fov_table() {
  std::printf("depth  resolution  kernel  dilation  fov\n");
  int mismatches = 0;
  for (const FovTableRow& row : fov_reference_rows()) {
    const int computed = compute_fov(row.output_stride, row.kernel, row.dilation);
    const bool ok = computed == row.fov;
    std::printf("%5d        1/%-2d  %6d  %8d  %4d%s\n", row.depth, row.output_stride, row.kernel,
                row.dilation, computed, ok ? "" : "  MISMATCH");
    if (!ok) {
      std::fprintf(stderr, "row (%d, 1/%d, %d, %d): computed %d, reference %d\n", row.depth,
                   row.output_stride, row.kernel, row.dilation, computed, row.fov);
      ++mismatches;
    }
  }
  std::printf("%zu rows checked\n", fov_reference_rows().size());
  return mismatches == 0 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Segmentation-first instance segmentation toolkit"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic shapes dataset");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--count", synth.count, "Number of samples");
  synth_cmd->add_option("--seed", synth.seed, "Dataset seed");
  synth_cmd->add_option("--height", synth.height, "Image height");
  synth_cmd->add_option("--width", synth.width, "Image width");
  synth_cmd->add_option("--categories", synth.categories, "Foreground categories");
  synth_cmd->add_option("--min-instances", synth.min_instances, "Min instances per image");
  synth_cmd->add_option("--max-instances", synth.max_instances, "Max instances per image");
  synth_cmd->add_option("--min-size", synth.min_size, "Min shape extent (px)");
  synth_cmd->add_option("--max-size", synth.max_size, "Max shape extent (px)");
  synth_cmd->add_option("--skew", synth.skew, "Comma-separated class frequencies");

  std::string config_path, manifest, checkpoint, out, image_path;
  std::int64_t seed = -1;
  int min_kept = -1;
  bool bilinear = false;

  auto* ts = app.add_subcommand("train-semantic", "Train the semantic segmentation network");
  ts->add_option("--config", config_path, "Train config JSON")->required();
  ts->add_option("--manifest", manifest, "Dataset manifest (overrides config)");
  ts->add_option("--seed", seed, "Seed (overrides config)");
  ts->add_option("--min-kept", min_kept, "Bootstrapping min-kept pixels (overrides config)");
  ts->add_option("--out", out, "Checkpoint directory")->required();

  auto* tl = app.add_subcommand("train-loc", "Train the box localization network");
  tl->add_option("--config", config_path, "Train config JSON")->required();
  tl->add_option("--manifest", manifest, "Dataset manifest (overrides config)");
  tl->add_option("--seed", seed, "Seed (overrides config)");
  tl->add_option("--min-kept", min_kept, "Bootstrapping min-kept pixels (overrides config)");
  tl->add_option("--out", out, "Checkpoint directory")->required();

  auto* infer_cmd = app.add_subcommand("infer", "Run one checkpoint on one image tensor");
  infer_cmd->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  infer_cmd->add_option("--image", image_path, "Image tensor file")->required();
  infer_cmd->add_option("--out", out, "Output directory")->required();
  infer_cmd->add_flag("--bilinear", bilinear, "Bilinear upsampling (default nearest)");

  AssembleArgs assemble;
  auto* as = app.add_subcommand("assemble", "Assemble instance hypotheses from maps");
  as->add_option("--manifest", assemble.manifest, "Dataset manifest");
  as->add_option("--semantic-checkpoint", assemble.semantic_checkpoint, "Semantic checkpoint");
  as->add_option("--loc-checkpoint", assemble.loc_checkpoint, "Localization checkpoint");
  as->add_option("--probs", assemble.probs_path, "Probability tensor (single-image mode)");
  as->add_option("--transforms", assemble.transforms_path, "Transform tensor (single-image mode)");
  as->add_option("--stride", assemble.stride, "Transform map stride (single-image mode)");
  as->add_option("--out", assemble.out, "Output directory")->required();
  as->add_flag("--oracle-semantic", assemble.oracle_semantic, "Use ground-truth score maps");
  as->add_flag("--bilinear,!--nearest", assemble.bilinear, "Per-pixel probability upsampling");
  as->add_option("--top-n", assemble.top_n, "Masks per category");
  as->add_option("--box-nms", assemble.box_nms, "Box NMS IoU threshold");
  as->add_option("--region-nms", assemble.region_nms, "Region NMS mask IoU threshold");
  as->add_option("--min-cluster", assemble.min_cluster, "Minimum cluster pixels");

  auto* es = app.add_subcommand("eval-semantic", "Semantic metrics over a manifest");
  es->add_option("--manifest", manifest, "Dataset manifest")->required();
  es->add_option("--checkpoint", checkpoint, "Semantic checkpoint")->required();
  es->add_option("--out", out, "Report directory")->required();
  es->add_flag("--bilinear", bilinear, "Bilinear upsampling (default nearest)");

  EvalInstanceArgs ei;
  auto* ev = app.add_subcommand("eval-instance",
                                "Instance metrics: end-to-end from checkpoints, or from "
                                "pre-assembled predictions");
  ev->add_option("--manifest", ei.manifest, "Dataset manifest")->required();
  ev->add_option("--pred", ei.pred_dir, "Directory of assembled hypotheses");
  ev->add_option("--semantic-checkpoint", ei.semantic_checkpoint, "Semantic checkpoint");
  ev->add_option("--loc-checkpoint", ei.loc_checkpoint, "Localization checkpoint");
  ev->add_option("--out", ei.out, "Report directory")->required();
  ev->add_flag("--oracle-semantic", ei.oracle_semantic,
               "Ground-truth score maps instead of the semantic network");
  ev->add_option("--train-semantic-config", ei.train_semantic_config,
                 "Train the semantic network first with this config");
  ev->add_option("--train-loc-config", ei.train_loc_config,
                 "Train the localization network first with this config");
  ev->add_flag("--bilinear,!--nearest", ei.bilinear, "Per-pixel probability upsampling");
  ev->add_option("--top-n", ei.top_n, "Masks per category");
  ev->add_option("--box-nms", ei.box_nms, "Box NMS IoU threshold");
  ev->add_option("--region-nms", ei.region_nms, "Region NMS mask IoU threshold");
  ev->add_option("--min-cluster", ei.min_cluster, "Minimum pixels per recovered cluster");

  app.add_subcommand("fov-table", "Print and verify the classifier field-of-view table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // validation failures exit 1
  }

  try {
    if (synth_cmd->parsed()) return cmd_synth(synth);
    if (ts->parsed()) return cmd_train(config_path, manifest, seed, min_kept, out, HeadKind::kSemantic);
    if (tl->parsed()) return cmd_train(config_path, manifest, seed, min_kept, out, HeadKind::kLocalization);
    if (infer_cmd->parsed()) return cmd_infer(checkpoint, image_path, out, bilinear);
    if (as->parsed()) return cmd_assemble(assemble);
    if (es->parsed()) return cmd_eval_semantic(manifest, checkpoint, out, bilinear);
    if (ev->parsed()) return cmd_eval_instance(ei);
    return cmd_fov_table();
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}

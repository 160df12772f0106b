#pragma once

#include <optional>
#include <string>
#include <vector>

#include "instseg/assembly.hpp"
#include "instseg/eval.hpp"
#include "instseg/losses.hpp"
#include "instseg/net.hpp"
#include "instseg/synthdata.hpp"

namespace instseg {

struct OptimizerConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double grad_clip = 10.0;  // global L2 norm bound; 0 disables
  std::string lr_schedule = "poly";  // "poly" (power 0.9) or "step" (x0.1 at 2/3)
};

struct BootstrapSettings {
  bool enabled = true;
  double t0 = 0.6;
  int min_kept = 512;
  double iou_threshold = 0.7;

  BootstrapConfig to_config() const {
    return enabled ? BootstrapConfig{t0, min_kept, iou_threshold} : BootstrapConfig::disabled();
  }
};

struct TrainConfig {
  NetworkConfig network;
  BootstrapSettings bootstrap;
  OptimizerConfig optimizer;
  int crops_per_batch = 4;
  int crop_size = 64;
  int iterations = 1000;
  std::uint64_t seed = 1;
  std::string manifest;
  std::string loss_resolution = "input";  // "input" (upsampled logits) or "output"

  void validate() const;
  static TrainConfig from_json_file(const std::string& path);
  static TrainConfig from_json_string(const std::string& text);
  std::string to_json_string() const;
};

struct TrainLogRow {
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double t_eff = 0.0;
  std::int64_t kept = 0;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  std::string checkpoint_dir;
};

/// In-memory dataset behind a manifest.
struct Dataset {
  SceneConfig config;
  std::vector<Sample> samples;
};

Dataset load_dataset(const std::string& manifest_path);

/// Trains the semantic head with bootstrapped cross-entropy; writes
/// config.json, params/ and log.csv under out_dir. Deterministic for a
/// given config.
TrainResult train_semantic(const TrainConfig& cfg, const std::string& out_dir);

/// Trains the localization head with the size-weighted, IoU-bootstrapped
/// smoothed-l1 loss; aborts if the dataset has no foreground pixels.
TrainResult train_localization(const TrainConfig& cfg, const std::string& out_dir);

/// Semantic probabilities at input resolution ("nearest" or "bilinear").
Tensor infer_semantic(const Network& net, const Tensor& image, const std::string& upsample);

/// Raw transform maps at stride resolution.
Tensor infer_localization(const Network& net, const Tensor& image);

/// Localization supervision on a grid with the given cell size: targets are
/// defined at cells whose center pixel belongs to an instance (every instance
/// pixel when cell = 1). Center offsets are normalized by encode_stride.
LocTargets build_loc_targets(const LabelMap& instances, const std::vector<InstanceRecord>& records,
                             int num_categories, int encode_stride, int cell, int out_h,
                             int out_w);

/// One-hot probabilities from a ground-truth semantic map, standing in for
/// the semantic network as an upper-bound probe.
Tensor oracle_probs(const LabelMap& semantic, int num_categories);

struct EndToEndOptions {
  PipelineConfig pipeline;
  bool oracle_semantic = false;
  std::string upsample = "nearest";  // "bilinear" recovers sub-cell boundaries
  std::string artifact_dir;  // per-image hypotheses written here when set
};

struct EndToEndResult {
  InstanceMetrics metrics;
  int images = 0;
  int predictions = 0;
  int ground_truth = 0;
};

/// infer -> assemble -> eval-instance over a manifest. `semantic` may be
/// null only in oracle mode.
EndToEndResult run_end_to_end(const Network* semantic, const Network& localization,
                              const Dataset& data, const EndToEndOptions& options);

/// Semantic evaluation of a checkpoint over a dataset.
SemanticMetrics eval_semantic_dataset(const Network& net, const Dataset& data,
                                      const std::string& upsample);

/// Ground-truth instances of a dataset in eval form.
std::vector<EvalInstance> dataset_ground_truth(const Dataset& data);

void write_train_log_csv(const std::string& path, const std::vector<TrainLogRow>& log);

}  // namespace instseg

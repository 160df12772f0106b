#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "instseg/box.hpp"
#include "instseg/tensor.hpp"

namespace instseg {

/// Online-bootstrapping knobs shared by the two training losses.
struct BootstrapConfig {
  double t0 = 0.6;           // probability threshold in (0,1], semantic mode
  int min_kept = 512;        // lower bound M on pixels kept per mini-batch
  double iou_threshold = 0.7;  // tau in (0,1), localization mode

  /// Keep-everything configuration (plain loss, no bootstrapping).
  static BootstrapConfig disabled() { return BootstrapConfig{1.0, 0, 1.0 - 1e-12}; }

  void validate() const;
};

struct SelectedPixel {
  int crop = 0;
  int y = 0;
  int x = 0;
  double weight = 1.0;
};

/// Pixels retained by a bootstrapping pass, pooled across the crops of one
/// mini-batch, with the effective threshold actually applied.
struct PixelSelection {
  std::vector<SelectedPixel> kept;
  double t_eff = 0.0;
  bool no_labeled = false;  // flagged when the batch had nothing to supervise

  std::int64_t count() const { return static_cast<std::int64_t>(kept.size()); }
  bool empty() const { return kept.empty(); }
};

/// Hard-pixel selection for semantic training: keep pixels whose true-class
/// probability is below t0, plus the M hardest pixels (ascending true-class
/// probability, ties by pixel position). Ignore-labeled pixels (negative)
/// are never kept.
PixelSelection select_hard_semantic(std::span<const Tensor> probs_batch,
                                    std::span<const LabelMap> labels_batch,
                                    const BootstrapConfig& cfg);
PixelSelection select_hard_semantic(const Tensor& probs, const LabelMap& labels,
                                    const BootstrapConfig& cfg);

struct SemanticLossResult {
  double loss = 0.0;
  std::vector<Tensor> grad_logits;  // per crop, zero at dropped pixels
};

/// Mean negative log-probability of the true class over the kept pixels.
/// The gradient is taken with respect to the logits feeding the softmax:
/// (p - onehot) / |kept| at kept pixels, zero elsewhere.
SemanticLossResult bootstrapped_cross_entropy(std::span<const Tensor> probs_batch,
                                              std::span<const LabelMap> labels_batch,
                                              const PixelSelection& selection);

/// Per-pixel loss weights: every pixel of an instance gets 1/(h*w) of its
/// record box, so each instance contributes about equally; background is 0.
/// boxes_by_id[i] is the box of instance id i+1.
Tensor instance_pixel_weights(const LabelMap& instances, const std::vector<Box>& boxes_by_id);

inline double smoothed_l1(double x) {
  const double a = x < 0 ? -x : x;
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

inline double smoothed_l1_grad(double x) {
  if (x > 1.0) return 1.0;
  if (x < -1.0) return -1.0;
  return x;
}

/// Localization supervision for one crop. The grid may be the network's
/// output grid (cell = output stride) or the full input grid (cell = 1, maps
/// nearest-upsampled); offsets stay in units of encode_stride either way.
struct LocTargets {
  Tensor maps;        // [4K, h, w]; valid only where category > 0
  LabelMap category;  // 0 = no supervision, else ground-truth category 1..K
  LabelMap instance;  // 0 or instance id owning the pixel
  std::vector<Box> boxes_by_id;  // ground-truth boxes in input coordinates
  int cell = 1;           // grid spacing in input pixels
  int encode_stride = 8;  // divisor of the center offsets
};

/// Hard-pixel selection for localization training: a foreground pixel is kept
/// iff the IoU between its decoded predicted box and the ground-truth box is
/// below tau, unioned with the M lowest-IoU pixels. Weights follow
/// instance_pixel_weights.
PixelSelection select_hard_localization(std::span<const Tensor> pred_maps,
                                        std::span<const LocTargets> targets,
                                        const BootstrapConfig& cfg);

struct LocalizationLossResult {
  double loss = 0.0;
  std::vector<Tensor> grad_maps;  // per crop, zero outside kept pixels
};

/// Weighted smoothed-l1 over the 4 channels of each kept pixel's ground-truth
/// category, normalized by the total kept weight.
LocalizationLossResult localization_loss(std::span<const Tensor> pred_maps,
                                         std::span<const LocTargets> targets,
                                         const PixelSelection& selection);

}  // namespace instseg

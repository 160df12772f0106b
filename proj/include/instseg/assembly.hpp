#pragma once

#include <string>
#include <vector>

#include "instseg/box.hpp"
#include "instseg/tensor.hpp"

namespace instseg {

struct PipelineConfig {
  int top_n = 2;
  double box_nms_iou = 0.3;
  double region_nms_iou = 0.5;
  int min_cluster_pixels = 4;
  int max_instances_per_category = 64;

  void validate() const;
};

/// One detected instance: its pixel cluster is the mask support, the box is
/// the NMS keeper's decoded box, and the confidence is the mean semantic
/// score of the cluster.
struct InstanceHypothesis {
  int category = 0;
  Box box;
  double confidence = 0.0;
  std::vector<int> cluster;  // sorted flat pixel indices (y * width + x)
  int height = 0, width = 0;

  Tensor mask_tensor() const;  // [H,W] of 0/1
};

/// Mask IoU of two hypotheses on the same grid: |A & B| / |A | B|.
double mask_iou(const InstanceHypothesis& a, const InstanceHypothesis& b);

/// Per-category binary masks from [K+1,H,W] probabilities (channel 0 is
/// background): pixel belongs to mask_c iff category c's score ranks within
/// the pixel's n highest scores over all K+1 channels (ties to the lower
/// channel). The background channel gets no mask; n is clamped to K+1.
/// Returns masks[c-1] for categories 1..K.
std::vector<LabelMap> top_n_masks(const Tensor& probs, int n);

struct PixelBox {
  int pixel = 0;  // flat index into the H x W grid
  Box box;
};

/// Decodes the 4 channels of `category` at every masked pixel into an
/// absolute box clipped to the image bounds. Pixels whose boxes degenerate
/// under clipping are skipped and counted in *skipped when given.
std::vector<PixelBox> decode_boxes(const Tensor& transform_map, const LabelMap& mask, int category,
                                   int stride, int* skipped = nullptr);

struct BoxCandidate {
  int pixel = 0;
  Box box;
  double score = 0.0;
};

struct Cluster {
  int keeper = 0;            // index into the candidate list
  std::vector<int> members;  // candidate indices, keeper included
};

/// Greedy NMS in descending score order (ties by pixel index ascending).
/// Each suppressed candidate joins the cluster of the first keeper that
/// suppressed it; the clusters partition the candidate set.
std::vector<Cluster> box_nms_cluster(const std::vector<BoxCandidate>& candidates, double iou_thr);

/// Materializes hypotheses from clusters: mask = cluster pixels, confidence =
/// mean category score, box = keeper's box. Clusters smaller than
/// min_cluster_pixels are discarded.
std::vector<InstanceHypothesis> recover_instances(const std::vector<Cluster>& clusters,
                                                  const std::vector<BoxCandidate>& candidates,
                                                  const Tensor& probs, int category,
                                                  int min_cluster_pixels);

/// Greedy suppression by descending confidence using mask IoU, within the
/// same category only; then the per-category cap.
std::vector<InstanceHypothesis> region_nms(std::vector<InstanceHypothesis> hypotheses,
                                           double iou_thr, int max_per_category);

/// Steps 1-6 over all foreground categories. `transform_map` may be given at
/// stride resolution; it is upsampled to the probs grid by nearest neighbor.
std::vector<InstanceHypothesis> run_instance_pipeline(const Tensor& probs,
                                                      const Tensor& transform_map, int stride,
                                                      const PipelineConfig& cfg);

/// Writes hypotheses.json plus one mask tensor file per hypothesis under dir,
/// prefixed with `stem`. Returns the JSON path.
std::string write_hypotheses(const std::string& dir, const std::string& stem,
                             const std::vector<InstanceHypothesis>& hypotheses);
std::vector<InstanceHypothesis> read_hypotheses(const std::string& json_path);

}  // namespace instseg

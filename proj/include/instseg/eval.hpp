#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "instseg/tensor.hpp"

namespace instseg {

/// (K+1) x (K+1) pixel counts, rows = ground truth, columns = prediction.
struct ConfusionMatrix {
  int classes = 0;
  std::vector<std::int64_t> counts;

  explicit ConfusionMatrix(int num_classes)
      : classes(num_classes),
        counts(static_cast<size_t>(num_classes) * static_cast<size_t>(num_classes), 0) {}

  std::int64_t& at(int truth, int pred) {
    return counts[static_cast<size_t>(truth) * classes + pred];
  }
  std::int64_t at(int truth, int pred) const {
    return counts[static_cast<size_t>(truth) * classes + pred];
  }
  std::int64_t total() const;

  /// Adds one image; pixels with a negative value in `ignore` (when given)
  /// or a negative label are excluded.
  void accumulate(const LabelMap& pred, const LabelMap& gt, const LabelMap* ignore = nullptr);
};

struct SemanticMetrics {
  double pixel_acc = 0.0;
  double mean_acc = 0.0;
  double mean_iou = 0.0;
  std::vector<double> class_iou;  // indexed by class id; NaN when absent from GT
};

/// Classes absent from the ground truth are excluded from the means.
/// Throws if every pixel was ignored.
SemanticMetrics semantic_metrics(const ConfusionMatrix& cm);
SemanticMetrics semantic_metrics(const LabelMap& pred, const LabelMap& gt, int classes,
                                 const LabelMap* ignore = nullptr);

/// A prediction or ground-truth instance for region matching. Masks are
/// sorted flat pixel indices; `image` scopes matching to one image.
struct EvalInstance {
  int image = 0;
  int category = 0;
  double confidence = 1.0;  // ignored for ground truth
  std::vector<int> pixels;
};

struct MatchEntry {
  double confidence = 0.0;
  bool true_positive = false;
  double iou = 0.0;     // IoU of the best unmatched candidate, 0 if none
  int matched_gt = -1;  // index into the ground-truth list, -1 for none
};

/// Ranked matching outcome for one category at one overlap threshold.
struct CategoryMatches {
  int category = 0;
  int num_gt = 0;
  std::vector<MatchEntry> entries;  // sorted by confidence descending
};

/// Greedy matching per category: predictions in descending confidence order
/// (ties keep input order) match the unmatched ground-truth instance of the
/// same category and image with the highest mask IoU; a match counts as a
/// true positive iff that IoU >= threshold, and only true positives consume
/// the ground truth.
std::vector<CategoryMatches> match_instances(const std::vector<EvalInstance>& preds,
                                             const std::vector<EvalInstance>& gts,
                                             double iou_threshold, int num_categories);

/// All-point interpolated average precision (precision envelope integrated
/// over recall). Requires num_gt >= 1.
double average_precision(const CategoryMatches& matches);

/// Mean AP over the categories present in the ground truth. Throws when the
/// ground truth is empty.
double map_r(const std::vector<EvalInstance>& preds, const std::vector<EvalInstance>& gts,
             double iou_threshold, int num_categories);

/// Mean of map_r over overlap thresholds 0.1, 0.2, ..., 0.9.
double map_r_vol(const std::vector<EvalInstance>& preds, const std::vector<EvalInstance>& gts,
                 int num_categories);

struct InstanceMetrics {
  double map50 = 0.0;
  double map70 = 0.0;
  double map_vol = 0.0;
};

InstanceMetrics instance_metrics(const std::vector<EvalInstance>& preds,
                                 const std::vector<EvalInstance>& gts, int num_categories);

/// Plain-text table with one aligned row per metric.
std::string format_metrics_table(const std::vector<std::pair<std::string, double>>& rows);

}  // namespace instseg

#include "instseg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace instseg {

std::int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

void ConfusionMatrix::accumulate(const LabelMap& pred, const LabelMap& gt, const LabelMap* ignore) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw std::invalid_argument("confusion: prediction and ground truth shapes differ");
  }
  for (std::int64_t i = 0; i < gt.size(); ++i) {
    const int t = gt.values[static_cast<size_t>(i)];
    if (t < 0) continue;
    if (ignore && ignore->values[static_cast<size_t>(i)] < 0) continue;
    const int p = pred.values[static_cast<size_t>(i)];
    if (t >= classes || p < 0 || p >= classes) {
      throw std::invalid_argument("confusion: label outside [0, classes)");
    }
    ++at(t, p);
  }
}

SemanticMetrics semantic_metrics(const ConfusionMatrix& cm) {
  const std::int64_t total = cm.total();
  if (total == 0) throw std::invalid_argument("semantic_metrics: every pixel was ignored");
  SemanticMetrics m;
  m.class_iou.assign(static_cast<size_t>(cm.classes), std::numeric_limits<double>::quiet_NaN());
  std::int64_t diag = 0;
  double acc_sum = 0.0, iou_sum = 0.0;
  int present = 0;
  for (int c = 0; c < cm.classes; ++c) {
    std::int64_t row = 0, col = 0;
    for (int j = 0; j < cm.classes; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    diag += cm.at(c, c);
    if (row == 0) continue;  // absent from ground truth
    ++present;
    acc_sum += static_cast<double>(cm.at(c, c)) / static_cast<double>(row);
    const double iou =
        static_cast<double>(cm.at(c, c)) / static_cast<double>(row + col - cm.at(c, c));
    m.class_iou[static_cast<size_t>(c)] = iou;
    iou_sum += iou;
  }
  m.pixel_acc = static_cast<double>(diag) / static_cast<double>(total);
  m.mean_acc = acc_sum / present;
  m.mean_iou = iou_sum / present;
  return m;
}

SemanticMetrics semantic_metrics(const LabelMap& pred, const LabelMap& gt, int classes,
                                 const LabelMap* ignore) {
  ConfusionMatrix cm(classes);
  cm.accumulate(pred, gt, ignore);
  return semantic_metrics(cm);
}

namespace {

double sorted_mask_iou(const std::vector<int>& a, const std::vector<int>& b) {
  std::size_t i = 0, j = 0, inter = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++inter;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

std::vector<CategoryMatches> match_instances(const std::vector<EvalInstance>& preds,
                                             const std::vector<EvalInstance>& gts,
                                             double iou_threshold, int num_categories) {
  std::vector<CategoryMatches> result;
  for (int category = 1; category <= num_categories; ++category) {
    CategoryMatches cm;
    cm.category = category;
    std::vector<int> gt_idx;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (gts[g].category == category) gt_idx.push_back(static_cast<int>(g));
    }
    cm.num_gt = static_cast<int>(gt_idx.size());

    std::vector<int> pred_idx;
    for (size_t p = 0; p < preds.size(); ++p) {
      if (preds[p].category == category) pred_idx.push_back(static_cast<int>(p));
    }
    // Equal confidences keep input order (stable sort).
    std::stable_sort(pred_idx.begin(), pred_idx.end(), [&preds](int a, int b) {
      return preds[static_cast<size_t>(a)].confidence > preds[static_cast<size_t>(b)].confidence;
    });

    std::vector<char> consumed(gt_idx.size(), 0);
    for (int pi : pred_idx) {
      const EvalInstance& pred = preds[static_cast<size_t>(pi)];
      double best_iou = 0.0;
      int best = -1;
      for (size_t gi = 0; gi < gt_idx.size(); ++gi) {
        if (consumed[gi]) continue;
        const EvalInstance& gt = gts[static_cast<size_t>(gt_idx[gi])];
        if (gt.image != pred.image) continue;
        const double iou = sorted_mask_iou(pred.pixels, gt.pixels);
        if (iou > best_iou) {
          best_iou = iou;
          best = static_cast<int>(gi);
        }
      }
      MatchEntry entry;
      entry.confidence = pred.confidence;
      entry.iou = best_iou;
      if (best >= 0 && best_iou >= iou_threshold) {
        entry.true_positive = true;
        entry.matched_gt = gt_idx[static_cast<size_t>(best)];
        consumed[static_cast<size_t>(best)] = 1;
      }
      cm.entries.push_back(entry);
    }
    result.push_back(std::move(cm));
  }
  return result;
}

double average_precision(const CategoryMatches& matches) {
  if (matches.num_gt < 1) {
    throw std::invalid_argument("average_precision: category has no ground-truth instances");
  }
  // Precision envelope integrated over recall (all-point interpolation).
  std::vector<double> precision, recall;
  int tp = 0, seen = 0;
  for (const MatchEntry& e : matches.entries) {
    ++seen;
    if (e.true_positive) ++tp;
    precision.push_back(static_cast<double>(tp) / seen);
    recall.push_back(static_cast<double>(tp) / matches.num_gt);
  }
  double ap = 0.0, prev_recall = 0.0, peak = 0.0;
  // Walk from the right so each recall level uses the max precision at or
  // beyond it.
  std::vector<double> envelope(precision.size());
  for (int i = static_cast<int>(precision.size()) - 1; i >= 0; --i) {
    peak = std::max(peak, precision[static_cast<size_t>(i)]);
    envelope[static_cast<size_t>(i)] = peak;
  }
  for (size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * envelope[i];
    prev_recall = recall[i];
  }
  return ap;
}

double map_r(const std::vector<EvalInstance>& preds, const std::vector<EvalInstance>& gts,
             double iou_threshold, int num_categories) {
  const std::vector<CategoryMatches> matches =
      match_instances(preds, gts, iou_threshold, num_categories);
  double sum = 0.0;
  int present = 0;
  for (const CategoryMatches& cm : matches) {
    if (cm.num_gt < 1) continue;
    sum += average_precision(cm);
    ++present;
  }
  if (present == 0) throw std::invalid_argument("map_r: ground truth has no instances");
  return sum / present;
}

double map_r_vol(const std::vector<EvalInstance>& preds, const std::vector<EvalInstance>& gts,
                 int num_categories) {
  double sum = 0.0;
  for (int i = 1; i <= 9; ++i) {
    sum += map_r(preds, gts, 0.1 * i, num_categories);
  }
  return sum / 9.0;
}

InstanceMetrics instance_metrics(const std::vector<EvalInstance>& preds,
                                 const std::vector<EvalInstance>& gts, int num_categories) {
  InstanceMetrics m;
  m.map50 = map_r(preds, gts, 0.5, num_categories);
  m.map70 = map_r(preds, gts, 0.7, num_categories);
  m.map_vol = map_r_vol(preds, gts, num_categories);
  return m;
}

std::string format_metrics_table(const std::vector<std::pair<std::string, double>>& rows) {
  size_t width = 0;
  for (const auto& [name, _] : rows) width = std::max(width, name.size());
  std::string out;
  char value[48];
  for (const auto& [name, v] : rows) {
    out += name;
    out.append(width - name.size() + 2, ' ');
    std::snprintf(value, sizeof(value), "%.4f", v);
    out += value;
    out += "\n";
  }
  return out;
}

}  // namespace instseg

#include "instseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "instseg/net.hpp"

namespace instseg {

void BootstrapConfig::validate() const {
  if (!(t0 > 0.0 && t0 <= 1.0)) throw std::invalid_argument("bootstrap: t0 must be in (0,1]");
  if (min_kept < 0) throw std::invalid_argument("bootstrap: min_kept must be >= 0");
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) {
    throw std::invalid_argument("bootstrap: iou_threshold must be in (0,1)");
  }
}

namespace {

struct RankedPixel {
  double key;  // true-class probability, or predicted-box IoU
  int crop, y, x;
  double weight;

  bool operator<(const RankedPixel& o) const {
    if (key != o.key) return key < o.key;
    if (crop != o.crop) return crop < o.crop;
    if (y != o.y) return y < o.y;
    return x < o.x;
  }
};

PixelSelection select_by_threshold(std::vector<RankedPixel>& ranked, double threshold, int min_kept) {
  PixelSelection sel;
  if (ranked.empty()) {
    sel.no_labeled = true;
    sel.t_eff = threshold;
    return sel;
  }
  std::sort(ranked.begin(), ranked.end());
  const std::size_t m = std::min<std::size_t>(static_cast<std::size_t>(min_kept), ranked.size());
  sel.t_eff = threshold;
  if (m > 0) sel.t_eff = std::max(threshold, ranked[m - 1].key);
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (i < m || ranked[i].key < threshold) {
      sel.kept.push_back({ranked[i].crop, ranked[i].y, ranked[i].x, ranked[i].weight});
    }
  }
  return sel;
}

}  // namespace

PixelSelection select_hard_semantic(std::span<const Tensor> probs_batch,
                                    std::span<const LabelMap> labels_batch,
                                    const BootstrapConfig& cfg) {
  cfg.validate();
  if (probs_batch.size() != labels_batch.size()) {
    throw std::invalid_argument("select_hard_semantic: batch size mismatch");
  }
  std::vector<RankedPixel> ranked;
  for (size_t ci = 0; ci < probs_batch.size(); ++ci) {
    const Tensor& probs = probs_batch[ci];
    const LabelMap& labels = labels_batch[ci];
    if (probs.rank() != 3 || probs.dim(1) != labels.height || probs.dim(2) != labels.width) {
      throw std::invalid_argument("select_hard_semantic: probs/labels shape mismatch");
    }
    const int classes = probs.dim(0);
    for (int y = 0; y < labels.height; ++y) {
      for (int x = 0; x < labels.width; ++x) {
        const int label = labels.at(y, x);
        if (label < 0) continue;  // ignore
        if (label >= classes) {
          throw std::invalid_argument("select_hard_semantic: label out of range");
        }
        ranked.push_back({probs.at(label, y, x), static_cast<int>(ci), y, x, 1.0});
      }
    }
  }
  return select_by_threshold(ranked, cfg.t0, cfg.min_kept);
}

PixelSelection select_hard_semantic(const Tensor& probs, const LabelMap& labels,
                                    const BootstrapConfig& cfg) {
  return select_hard_semantic(std::span<const Tensor>(&probs, 1),
                              std::span<const LabelMap>(&labels, 1), cfg);
}

SemanticLossResult bootstrapped_cross_entropy(std::span<const Tensor> probs_batch,
                                              std::span<const LabelMap> labels_batch,
                                              const PixelSelection& selection) {
  SemanticLossResult res;
  for (const Tensor& p : probs_batch) res.grad_logits.push_back(Tensor::zeros_like(p));
  if (selection.empty()) return res;

  const double inv_n = 1.0 / static_cast<double>(selection.count());
  double loss = 0.0;
  for (const SelectedPixel& px : selection.kept) {
    const Tensor& probs = probs_batch[static_cast<size_t>(px.crop)];
    const LabelMap& labels = labels_batch[static_cast<size_t>(px.crop)];
    Tensor& grad = res.grad_logits[static_cast<size_t>(px.crop)];
    const int label = labels.at(px.y, px.x);
    const int classes = probs.dim(0);
    loss -= std::log(std::max(probs.at(label, px.y, px.x), 1e-300));
    for (int c = 0; c < classes; ++c) {
      const double onehot = c == label ? 1.0 : 0.0;
      grad.at(c, px.y, px.x) = (probs.at(c, px.y, px.x) - onehot) * inv_n;
    }
  }
  res.loss = loss * inv_n;
  return res;
}

Tensor instance_pixel_weights(const LabelMap& instances, const std::vector<Box>& boxes_by_id) {
  Tensor w({instances.height, instances.width});
  for (int y = 0; y < instances.height; ++y) {
    for (int x = 0; x < instances.width; ++x) {
      const int id = instances.at(y, x);
      if (id <= 0) continue;
      if (id > static_cast<int>(boxes_by_id.size())) {
        throw std::invalid_argument("instance_pixel_weights: id without a box record");
      }
      const Box& box = boxes_by_id[static_cast<size_t>(id - 1)];
      w.at(y, x) = 1.0 / box.area();
    }
  }
  return w;
}

PixelSelection select_hard_localization(std::span<const Tensor> pred_maps,
                                        std::span<const LocTargets> targets,
                                        const BootstrapConfig& cfg) {
  cfg.validate();
  if (pred_maps.size() != targets.size()) {
    throw std::invalid_argument("select_hard_localization: batch size mismatch");
  }
  std::vector<RankedPixel> ranked;
  for (size_t ci = 0; ci < pred_maps.size(); ++ci) {
    const Tensor& pred = pred_maps[ci];
    const LocTargets& t = targets[ci];
    const int h = pred.dim(1), w = pred.dim(2);
    if (t.category.height != h || t.category.width != w) {
      throw std::invalid_argument("select_hard_localization: target shape mismatch");
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int cat = t.category.at(y, x);
        if (cat <= 0) continue;
        const int id = t.instance.at(y, x);
        const Box& gt = t.boxes_by_id[static_cast<size_t>(id - 1)];
        const int base = 4 * (cat - 1);
        const double cy = (y + 0.5) * t.cell, cx = (x + 0.5) * t.cell;
        const LocTarget dec{pred.at(base + 0, y, x), pred.at(base + 1, y, x),
                            pred.at(base + 2, y, x), pred.at(base + 3, y, x)};
        const Box pred_box = decode_loc(dec, cy, cx, t.encode_stride);
        const double iou = pred_box.valid() ? box_iou(pred_box, gt) : 0.0;
        ranked.push_back({iou, static_cast<int>(ci), y, x, 1.0 / gt.area()});
      }
    }
  }
  return select_by_threshold(ranked, cfg.iou_threshold, cfg.min_kept);
}

LocalizationLossResult localization_loss(std::span<const Tensor> pred_maps,
                                         std::span<const LocTargets> targets,
                                         const PixelSelection& selection) {
  LocalizationLossResult res;
  for (const Tensor& p : pred_maps) res.grad_maps.push_back(Tensor::zeros_like(p));
  if (selection.empty()) return res;

  double weight_sum = 0.0;
  for (const SelectedPixel& px : selection.kept) weight_sum += px.weight;
  if (weight_sum <= 0.0) return res;

  double loss = 0.0;
  for (const SelectedPixel& px : selection.kept) {
    const Tensor& pred = pred_maps[static_cast<size_t>(px.crop)];
    const LocTargets& t = targets[static_cast<size_t>(px.crop)];
    Tensor& grad = res.grad_maps[static_cast<size_t>(px.crop)];
    const int cat = t.category.at(px.y, px.x);
    const int base = 4 * (cat - 1);
    for (int c = 0; c < 4; ++c) {
      const double diff = pred.at(base + c, px.y, px.x) - t.maps.at(base + c, px.y, px.x);
      loss += px.weight * smoothed_l1(diff);
      grad.at(base + c, px.y, px.x) = px.weight * smoothed_l1_grad(diff) / weight_sum;
    }
  }
  res.loss = loss / weight_sum;
  return res;
}

}  // namespace instseg

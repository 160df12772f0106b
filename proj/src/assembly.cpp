#include "instseg/assembly.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "instseg/net.hpp"
#include "instseg/tensor_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace instseg {

void PipelineConfig::validate() const {
  if (top_n < 1) throw std::invalid_argument("pipeline: top_n must be >= 1");
  if (!(box_nms_iou > 0.0 && box_nms_iou < 1.0)) {
    throw std::invalid_argument("pipeline: box_nms_iou must be in (0,1)");
  }
  if (!(region_nms_iou > 0.0 && region_nms_iou < 1.0)) {
    throw std::invalid_argument("pipeline: region_nms_iou must be in (0,1)");
  }
  if (min_cluster_pixels < 1) throw std::invalid_argument("pipeline: min_cluster_pixels must be >= 1");
  if (max_instances_per_category < 1) {
    throw std::invalid_argument("pipeline: max_instances_per_category must be >= 1");
  }
}

Tensor InstanceHypothesis::mask_tensor() const {
  Tensor m({height, width});
  for (int p : cluster) m[p] = 1.0;
  return m;
}

double mask_iou(const InstanceHypothesis& a, const InstanceHypothesis& b) {
  // Clusters are sorted; walk both.
  std::size_t i = 0, j = 0, inter = 0;
  while (i < a.cluster.size() && j < b.cluster.size()) {
    if (a.cluster[i] == b.cluster[j]) {
      ++inter;
      ++i;
      ++j;
    } else if (a.cluster[i] < b.cluster[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  const std::size_t uni = a.cluster.size() + b.cluster.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<LabelMap> top_n_masks(const Tensor& probs, int n) {
  if (probs.rank() != 3) throw std::invalid_argument("top_n_masks expects [K+1,H,W] probs");
  const int channels = probs.dim(0), h = probs.dim(1), w = probs.dim(2);
  if (channels < 2) throw std::invalid_argument("top_n_masks needs at least one foreground category");
  n = std::min(n, channels);
  std::vector<LabelMap> masks(static_cast<size_t>(channels - 1), LabelMap(h, w, 0));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 1; c < channels; ++c) {
        // Rank of channel c at this pixel: channels with a strictly higher
        // score, plus equal-scoring channels with a lower index.
        const double score = probs.at(c, y, x);
        int rank = 0;
        for (int o = 0; o < channels; ++o) {
          if (o == c) continue;
          const double other = probs.at(o, y, x);
          if (other > score || (other == score && o < c)) ++rank;
        }
        if (rank < n) masks[static_cast<size_t>(c - 1)].at(y, x) = 1;
      }
    }
  }
  return masks;
}

std::vector<PixelBox> decode_boxes(const Tensor& transform_map, const LabelMap& mask, int category,
                                   int stride, int* skipped) {
  if (transform_map.rank() != 3 || transform_map.dim(0) % 4 != 0) {
    throw std::invalid_argument("decode_boxes expects a [4K,H,W] transform map");
  }
  const int h = mask.height, w = mask.width;
  if (transform_map.dim(1) != h || transform_map.dim(2) != w) {
    throw std::invalid_argument("decode_boxes: transform map and mask must be aligned");
  }
  const int base = 4 * (category - 1);
  if (base < 0 || base + 4 > transform_map.dim(0)) {
    throw std::invalid_argument("decode_boxes: category out of range");
  }
  std::vector<PixelBox> out;
  int skip_count = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (mask.at(y, x) == 0) continue;
      const LocTarget t{transform_map.at(base + 0, y, x), transform_map.at(base + 1, y, x),
                        transform_map.at(base + 2, y, x), transform_map.at(base + 3, y, x)};
      const Box raw = decode_loc(t, y + 0.5, x + 0.5, stride);
      const Box clipped = clip_box(raw, h, w);
      if (!clipped.valid()) {
        ++skip_count;
        continue;
      }
      out.push_back({y * w + x, clipped});
    }
  }
  if (skipped) *skipped = skip_count;
  return out;
}

std::vector<Cluster> box_nms_cluster(const std::vector<BoxCandidate>& candidates, double iou_thr) {
  const int n = static_cast<int>(candidates.size());
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&candidates](int a, int b) {
    if (candidates[static_cast<size_t>(a)].score != candidates[static_cast<size_t>(b)].score) {
      return candidates[static_cast<size_t>(a)].score > candidates[static_cast<size_t>(b)].score;
    }
    return candidates[static_cast<size_t>(a)].pixel < candidates[static_cast<size_t>(b)].pixel;
  });
  std::vector<char> suppressed(static_cast<size_t>(n), 0);
  std::vector<Cluster> clusters;
  for (int oi = 0; oi < n; ++oi) {
    const int i = order[static_cast<size_t>(oi)];
    if (suppressed[static_cast<size_t>(i)]) continue;
    Cluster cluster;
    cluster.keeper = i;
    cluster.members.push_back(i);
    suppressed[static_cast<size_t>(i)] = 1;
    for (int oj = oi + 1; oj < n; ++oj) {
      const int j = order[static_cast<size_t>(oj)];
      if (suppressed[static_cast<size_t>(j)]) continue;
      if (box_iou(candidates[static_cast<size_t>(i)].box, candidates[static_cast<size_t>(j)].box) >
          iou_thr) {
        suppressed[static_cast<size_t>(j)] = 1;
        cluster.members.push_back(j);
      }
    }
    clusters.push_back(std::move(cluster));
  }
  return clusters;
}

std::vector<InstanceHypothesis> recover_instances(const std::vector<Cluster>& clusters,
                                                  const std::vector<BoxCandidate>& candidates,
                                                  const Tensor& probs, int category,
                                                  int min_cluster_pixels) {
  const int h = probs.dim(1), w = probs.dim(2);
  std::vector<InstanceHypothesis> out;
  for (const Cluster& cluster : clusters) {
    if (static_cast<int>(cluster.members.size()) < min_cluster_pixels) continue;
    InstanceHypothesis hyp;
    hyp.category = category;
    hyp.height = h;
    hyp.width = w;
    hyp.box = candidates[static_cast<size_t>(cluster.keeper)].box;
    double score_sum = 0.0;
    for (int m : cluster.members) {
      const int pixel = candidates[static_cast<size_t>(m)].pixel;
      hyp.cluster.push_back(pixel);
      score_sum += probs.at(category, pixel / w, pixel % w);
    }
    std::sort(hyp.cluster.begin(), hyp.cluster.end());
    hyp.confidence = score_sum / static_cast<double>(cluster.members.size());
    out.push_back(std::move(hyp));
  }
  return out;
}

std::vector<InstanceHypothesis> region_nms(std::vector<InstanceHypothesis> hypotheses,
                                           double iou_thr, int max_per_category) {
  const int n = static_cast<int>(hypotheses.size());
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&hypotheses](int a, int b) {
    const auto& ha = hypotheses[static_cast<size_t>(a)];
    const auto& hb = hypotheses[static_cast<size_t>(b)];
    if (ha.confidence != hb.confidence) return ha.confidence > hb.confidence;
    if (ha.category != hb.category) return ha.category < hb.category;
    return a < b;
  });
  std::vector<char> dropped(static_cast<size_t>(n), 0);
  std::vector<InstanceHypothesis> kept;
  std::vector<int> per_category_count;
  for (int oi = 0; oi < n; ++oi) {
    const int i = order[static_cast<size_t>(oi)];
    if (dropped[static_cast<size_t>(i)]) continue;
    const InstanceHypothesis& hi = hypotheses[static_cast<size_t>(i)];
    if (static_cast<int>(per_category_count.size()) <= hi.category) {
      per_category_count.resize(static_cast<size_t>(hi.category) + 1, 0);
    }
    for (int oj = oi + 1; oj < n; ++oj) {
      const int j = order[static_cast<size_t>(oj)];
      if (dropped[static_cast<size_t>(j)]) continue;
      const InstanceHypothesis& hj = hypotheses[static_cast<size_t>(j)];
      if (hj.category != hi.category) continue;  // cross-category pairs never suppress
      if (mask_iou(hi, hj) > iou_thr) dropped[static_cast<size_t>(j)] = 1;
    }
    if (per_category_count[static_cast<size_t>(hi.category)] < max_per_category) {
      kept.push_back(hi);
      ++per_category_count[static_cast<size_t>(hi.category)];
    }
  }
  return kept;
}

std::vector<InstanceHypothesis> run_instance_pipeline(const Tensor& probs,
                                                      const Tensor& transform_map, int stride,
                                                      const PipelineConfig& cfg) {
  cfg.validate();
  if (probs.rank() != 3) throw std::invalid_argument("pipeline expects [K+1,H,W] probs");
  const int h = probs.dim(1), w = probs.dim(2);
  const int categories = probs.dim(0) - 1;
  if (transform_map.dim(0) != 4 * categories) {
    throw std::invalid_argument("pipeline: transform map must have 4 channels per category");
  }
  Tensor aligned = transform_map;
  if (transform_map.dim(1) != h || transform_map.dim(2) != w) {
    aligned = upsample_nearest(transform_map, stride, h, w);
  }
  const std::vector<LabelMap> masks = top_n_masks(probs, cfg.top_n);
  std::vector<InstanceHypothesis> all;
  for (int category = 1; category <= categories; ++category) {
    const std::vector<PixelBox> boxes =
        decode_boxes(aligned, masks[static_cast<size_t>(category - 1)], category, stride);
    std::vector<BoxCandidate> candidates;
    candidates.reserve(boxes.size());
    for (const PixelBox& pb : boxes) {
      candidates.push_back(
          {pb.pixel, pb.box, probs.at(category, pb.pixel / w, pb.pixel % w)});
    }
    const std::vector<Cluster> clusters = box_nms_cluster(candidates, cfg.box_nms_iou);
    std::vector<InstanceHypothesis> hyps =
        recover_instances(clusters, candidates, probs, category, cfg.min_cluster_pixels);
    for (auto& hyp : hyps) all.push_back(std::move(hyp));
  }
  return region_nms(std::move(all), cfg.region_nms_iou, cfg.max_instances_per_category);
}

std::string write_hypotheses(const std::string& dir, const std::string& stem,
                             const std::vector<InstanceHypothesis>& hypotheses) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir + ": " + ec.message());
  json items = json::array();
  for (size_t i = 0; i < hypotheses.size(); ++i) {
    const InstanceHypothesis& hyp = hypotheses[i];
    char name[96];
    std::snprintf(name, sizeof(name), "%s_mask_%03zu.fcrt", stem.c_str(), i);
    write_tensor((fs::path(dir) / name).string(), hyp.mask_tensor());
    items.push_back(json{{"category", hyp.category},
                         {"confidence", hyp.confidence},
                         {"box", {hyp.box.y_min, hyp.box.x_min, hyp.box.y_max, hyp.box.x_max}},
                         {"mask_file", name}});
  }
  const json doc{{"hypotheses", items}};
  const std::string path = (fs::path(dir) / (stem + "_hypotheses.json")).string();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << doc.dump(2) << "\n";
  return path;
}

std::vector<InstanceHypothesis> read_hypotheses(const std::string& json_path) {
  std::ifstream in(json_path);
  if (!in) throw std::runtime_error("cannot open " + json_path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw std::runtime_error(json_path + " is not valid JSON: " + e.what());
  }
  const fs::path base = fs::path(json_path).parent_path();
  std::vector<InstanceHypothesis> out;
  for (const auto& item : doc.at("hypotheses")) {
    InstanceHypothesis hyp;
    hyp.category = item.at("category").get<int>();
    hyp.confidence = item.at("confidence").get<double>();
    const auto& b = item.at("box");
    hyp.box = Box{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                  b.at(3).get<double>()};
    const Tensor mask = read_tensor((base / item.at("mask_file").get<std::string>()).string());
    hyp.height = mask.dim(0);
    hyp.width = mask.dim(1);
    for (std::int64_t p = 0; p < mask.size(); ++p) {
      if (mask[p] != 0.0) hyp.cluster.push_back(static_cast<int>(p));
    }
    out.push_back(std::move(hyp));
  }
  return out;
}

}  // namespace instseg

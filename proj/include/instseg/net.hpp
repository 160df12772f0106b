#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "instseg/box.hpp"
#include "instseg/rng.hpp"
#include "instseg/tensor.hpp"

namespace instseg {

struct ConvSpec {
  int kernel = 3;
  int stride = 1;
  int out_channels = 16;
};

struct StageSpec {
  int blocks = 2;
  int channels = 16;
  int stride = 2;  // nominal stride, absorbed by the first block
};

enum class HeadKind { kSemantic, kLocalization };

/// Stage/stride/dilation schedule of a fully convolutional residual network
/// plus its classifier. The classifier dilation is given in feature-grid
/// units at the target resolution and is applied as configured.
struct NetworkConfig {
  ConvSpec stem{3, 2, 16};
  std::vector<StageSpec> stages{{2, 16, 2}, {2, 32, 2}, {2, 64, 2}};
  int target_output_stride = 8;
  int classifier_kernel = 5;
  int classifier_dilation = 1;
  HeadKind head = HeadKind::kSemantic;
  int num_categories = 3;  // foreground categories K
  bool multilayer_head = false;
  int multilayer_hidden = 64;

  int out_channels() const {
    return head == HeadKind::kSemantic ? num_categories + 1 : 4 * num_categories;
  }
  int nominal_total_stride() const;
  void validate() const;
};

/// Classifier field-of-view in input pixels: ((k-1)*d + 1) * output_stride.
int compute_fov(int output_stride, int kernel, int dilation);

/// Reference (depth, output stride, classifier kernel, dilation, FoV) rows
/// used by the fov-table command; compute_fov must reproduce every fov value.
struct FovTableRow {
  int depth;
  int output_stride;
  int kernel;
  int dilation;
  int fov;
};

const std::vector<FovTableRow>& fov_reference_rows();

/// Realized per-layer (stride, dilation) schedule after applying the
/// hole-algorithm rebasing: a stage whose nominal stride would push the
/// cumulative stride past the target keeps its input sampling rate for the
/// absorbed conv (entry_dilation) and runs every subsequent conv at the new
/// rate (inner_dilation).
struct StagePlan {
  int stride = 1;
  int entry_dilation = 1;  // dilation multiplier for the conv that carried the stride
  int inner_dilation = 1;  // multiplier for all convs after it in the stage
};

struct SchedulePlan {
  StagePlan stem;
  std::vector<StagePlan> stages;
  int output_stride = 1;
};

SchedulePlan rebase_strides(const NetworkConfig& config);

/// Named parameter with a gradient buffer of identical shape.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
};

namespace detail {

struct Cache {
  std::vector<Tensor> saved;
  Tensor pop();
  void push(Tensor t) { saved.push_back(std::move(t)); }
};

struct Conv {
  Param w;  // [out_c, in_c, k, k]
  Param b;  // [out_c]
  int in_c = 0, out_c = 0, kernel = 1, stride = 1, dilation = 1;

  void init(const std::string& name, int in_channels, int out_channels, int k, int s, int d);
  Tensor forward(const Tensor& x, Cache& cache) const;
  Tensor backward(Cache& cache, const Tensor& gout);
};

struct Affine {
  Param scale;  // [c]
  Param bias;   // [c]
  int channels = 0;

  void init(const std::string& name, int c);
  Tensor forward(const Tensor& x, Cache& cache) const;
  Tensor backward(Cache& cache, const Tensor& gout);
};

Tensor relu_forward(const Tensor& x, Cache& cache);
Tensor relu_backward(Cache& cache, const Tensor& gout);

/// Pre-activation residual block: y = shortcut(x) + conv2(relu(aff2(conv1(
/// relu(aff1(x)))))). With a zero-initialized residual branch and no
/// projection the block is the identity map.
struct ResBlock {
  Affine a1;
  Conv c1;  // carries the stage stride / entry dilation when first in stage
  Affine a2;
  Conv c2;
  std::optional<Conv> proj;  // 1x1 projection when shape changes

  Tensor forward(const Tensor& x, Cache& cache) const;
  Tensor backward(Cache& cache, const Tensor& gout);
};

}  // namespace detail

/// Activation cache returned by forward and consumed by backward. A backward
/// call must use the cache of the matching forward.
using ForwardCache = detail::Cache;

class Network {
 public:
  explicit Network(NetworkConfig config);

  const NetworkConfig& config() const { return config_; }
  const SchedulePlan& schedule() const { return plan_; }
  int output_stride() const { return plan_.output_stride; }
  int fov() const {
    return compute_fov(plan_.output_stride, config_.classifier_kernel, config_.classifier_dilation);
  }

  /// He-style initialization of the trunk; classifier starts at zero.
  void init_params(Rng& rng);

  /// Runs the network on a [3,H,W] image; returns logits / transform maps of
  /// shape [C, ceil(H/s), ceil(W/s)]. Aborts if any activation goes
  /// non-finite, naming the offending layer.
  Tensor forward(const Tensor& image, ForwardCache& cache) const;
  Tensor forward(const Tensor& image) const;

  /// Accumulates parameter gradients from upstream grads; returns the input
  /// gradient. The cache must come from a matching forward call.
  Tensor backward(ForwardCache& cache, const Tensor& upstream);

  void zero_grads();
  void visit_params(const std::function<void(Param&)>& fn);
  void visit_params(const std::function<void(const Param&)>& fn) const;
  std::int64_t param_count() const;

  /// Checkpoint: directory with config.json plus one tensor file per named
  /// parameter.
  void save_checkpoint(const std::string& dir) const;
  static Network load_checkpoint(const std::string& dir);

  static std::string config_to_json(const NetworkConfig& c);
  static NetworkConfig config_from_json_string(const std::string& text);

 private:
  void build();

  NetworkConfig config_;
  SchedulePlan plan_;
  detail::Conv stem_;
  std::vector<std::vector<detail::ResBlock>> stages_;
  detail::Affine head_affine_;
  detail::Conv classifier_;
  std::optional<detail::Conv> head_extra_;  // 1x1 conv of the multilayer head
};

/// Momentum SGD over all parameters of a network. Velocity buffers persist
/// across steps; aborts on a non-finite update. A positive grad_clip bounds
/// the global L2 gradient norm before the update (the trunk has no batch
/// normalization, so hard-pixel batches can spike the affine-scale grads).
class SgdOptimizer {
 public:
  explicit SgdOptimizer(Network& net);
  void step(double lr, double momentum, double weight_decay, double grad_clip = 0.0);

 private:
  Network* net_;
  std::vector<Tensor> velocity_;
};

// Localization parameterization: per foreground pixel the head predicts
// (dy, dx, log h, log w) where dy/dx are offsets from the pixel center to
// the instance box center divided by the output stride and h/w are box
// extents in pixels.
struct LocTarget {
  double dy = 0.0, dx = 0.0, log_h = 0.0, log_w = 0.0;
};

LocTarget encode_loc(const Box& box, double pixel_cy, double pixel_cx, int stride);
Box decode_loc(const LocTarget& t, double pixel_cy, double pixel_cx, int stride);

/// Upsampling of [C,h,w] maps to out_h x out_w (out = ceil-divided source of
/// the given factor). Nearest replicates the owning cell; bilinear samples
/// with half-pixel center alignment.
Tensor upsample_nearest(const Tensor& t, int factor, int out_h, int out_w);
Tensor upsample_bilinear(const Tensor& t, int factor, int out_h, int out_w);
/// Transposes of the upsamplers for gradient flow.
Tensor upsample_nearest_backward(const Tensor& gout, int factor, int in_h, int in_w);
Tensor upsample_bilinear_backward(const Tensor& gout, int factor, int in_h, int in_w);

}  // namespace instseg

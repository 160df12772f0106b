#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace instseg {

/// Dense row-major real-valued array of rank 1..4. Maps use the layout
/// [channel, height, width] so that per-category channel slices are
/// contiguous. Innermost dimension is width.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> dims, double fill = 0.0);
  Tensor(std::vector<int> dims, std::vector<double> data);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.dims_); }

  int rank() const { return static_cast<int>(dims_.size()); }
  const std::vector<int>& dims() const { return dims_; }
  int dim(int i) const { return dims_[static_cast<size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Rank-specific accessors; bounds are the caller's responsibility.
  double& at(int a) { return data_[static_cast<size_t>(a)]; }
  double at(int a) const { return data_[static_cast<size_t>(a)]; }
  double& at(int a, int b) { return data_[static_cast<size_t>(a) * strides_[0] + b]; }
  double at(int a, int b) const { return data_[static_cast<size_t>(a) * strides_[0] + b]; }
  double& at(int a, int b, int c) {
    return data_[static_cast<size_t>(a) * strides_[0] + static_cast<size_t>(b) * strides_[1] + c];
  }
  double at(int a, int b, int c) const {
    return data_[static_cast<size_t>(a) * strides_[0] + static_cast<size_t>(b) * strides_[1] + c];
  }
  double& at(int a, int b, int c, int d) {
    return data_[static_cast<size_t>(a) * strides_[0] + static_cast<size_t>(b) * strides_[1] +
                 static_cast<size_t>(c) * strides_[2] + d];
  }
  double at(int a, int b, int c, int d) const {
    return data_[static_cast<size_t>(a) * strides_[0] + static_cast<size_t>(b) * strides_[1] +
                 static_cast<size_t>(c) * strides_[2] + d];
  }

  void fill(double v);
  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }
  std::string shape_str() const;

  bool operator==(const Tensor& other) const {
    return dims_ == other.dims_ && data_ == other.data_;
  }

 private:
  void init_strides();

  std::vector<int> dims_;
  std::array<std::size_t, 3> strides_{0, 0, 0};  // strides for all but the last axis
  std::vector<double> data_;
};

/// Integer-valued H x W map (semantic labels, instance ids). Negative values
/// mark ignored pixels where a module supports them.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<std::int32_t> values;

  LabelMap() = default;
  LabelMap(int h, int w, std::int32_t fill = 0)
      : height(h), width(w), values(static_cast<size_t>(h) * w, fill) {}

  std::int32_t& at(int y, int x) { return values[static_cast<size_t>(y) * width + x]; }
  std::int32_t at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }
  std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
};

/// Per-pixel softmax over the channel axis of a [K,H,W] tensor.
/// Rejects non-finite inputs.
Tensor softmax_channels(const Tensor& logits);

/// Per-pixel argmax over the channel axis of a [K,H,W] tensor. Ties go to the
/// lowest channel index.
LabelMap argmax_channels(const Tensor& scores);

/// Contiguous view copy of channel c of a [K,H,W] tensor as [H,W].
Tensor slice_channel(const Tensor& t, int channel);

Tensor label_map_to_tensor(const LabelMap& m);
LabelMap tensor_to_label_map(const Tensor& t);

}  // namespace instseg

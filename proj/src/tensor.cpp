#include "instseg/tensor.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace instseg {

namespace {

std::int64_t checked_element_count(const std::vector<int>& dims) {
  if (dims.empty() || dims.size() > 4) {
    throw std::invalid_argument("tensor rank must be 1..4, got " + std::to_string(dims.size()));
  }
  std::int64_t n = 1;
  for (int d : dims) {
    if (d < 1) throw std::invalid_argument("tensor extents must be >= 1");
    n *= d;
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> dims, double fill)
    : dims_(std::move(dims)), data_(static_cast<size_t>(checked_element_count(dims_)), fill) {
  init_strides();
}

Tensor::Tensor(std::vector<int> dims, std::vector<double> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
  if (checked_element_count(dims_) != static_cast<std::int64_t>(data_.size())) {
    throw std::invalid_argument("tensor data length does not match extents");
  }
  init_strides();
}

void Tensor::init_strides() {
  strides_ = {0, 0, 0};
  const int r = rank();
  std::size_t s = 1;
  for (int i = r - 1; i >= 1; --i) {
    s *= static_cast<std::size_t>(dims_[static_cast<size_t>(i)]);
    strides_[static_cast<size_t>(i - 1)] = s;
  }
  // Shift so strides_[i] is the stride of axis i regardless of rank.
  // For rank r, axes 0..r-2 have non-unit strides.
  std::array<std::size_t, 3> shifted{0, 0, 0};
  for (int i = 0; i + 1 < r; ++i) {
    std::size_t st = 1;
    for (int j = i + 1; j < r; ++j) st *= static_cast<std::size_t>(dims_[static_cast<size_t>(j)]);
    shifted[static_cast<size_t>(i)] = st;
  }
  strides_ = shifted;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  std::string s = "[";
  for (size_t i = 0; i < dims_.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims_[i]);
  }
  return s + "]";
}

Tensor softmax_channels(const Tensor& logits) {
  if (logits.rank() != 3) {
    throw std::invalid_argument("softmax_channels expects a [K,H,W] tensor, got " +
                                logits.shape_str());
  }
  if (!logits.all_finite()) {
    throw std::invalid_argument("softmax_channels: non-finite input");
  }
  const int k = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
  Tensor out(logits.dims());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double mx = logits.at(0, y, x);
      for (int c = 1; c < k; ++c) mx = std::max(mx, logits.at(c, y, x));
      double sum = 0.0;
      for (int c = 0; c < k; ++c) {
        const double e = std::exp(logits.at(c, y, x) - mx);
        out.at(c, y, x) = e;
        sum += e;
      }
      for (int c = 0; c < k; ++c) out.at(c, y, x) /= sum;
    }
  }
  return out;
}

LabelMap argmax_channels(const Tensor& scores) {
  if (scores.rank() != 3) {
    throw std::invalid_argument("argmax_channels expects a [K,H,W] tensor, got " +
                                scores.shape_str());
  }
  const int k = scores.dim(0), h = scores.dim(1), w = scores.dim(2);
  LabelMap out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int best = 0;
      double best_v = scores.at(0, y, x);
      for (int c = 1; c < k; ++c) {
        const double v = scores.at(c, y, x);
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      out.at(y, x) = best;
    }
  }
  return out;
}

Tensor slice_channel(const Tensor& t, int channel) {
  if (t.rank() != 3) {
    throw std::invalid_argument("slice_channel expects a [K,H,W] tensor");
  }
  if (channel < 0 || channel >= t.dim(0)) {
    throw std::invalid_argument("slice_channel: channel out of range");
  }
  const int h = t.dim(1), w = t.dim(2);
  Tensor out({h, w});
  const double* src = t.data() + static_cast<std::size_t>(channel) * h * w;
  std::copy(src, src + static_cast<std::size_t>(h) * w, out.data());
  return out;
}

Tensor label_map_to_tensor(const LabelMap& m) {
  Tensor t({m.height, m.width});
  for (std::int64_t i = 0; i < m.size(); ++i) t[i] = static_cast<double>(m.values[static_cast<size_t>(i)]);
  return t;
}

LabelMap tensor_to_label_map(const Tensor& t) {
  if (t.rank() != 2) throw std::invalid_argument("label map tensor must be rank 2");
  LabelMap m(t.dim(0), t.dim(1));
  for (std::int64_t i = 0; i < t.size(); ++i) {
    m.values[static_cast<size_t>(i)] = static_cast<std::int32_t>(std::lround(t[i]));
  }
  return m;
}

}  // namespace instseg

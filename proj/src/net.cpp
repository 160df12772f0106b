#include "instseg/net.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "instseg/tensor_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace instseg {

int compute_fov(int output_stride, int kernel, int dilation) {
  if (kernel < 1 || kernel % 2 == 0) {
    throw std::invalid_argument("compute_fov: kernel must be odd and >= 1");
  }
  if (dilation < 1) throw std::invalid_argument("compute_fov: dilation must be >= 1");
  if (output_stride < 1) throw std::invalid_argument("compute_fov: stride must be >= 1");
  return ((kernel - 1) * dilation + 1) * output_stride;
}

const std::vector<FovTableRow>& fov_reference_rows() {
  static const std::vector<FovTableRow> rows = [] {
    // (output stride, kernel, dilation, fov) combinations per depth.
    const int common[7][4] = {{16, 3, 6, 208}, {8, 3, 6, 104},  {8, 3, 12, 200}, {8, 3, 18, 296},
                              {8, 5, 6, 200},  {8, 5, 12, 392}, {8, 7, 6, 296}};
    const int extra50[2][4] = {{8, 5, 18, 584}, {8, 7, 12, 584}};
    std::vector<FovTableRow> r;
    for (const auto& c : common) r.push_back({50, c[0], c[1], c[2], c[3]});
    for (const auto& c : extra50) r.push_back({50, c[0], c[1], c[2], c[3]});
    for (const auto& c : common) r.push_back({101, c[0], c[1], c[2], c[3]});
    for (const auto& c : common) r.push_back({152, c[0], c[1], c[2], c[3]});
    return r;
  }();
  return rows;
}

int NetworkConfig::nominal_total_stride() const {
  int total = stem.stride;
  for (const auto& st : stages) total *= st.stride;
  return total;
}

void NetworkConfig::validate() const {
  if (stem.kernel < 1 || stem.kernel % 2 == 0) {
    throw std::invalid_argument("network: stem kernel must be odd");
  }
  if (stem.stride < 1 || stem.out_channels < 1) {
    throw std::invalid_argument("network: bad stem spec");
  }
  for (const auto& st : stages) {
    if (st.blocks < 1 || st.channels < 1 || st.stride < 1) {
      throw std::invalid_argument("network: bad stage spec");
    }
  }
  if (classifier_kernel < 1 || classifier_kernel % 2 == 0) {
    throw std::invalid_argument("network: classifier kernel must be odd");
  }
  if (classifier_dilation < 1) {
    throw std::invalid_argument("network: classifier dilation must be >= 1");
  }
  if (target_output_stride < 1) {
    throw std::invalid_argument("network: target output stride must be >= 1");
  }
  if (num_categories < 1) throw std::invalid_argument("network: need at least one category");
  if (multilayer_head && multilayer_hidden < 1) {
    throw std::invalid_argument("network: multilayer head needs hidden channels");
  }
}

SchedulePlan rebase_strides(const NetworkConfig& config) {
  config.validate();
  const int target = config.target_output_stride;
  if (config.nominal_total_stride() < target) {
    throw std::invalid_argument("rebase: nominal total stride below target output stride");
  }
  SchedulePlan plan;
  int cum = 1;   // realized cumulative stride
  int rate = 1;  // dilation multiplier from skipped downsampling
  auto place = [&](int nominal_stride) {
    StagePlan sp;
    sp.entry_dilation = rate;
    if (cum * nominal_stride <= target) {
      sp.stride = nominal_stride;
      cum *= nominal_stride;
    } else {
      sp.stride = 1;
      rate *= nominal_stride;
    }
    sp.inner_dilation = rate;
    return sp;
  };
  plan.stem = place(config.stem.stride);
  for (const auto& st : config.stages) plan.stages.push_back(place(st.stride));
  if (cum != target) {
    throw std::invalid_argument("rebase: target output stride not realizable from stage strides");
  }
  plan.output_stride = cum;
  return plan;
}

namespace detail {

Tensor Cache::pop() {
  if (saved.empty()) throw std::logic_error("forward cache exhausted; backward/forward mismatch");
  Tensor t = std::move(saved.back());
  saved.pop_back();
  return t;
}

namespace {

struct Range {
  int lo, hi;  // inclusive output range with in-bounds input
};

Range valid_range(int offset, int stride, int in_extent, int out_extent) {
  // positions o with 0 <= o*stride + offset < in_extent
  int lo = 0;
  if (offset < 0) lo = (-offset + stride - 1) / stride;
  int hi = (in_extent - 1 - offset) / stride;
  if (hi > out_extent - 1) hi = out_extent - 1;
  return {lo, hi};
}

}  // namespace

void Conv::init(const std::string& name, int in_channels, int out_channels, int k, int s, int d) {
  in_c = in_channels;
  out_c = out_channels;
  kernel = k;
  stride = s;
  dilation = d;
  w.name = name + ".w";
  w.value = Tensor({out_c, in_c, kernel, kernel});
  w.grad = Tensor::zeros_like(w.value);
  b.name = name + ".b";
  b.value = Tensor({out_c});
  b.grad = Tensor::zeros_like(b.value);
}

Tensor Conv::forward(const Tensor& x, Cache& cache) const {
  if (x.rank() != 3 || x.dim(0) != in_c) {
    throw std::invalid_argument("conv " + w.name + ": input shape " + x.shape_str() +
                                " does not match in_channels " + std::to_string(in_c));
  }
  const int h = x.dim(1), win = x.dim(2);
  const int span = (kernel - 1) * dilation + 1;
  const int pad = (kernel - 1) * dilation / 2;
  const int out_h = (h + 2 * pad - span) / stride + 1;
  const int out_w = (win + 2 * pad - span) / stride + 1;
  if (out_h < 1 || out_w < 1) {
    throw std::invalid_argument("conv " + w.name + ": input " + x.shape_str() + " too small");
  }
  Tensor y({out_c, out_h, out_w});
  for (int oc = 0; oc < out_c; ++oc) {
    const double bias = b.value.at(oc);
    double* yp = y.data() + static_cast<std::size_t>(oc) * out_h * out_w;
    for (int i = 0; i < out_h * out_w; ++i) yp[i] = bias;
  }
  for (int oc = 0; oc < out_c; ++oc) {
    for (int ic = 0; ic < in_c; ++ic) {
      for (int ky = 0; ky < kernel; ++ky) {
        const int oy_off = ky * dilation - pad;
        const Range ry = valid_range(oy_off, stride, h, out_h);
        for (int kx = 0; kx < kernel; ++kx) {
          const double wv = w.value.at(oc, ic, ky, kx);
          const int ox_off = kx * dilation - pad;
          const Range rx = valid_range(ox_off, stride, win, out_w);
          for (int oy = ry.lo; oy <= ry.hi; ++oy) {
            const int iy = oy * stride + oy_off;
            const double* xr = x.data() + (static_cast<std::size_t>(ic) * h + iy) * win;
            double* yr = y.data() + (static_cast<std::size_t>(oc) * out_h + oy) * out_w;
            int ix = rx.lo * stride + ox_off;
            for (int ox = rx.lo; ox <= rx.hi; ++ox, ix += stride) {
              yr[ox] += wv * xr[ix];
            }
          }
        }
      }
    }
  }
  cache.push(x);
  return y;
}

Tensor Conv::backward(Cache& cache, const Tensor& gout) {
  const Tensor x = cache.pop();
  const int h = x.dim(1), win = x.dim(2);
  const int out_h = gout.dim(1), out_w = gout.dim(2);
  const int pad = (kernel - 1) * dilation / 2;
  Tensor gin(x.dims());
  for (int oc = 0; oc < out_c; ++oc) {
    const double* gr = gout.data() + static_cast<std::size_t>(oc) * out_h * out_w;
    double acc = 0.0;
    for (int i = 0; i < out_h * out_w; ++i) acc += gr[i];
    b.grad.at(oc) += acc;
  }
  for (int oc = 0; oc < out_c; ++oc) {
    for (int ic = 0; ic < in_c; ++ic) {
      for (int ky = 0; ky < kernel; ++ky) {
        const int oy_off = ky * dilation - pad;
        const Range ry = valid_range(oy_off, stride, h, out_h);
        for (int kx = 0; kx < kernel; ++kx) {
          const double wv = w.value.at(oc, ic, ky, kx);
          const int ox_off = kx * dilation - pad;
          const Range rx = valid_range(ox_off, stride, win, out_w);
          double gw_acc = 0.0;
          for (int oy = ry.lo; oy <= ry.hi; ++oy) {
            const int iy = oy * stride + oy_off;
            const double* xr = x.data() + (static_cast<std::size_t>(ic) * h + iy) * win;
            double* gir = gin.data() + (static_cast<std::size_t>(ic) * h + iy) * win;
            const double* gr = gout.data() + (static_cast<std::size_t>(oc) * out_h + oy) * out_w;
            int ix = rx.lo * stride + ox_off;
            for (int ox = rx.lo; ox <= rx.hi; ++ox, ix += stride) {
              const double g = gr[ox];
              gw_acc += g * xr[ix];
              gir[ix] += wv * g;
            }
          }
          w.grad.at(oc, ic, ky, kx) += gw_acc;
        }
      }
    }
  }
  return gin;
}

void Affine::init(const std::string& name, int c) {
  channels = c;
  scale.name = name + ".scale";
  scale.value = Tensor({c}, 1.0);
  scale.grad = Tensor({c});
  bias.name = name + ".bias";
  bias.value = Tensor({c});
  bias.grad = Tensor({c});
}

Tensor Affine::forward(const Tensor& x, Cache& cache) const {
  if (x.rank() != 3 || x.dim(0) != channels) {
    throw std::invalid_argument("affine " + scale.name + ": bad input shape " + x.shape_str());
  }
  const int hw = x.dim(1) * x.dim(2);
  Tensor y(x.dims());
  for (int c = 0; c < channels; ++c) {
    const double s = scale.value.at(c), o = bias.value.at(c);
    const double* xr = x.data() + static_cast<std::size_t>(c) * hw;
    double* yr = y.data() + static_cast<std::size_t>(c) * hw;
    for (int i = 0; i < hw; ++i) yr[i] = s * xr[i] + o;
  }
  cache.push(x);
  return y;
}

Tensor Affine::backward(Cache& cache, const Tensor& gout) {
  const Tensor x = cache.pop();
  const int hw = x.dim(1) * x.dim(2);
  Tensor gin(x.dims());
  for (int c = 0; c < channels; ++c) {
    const double s = scale.value.at(c);
    const double* xr = x.data() + static_cast<std::size_t>(c) * hw;
    const double* gr = gout.data() + static_cast<std::size_t>(c) * hw;
    double* gir = gin.data() + static_cast<std::size_t>(c) * hw;
    double gs = 0.0, gb = 0.0;
    for (int i = 0; i < hw; ++i) {
      gs += gr[i] * xr[i];
      gb += gr[i];
      gir[i] = s * gr[i];
    }
    scale.grad.at(c) += gs;
    bias.grad.at(c) += gb;
  }
  return gin;
}

Tensor relu_forward(const Tensor& x, Cache& cache) {
  Tensor y(x.dims());
  for (std::int64_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  cache.push(x);
  return y;
}

Tensor relu_backward(Cache& cache, const Tensor& gout) {
  const Tensor x = cache.pop();
  Tensor gin(x.dims());
  for (std::int64_t i = 0; i < x.size(); ++i) gin[i] = x[i] > 0.0 ? gout[i] : 0.0;
  return gin;
}

Tensor ResBlock::forward(const Tensor& x, Cache& cache) const {
  Tensor h1 = a1.forward(x, cache);
  Tensor r1 = relu_forward(h1, cache);
  Tensor u = c1.forward(r1, cache);
  Tensor h2 = a2.forward(u, cache);
  Tensor r2 = relu_forward(h2, cache);
  Tensor v = c2.forward(r2, cache);
  Tensor shortcut = proj ? proj->forward(x, cache) : x;
  if (!shortcut.same_shape(v)) {
    throw std::logic_error("residual block shape mismatch: " + shortcut.shape_str() + " vs " +
                           v.shape_str());
  }
  for (std::int64_t i = 0; i < v.size(); ++i) v[i] += shortcut[i];
  return v;
}

Tensor ResBlock::backward(Cache& cache, const Tensor& gout) {
  // Pops must mirror forward pushes in reverse: proj first, then the branch.
  Tensor gshort = proj ? proj->backward(cache, gout) : gout;
  Tensor gr2 = c2.backward(cache, gout);
  Tensor gh2 = relu_backward(cache, gr2);
  Tensor gu = a2.backward(cache, gh2);
  Tensor gr1 = c1.backward(cache, gu);
  Tensor gh1 = relu_backward(cache, gr1);
  Tensor gx = a1.backward(cache, gh1);
  for (std::int64_t i = 0; i < gx.size(); ++i) gx[i] += gshort[i];
  return gx;
}

}  // namespace detail

Network::Network(NetworkConfig config) : config_(std::move(config)), plan_(rebase_strides(config_)) {
  build();
}

void Network::build() {
  stem_.init("stem", 3, config_.stem.out_channels, config_.stem.kernel, plan_.stem.stride,
             plan_.stem.entry_dilation);
  int in_c = config_.stem.out_channels;
  stages_.clear();
  for (size_t si = 0; si < config_.stages.size(); ++si) {
    const StageSpec& spec = config_.stages[si];
    const StagePlan& sp = plan_.stages[si];
    std::vector<detail::ResBlock> blocks(static_cast<size_t>(spec.blocks));
    for (int bi = 0; bi < spec.blocks; ++bi) {
      detail::ResBlock& blk = blocks[static_cast<size_t>(bi)];
      const std::string name = "stage" + std::to_string(si) + ".block" + std::to_string(bi);
      const bool first = bi == 0;
      const int stride = first ? sp.stride : 1;
      const int entry_dil = first ? sp.entry_dilation : sp.inner_dilation;
      blk.a1.init(name + ".a1", in_c);
      blk.c1.init(name + ".c1", in_c, spec.channels, 3, stride, entry_dil);
      blk.a2.init(name + ".a2", spec.channels);
      blk.c2.init(name + ".c2", spec.channels, spec.channels, 3, 1, sp.inner_dilation);
      if (first && (stride != 1 || in_c != spec.channels)) {
        blk.proj.emplace();
        blk.proj->init(name + ".proj", in_c, spec.channels, 1, stride, 1);
      }
      in_c = spec.channels;
    }
    stages_.push_back(std::move(blocks));
  }
  head_affine_.init("head.affine", in_c);
  const int head_out = config_.multilayer_head ? config_.multilayer_hidden : config_.out_channels();
  classifier_.init("classifier", in_c, head_out, config_.classifier_kernel, 1,
                   config_.classifier_dilation);
  if (config_.multilayer_head) {
    head_extra_.emplace();
    head_extra_->init("head.extra", config_.multilayer_hidden, config_.out_channels(), 1, 1, 1);
  }
}

void Network::init_params(Rng& rng) {
  auto he_fill = [&rng](detail::Conv& conv) {
    const double std = std::sqrt(2.0 / (conv.in_c * conv.kernel * conv.kernel));
    for (std::int64_t i = 0; i < conv.w.value.size(); ++i) conv.w.value[i] = std * rng.gaussian();
    conv.b.value.fill(0.0);
  };
  he_fill(stem_);
  for (auto& stage : stages_) {
    for (auto& blk : stage) {
      he_fill(blk.c1);
      // The second conv of each residual branch starts at zero so every
      // shape-preserving block begins as the identity map.
      blk.c2.w.value.fill(0.0);
      blk.c2.b.value.fill(0.0);
      if (blk.proj) he_fill(*blk.proj);
      blk.a1.scale.value.fill(1.0);
      blk.a1.bias.value.fill(0.0);
      blk.a2.scale.value.fill(1.0);
      blk.a2.bias.value.fill(0.0);
    }
  }
  if (config_.multilayer_head) {
    he_fill(classifier_);
    head_extra_->w.value.fill(0.0);
    head_extra_->b.value.fill(0.0);
  } else {
    classifier_.w.value.fill(0.0);
    classifier_.b.value.fill(0.0);
  }
}

namespace {

void check_finite(const std::string& layer, const Tensor& t) {
  if (!t.all_finite()) {
    throw std::runtime_error("non-finite activation after layer " + layer);
  }
}

}  // namespace

Tensor Network::forward(const Tensor& image, ForwardCache& cache) const {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw std::invalid_argument("network forward expects a [3,H,W] image, got " +
                                image.shape_str());
  }
  const int min_side = (fov() + 3) / 4;
  if (image.dim(1) < min_side || image.dim(2) < min_side) {
    throw std::invalid_argument("input " + image.shape_str() + " smaller than FoV/4 = " +
                                std::to_string(min_side) + "; kernels would act mostly on padding");
  }
  Tensor cur = stem_.forward(image, cache);
  check_finite("stem", cur);
  for (size_t si = 0; si < stages_.size(); ++si) {
    for (size_t bi = 0; bi < stages_[si].size(); ++bi) {
      cur = stages_[si][bi].forward(cur, cache);
      check_finite("stage" + std::to_string(si) + ".block" + std::to_string(bi), cur);
    }
  }
  cur = head_affine_.forward(cur, cache);
  cur = detail::relu_forward(cur, cache);
  cur = classifier_.forward(cur, cache);
  check_finite("classifier", cur);
  if (head_extra_) {
    cur = detail::relu_forward(cur, cache);
    cur = head_extra_->forward(cur, cache);
    check_finite("head.extra", cur);
  }
  return cur;
}

Tensor Network::forward(const Tensor& image) const {
  ForwardCache cache;
  return forward(image, cache);
}

Tensor Network::backward(ForwardCache& cache, const Tensor& upstream) {
  Tensor g = upstream;
  if (head_extra_) {
    g = head_extra_->backward(cache, g);
    g = detail::relu_backward(cache, g);
  }
  g = classifier_.backward(cache, g);
  g = detail::relu_backward(cache, g);
  g = head_affine_.backward(cache, g);
  for (auto si = stages_.rbegin(); si != stages_.rend(); ++si) {
    for (auto bi = si->rbegin(); bi != si->rend(); ++bi) {
      g = bi->backward(cache, g);
    }
  }
  g = stem_.backward(cache, g);
  if (!cache.saved.empty()) {
    throw std::logic_error("forward cache not fully consumed; forward/backward mismatch");
  }
  return g;
}

void Network::visit_params(const std::function<void(Param&)>& fn) {
  auto conv = [&fn](detail::Conv& c) {
    fn(c.w);
    fn(c.b);
  };
  auto affine = [&fn](detail::Affine& a) {
    fn(a.scale);
    fn(a.bias);
  };
  conv(stem_);
  for (auto& stage : stages_) {
    for (auto& blk : stage) {
      affine(blk.a1);
      conv(blk.c1);
      affine(blk.a2);
      conv(blk.c2);
      if (blk.proj) conv(*blk.proj);
    }
  }
  affine(head_affine_);
  conv(classifier_);
  if (head_extra_) conv(*head_extra_);
}

void Network::visit_params(const std::function<void(const Param&)>& fn) const {
  const_cast<Network*>(this)->visit_params([&fn](Param& p) { fn(p); });
}

std::int64_t Network::param_count() const {
  std::int64_t n = 0;
  visit_params([&n](const Param& p) { n += p.value.size(); });
  return n;
}

void Network::zero_grads() {
  visit_params([](Param& p) { p.grad.fill(0.0); });
}

std::string Network::config_to_json(const NetworkConfig& c) {
  json stages = json::array();
  for (const auto& st : c.stages) {
    stages.push_back({{"blocks", st.blocks}, {"channels", st.channels}, {"stride", st.stride}});
  }
  const json j{
      {"stem",
       {{"kernel", c.stem.kernel}, {"stride", c.stem.stride}, {"out_channels", c.stem.out_channels}}},
      {"stages", stages},
      {"target_output_stride", c.target_output_stride},
      {"classifier_kernel", c.classifier_kernel},
      {"classifier_dilation", c.classifier_dilation},
      {"head", c.head == HeadKind::kSemantic ? "semantic" : "localization"},
      {"num_categories", c.num_categories},
      {"multilayer_head", c.multilayer_head},
      {"multilayer_hidden", c.multilayer_hidden}};
  return j.dump(2);
}

NetworkConfig Network::config_from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("network config is not valid JSON: ") + e.what());
  }
  NetworkConfig c;
  const auto& js = j.at("stem");
  c.stem = ConvSpec{js.at("kernel").get<int>(), js.at("stride").get<int>(),
                    js.at("out_channels").get<int>()};
  c.stages.clear();
  for (const auto& st : j.at("stages")) {
    c.stages.push_back(StageSpec{st.at("blocks").get<int>(), st.at("channels").get<int>(),
                                 st.at("stride").get<int>()});
  }
  c.target_output_stride = j.at("target_output_stride").get<int>();
  c.classifier_kernel = j.at("classifier_kernel").get<int>();
  c.classifier_dilation = j.at("classifier_dilation").get<int>();
  const std::string head = j.at("head").get<std::string>();
  if (head == "semantic") {
    c.head = HeadKind::kSemantic;
  } else if (head == "localization") {
    c.head = HeadKind::kLocalization;
  } else {
    throw std::invalid_argument("network config: unknown head kind '" + head + "'");
  }
  c.num_categories = j.at("num_categories").get<int>();
  c.multilayer_head = j.value("multilayer_head", false);
  c.multilayer_hidden = j.value("multilayer_hidden", 64);
  c.validate();
  return c;
}

void Network::save_checkpoint(const std::string& dir) const {
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "params", ec);
  if (ec) throw std::runtime_error("cannot create checkpoint directory " + dir + ": " + ec.message());
  std::ofstream cfg(fs::path(dir) / "config.json", std::ios::trunc);
  if (!cfg) throw std::runtime_error("cannot write checkpoint config in " + dir);
  cfg << config_to_json(config_) << "\n";
  visit_params([&dir](const Param& p) {
    write_tensor((fs::path(dir) / "params" / (p.name + ".fcrt")).string(), p.value);
  });
}

Network Network::load_checkpoint(const std::string& dir) {
  std::ifstream cfg(fs::path(dir) / "config.json");
  if (!cfg) throw std::runtime_error("checkpoint " + dir + " has no config.json");
  std::string text((std::istreambuf_iterator<char>(cfg)), std::istreambuf_iterator<char>());
  Network net(config_from_json_string(text));
  net.visit_params([&dir](Param& p) {
    Tensor t = read_tensor((fs::path(dir) / "params" / (p.name + ".fcrt")).string());
    if (!t.same_shape(p.value)) {
      throw std::runtime_error("checkpoint parameter " + p.name + " has shape " + t.shape_str() +
                               ", expected " + p.value.shape_str());
    }
    p.value = std::move(t);
  });
  return net;
}

SgdOptimizer::SgdOptimizer(Network& net) : net_(&net) {
  net.visit_params([this](const Param& p) { velocity_.push_back(Tensor::zeros_like(p.value)); });
}

void SgdOptimizer::step(double lr, double momentum, double weight_decay, double grad_clip) {
  double scale = 1.0;
  if (grad_clip > 0.0) {
    double sq = 0.0;
    net_->visit_params([&sq](const Param& p) {
      for (std::int64_t i = 0; i < p.grad.size(); ++i) sq += p.grad[i] * p.grad[i];
    });
    const double norm = std::sqrt(sq);
    if (norm > grad_clip) scale = grad_clip / norm;
  }
  size_t idx = 0;
  net_->visit_params([&](Param& p) {
    Tensor& v = velocity_[idx++];
    for (std::int64_t i = 0; i < p.value.size(); ++i) {
      v[i] = momentum * v[i] + scale * p.grad[i] + weight_decay * p.value[i];
      p.value[i] -= lr * v[i];
      if (!std::isfinite(p.value[i])) {
        throw std::runtime_error("non-finite update for parameter " + p.name);
      }
    }
  });
}

LocTarget encode_loc(const Box& box, double pixel_cy, double pixel_cx, int stride) {
  LocTarget t;
  t.dy = (box.center_y() - pixel_cy) / stride;
  t.dx = (box.center_x() - pixel_cx) / stride;
  t.log_h = std::log(box.height());
  t.log_w = std::log(box.width());
  return t;
}

Box decode_loc(const LocTarget& t, double pixel_cy, double pixel_cx, int stride) {
  const double cy = pixel_cy + t.dy * stride;
  const double cx = pixel_cx + t.dx * stride;
  const double h = std::exp(t.log_h);
  const double w = std::exp(t.log_w);
  return Box{cy - 0.5 * h, cx - 0.5 * w, cy + 0.5 * h, cx + 0.5 * w};
}

Tensor upsample_nearest(const Tensor& t, int factor, int out_h, int out_w) {
  const int c = t.dim(0);
  Tensor out({c, out_h, out_w});
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < out_h; ++y) {
      const int iy = std::min(y / factor, t.dim(1) - 1);
      for (int x = 0; x < out_w; ++x) {
        const int ix = std::min(x / factor, t.dim(2) - 1);
        out.at(ch, y, x) = t.at(ch, iy, ix);
      }
    }
  }
  return out;
}

Tensor upsample_nearest_backward(const Tensor& gout, int factor, int in_h, int in_w) {
  const int c = gout.dim(0), oh = gout.dim(1), ow = gout.dim(2);
  Tensor gin({c, in_h, in_w});
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < oh; ++y) {
      const int iy = std::min(y / factor, in_h - 1);
      for (int x = 0; x < ow; ++x) {
        const int ix = std::min(x / factor, in_w - 1);
        gin.at(ch, iy, ix) += gout.at(ch, y, x);
      }
    }
  }
  return gin;
}

namespace {

struct Interp {
  int i0, i1;
  double f;  // weight of i1
};

Interp interp_coord(int out_pos, int factor, int in_extent) {
  double u = (out_pos + 0.5) / factor - 0.5;
  if (u < 0.0) u = 0.0;
  const double hi = in_extent - 1.0;
  if (u > hi) u = hi;
  const int i0 = static_cast<int>(u);
  const int i1 = std::min(i0 + 1, in_extent - 1);
  return {i0, i1, u - i0};
}

}  // namespace

Tensor upsample_bilinear(const Tensor& t, int factor, int out_h, int out_w) {
  const int c = t.dim(0), ih = t.dim(1), iw = t.dim(2);
  Tensor out({c, out_h, out_w});
  for (int y = 0; y < out_h; ++y) {
    const Interp vy = interp_coord(y, factor, ih);
    for (int x = 0; x < out_w; ++x) {
      const Interp vx = interp_coord(x, factor, iw);
      for (int ch = 0; ch < c; ++ch) {
        const double top = (1.0 - vx.f) * t.at(ch, vy.i0, vx.i0) + vx.f * t.at(ch, vy.i0, vx.i1);
        const double bot = (1.0 - vx.f) * t.at(ch, vy.i1, vx.i0) + vx.f * t.at(ch, vy.i1, vx.i1);
        out.at(ch, y, x) = (1.0 - vy.f) * top + vy.f * bot;
      }
    }
  }
  return out;
}

Tensor upsample_bilinear_backward(const Tensor& gout, int factor, int in_h, int in_w) {
  const int c = gout.dim(0), oh = gout.dim(1), ow = gout.dim(2);
  Tensor gin({c, in_h, in_w});
  for (int y = 0; y < oh; ++y) {
    const Interp vy = interp_coord(y, factor, in_h);
    for (int x = 0; x < ow; ++x) {
      const Interp vx = interp_coord(x, factor, in_w);
      for (int ch = 0; ch < c; ++ch) {
        const double g = gout.at(ch, y, x);
        gin.at(ch, vy.i0, vx.i0) += (1.0 - vy.f) * (1.0 - vx.f) * g;
        gin.at(ch, vy.i0, vx.i1) += (1.0 - vy.f) * vx.f * g;
        gin.at(ch, vy.i1, vx.i0) += vy.f * (1.0 - vx.f) * g;
        gin.at(ch, vy.i1, vx.i1) += vy.f * vx.f * g;
      }
    }
  }
  return gin;
}

}  // namespace instseg

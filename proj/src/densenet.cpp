#include "ecgstudy/densenet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Core>
#include <fmt/format.h>
#include <zlib.h>

#include "ecgstudy/ecg_io.hpp"
#include "ecgstudy/errors.hpp"

namespace ecgstudy {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

constexpr double kProbabilityFloor = 1e-12;

std::size_t conv_out(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

std::string layer_name(std::size_t block, std::size_t layer, std::string_view leaf) {
  return fmt::format("block{}.layer{}.{}", block, layer, leaf);
}

std::string transition_name(std::size_t block, std::string_view leaf) {
  return fmt::format("transition{}.{}", block, leaf);
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration and layout

void validate(const ModelConfig& c) {
  if (c.height == 0 || c.width == 0 || c.channels == 0 || c.n_blocks == 0 ||
      c.layers_per_block == 0 || c.growth_rate == 0 || c.initial_channels == 0 ||
      c.n_classes == 0 || c.stem_stride == 0 || c.stem_pool == 0) {
    fail(ErrorCode::argument, "model dimensions must be positive");
  }
  if (c.n_classes != kNumRhythms) {
    fail(ErrorCode::argument, fmt::format("model must have {} outputs", kNumRhythms));
  }
  if (!(c.compression > 0.0 && c.compression <= 1.0)) {
    fail(ErrorCode::argument, "compression must lie in (0, 1]");
  }
  if (!(c.bn_epsilon > 0.0) || !(c.bn_momentum >= 0.0 && c.bn_momentum < 1.0)) {
    fail(ErrorCode::argument, "invalid normalization constants");
  }
  std::size_t h = c.height + 2 >= 3 ? conv_out(c.height, 3, c.stem_stride, 1) : 0;
  std::size_t w = c.width + 2 >= 3 ? conv_out(c.width, 3, c.stem_stride, 1) : 0;
  h /= c.stem_pool;
  w /= c.stem_pool;
  for (std::size_t b = 0; b + 1 < c.n_blocks; ++b) {
    h /= 2;
    w /= 2;
  }
  if (h == 0 || w == 0) {
    fail(ErrorCode::argument,
         fmt::format("input {}x{} too small for {} blocks", c.height, c.width, c.n_blocks));
  }
}

ModelConfig reduced_config() {
  ModelConfig c;
  c.height = 8;
  c.width = 16;
  c.n_blocks = 1;
  c.layers_per_block = 2;
  return c;
}

ChannelPlan plan_channels(const ModelConfig& config) {
  validate(config);
  ChannelPlan plan;
  plan.stem = config.initial_channels;
  std::size_t channels = plan.stem;
  std::size_t h = conv_out(config.height, 3, config.stem_stride, 1) / config.stem_pool;
  std::size_t w = conv_out(config.width, 3, config.stem_stride, 1) / config.stem_pool;
  for (std::size_t b = 0; b < config.n_blocks; ++b) {
    plan.block_spatial.push_back({h, w});
    std::vector<std::size_t> inputs;
    for (std::size_t j = 0; j < config.layers_per_block; ++j) {
      inputs.push_back(channels);
      channels += config.growth_rate;
      // Concatenation invariant: entry + (j + 1) k channels after layer j.
      if (channels != inputs.front() + (j + 1) * config.growth_rate) {
        fail(ErrorCode::shape, "dense block channel bookkeeping broken");
      }
    }
    plan.block_layer_inputs.push_back(std::move(inputs));
    plan.block_outputs.push_back(channels);
    if (b + 1 < config.n_blocks) {
      channels = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::floor(static_cast<double>(channels) * config.compression)));
      plan.transition_outputs.push_back(channels);
      h /= 2;
      w /= 2;
    }
  }
  return plan;
}

const TensorSlot* ParamLayout::find(std::string_view name) const {
  for (const auto& slot : slots) {
    if (slot.name == name) return &slot;
  }
  return nullptr;
}

const TensorSlot& ParamLayout::at(std::string_view name) const {
  if (const auto* slot = find(name)) return *slot;
  fail(ErrorCode::argument, fmt::format("no parameter tensor named '{}'", name));
}

bool ParamLayout::operator==(const ParamLayout& other) const {
  if (total != other.total || slots.size() != other.slots.size()) return false;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& a = slots[i];
    const auto& b = other.slots[i];
    if (a.name != b.name || a.offset != b.offset || a.size != b.size || a.shape != b.shape) {
      return false;
    }
  }
  return true;
}

namespace {

void add_slot(ParamLayout& layout, std::string name, std::vector<std::size_t> shape) {
  const std::size_t size =
      std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  layout.slots.push_back({std::move(name), layout.total, size, std::move(shape)});
  layout.total += size;
}

}  // namespace

ParamLayout build_layout(const ModelConfig& config) {
  const auto plan = plan_channels(config);
  ParamLayout layout;
  add_slot(layout, "stem.conv.weight", {plan.stem, config.channels, 3, 3});
  for (std::size_t b = 0; b < config.n_blocks; ++b) {
    for (std::size_t j = 0; j < config.layers_per_block; ++j) {
      const std::size_t c = plan.block_layer_inputs[b][j];
      add_slot(layout, layer_name(b, j, "bn.gamma"), {c});
      add_slot(layout, layer_name(b, j, "bn.beta"), {c});
      add_slot(layout, layer_name(b, j, "conv.weight"), {config.growth_rate, c, 3, 3});
    }
    if (b + 1 < config.n_blocks) {
      const std::size_t c = plan.block_outputs[b];
      add_slot(layout, transition_name(b, "bn.gamma"), {c});
      add_slot(layout, transition_name(b, "bn.beta"), {c});
      add_slot(layout, transition_name(b, "conv.weight"), {plan.transition_outputs[b], c, 1, 1});
    }
  }
  const std::size_t c = plan.block_outputs.back();
  add_slot(layout, "head.bn.gamma", {c});
  add_slot(layout, "head.bn.beta", {c});
  add_slot(layout, "head.fc.weight", {config.n_classes, c});
  add_slot(layout, "head.fc.bias", {config.n_classes});
  return layout;
}

ParamLayout build_stats_layout(const ModelConfig& config) {
  const auto plan = plan_channels(config);
  ParamLayout layout;
  for (std::size_t b = 0; b < config.n_blocks; ++b) {
    for (std::size_t j = 0; j < config.layers_per_block; ++j) {
      const std::size_t c = plan.block_layer_inputs[b][j];
      add_slot(layout, layer_name(b, j, "bn.running_mean"), {c});
      add_slot(layout, layer_name(b, j, "bn.running_var"), {c});
    }
    if (b + 1 < config.n_blocks) {
      add_slot(layout, transition_name(b, "bn.running_mean"), {plan.block_outputs[b]});
      add_slot(layout, transition_name(b, "bn.running_var"), {plan.block_outputs[b]});
    }
  }
  add_slot(layout, "head.bn.running_mean", {plan.block_outputs.back()});
  add_slot(layout, "head.bn.running_var", {plan.block_outputs.back()});
  return layout;
}

std::span<double> Params::tensor(std::string_view name) {
  const auto& slot = layout.at(name);
  return std::span(values).subspan(slot.offset, slot.size);
}

std::span<const double> Params::tensor(std::string_view name) const {
  const auto& slot = layout.at(name);
  return std::span(values).subspan(slot.offset, slot.size);
}

std::span<double> Params::stats(std::string_view name) {
  const auto& slot = stats_layout.at(name);
  return std::span(running_stats).subspan(slot.offset, slot.size);
}

std::span<const double> Params::stats(std::string_view name) const {
  const auto& slot = stats_layout.at(name);
  return std::span(running_stats).subspan(slot.offset, slot.size);
}

Params init_params(const ModelConfig& config, std::uint64_t seed) {
  Params params;
  params.config = config;
  params.layout = build_layout(config);
  params.stats_layout = build_stats_layout(config);
  params.values.assign(params.layout.total, 0.0);
  params.running_stats.assign(params.stats_layout.total, 0.0);

  std::mt19937_64 rng(seed);
  for (const auto& slot : params.layout.slots) {
    auto values = std::span(params.values).subspan(slot.offset, slot.size);
    if (slot.name.ends_with("conv.weight")) {
      const std::size_t fan_in = slot.shape[1] * slot.shape[2] * slot.shape[3];
      std::normal_distribution<double> he(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
      for (double& v : values) v = he(rng);
    } else if (slot.name.ends_with("bn.gamma")) {
      std::fill(values.begin(), values.end(), 1.0);
    }
    // bn.beta and the affine head start at zero.
  }
  for (const auto& slot : params.stats_layout.slots) {
    if (slot.name.ends_with("running_var")) {
      std::fill_n(params.running_stats.begin() + static_cast<std::ptrdiff_t>(slot.offset),
                  slot.size, 1.0);
    }
  }
  return params;
}

// ---------------------------------------------------------------------------
// Kernels. Tensors are NCHW; a "sample stride" lets a layer read a channel
// prefix of a wider dense-block buffer in place.

namespace {

struct Tensor {
  std::size_t n = 0, c = 0, h = 0, w = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t n_, std::size_t c_, std::size_t h_, std::size_t w_)
      : n(n_), c(c_), h(h_), w(w_), data(n_ * c_ * h_ * w_, 0.0) {}

  std::size_t hw() const { return h * w; }
  std::size_t sample_size() const { return c * h * w; }
  double* sample(std::size_t i) { return data.data() + i * sample_size(); }
  const double* sample(std::size_t i) const { return data.data() + i * sample_size(); }
};

struct ConvShape {
  std::size_t c_in, c_out, kernel, stride, pad, h, w, oh, ow;

  std::size_t rows() const { return c_in * kernel * kernel; }
  std::size_t cols() const { return oh * ow; }
  bool pointwise() const { return kernel == 1 && stride == 1 && pad == 0; }
};

ConvShape make_conv(std::size_t c_in, std::size_t c_out, std::size_t kernel, std::size_t stride,
                    std::size_t pad, std::size_t h, std::size_t w) {
  return {c_in, c_out, kernel, stride, pad, h, w, conv_out(h, kernel, stride, pad),
          conv_out(w, kernel, stride, pad)};
}

void im2col(const double* in, const ConvShape& s, double* col) {
  const std::size_t p = s.cols();
  for (std::size_t c = 0; c < s.c_in; ++c) {
    const double* plane = in + c * s.h * s.w;
    for (std::size_t ky = 0; ky < s.kernel; ++ky) {
      for (std::size_t kx = 0; kx < s.kernel; ++kx) {
        double* row = col + ((c * s.kernel + ky) * s.kernel + kx) * p;
        for (std::size_t oy = 0; oy < s.oh; ++oy) {
          const long iy = static_cast<long>(oy * s.stride + ky) - static_cast<long>(s.pad);
          double* dst = row + oy * s.ow;
          if (iy < 0 || iy >= static_cast<long>(s.h)) {
            std::fill_n(dst, s.ow, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * s.w;
          for (std::size_t ox = 0; ox < s.ow; ++ox) {
            const long ix = static_cast<long>(ox * s.stride + kx) - static_cast<long>(s.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(s.w)) ? 0.0
                                                               : src[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvShape& s, double* din) {
  const std::size_t p = s.cols();
  for (std::size_t c = 0; c < s.c_in; ++c) {
    double* plane = din + c * s.h * s.w;
    for (std::size_t ky = 0; ky < s.kernel; ++ky) {
      for (std::size_t kx = 0; kx < s.kernel; ++kx) {
        const double* row = col + ((c * s.kernel + ky) * s.kernel + kx) * p;
        for (std::size_t oy = 0; oy < s.oh; ++oy) {
          const long iy = static_cast<long>(oy * s.stride + ky) - static_cast<long>(s.pad);
          if (iy < 0 || iy >= static_cast<long>(s.h)) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * s.w;
          const double* src = row + oy * s.ow;
          for (std::size_t ox = 0; ox < s.ow; ++ox) {
            const long ix = static_cast<long>(ox * s.stride + kx) - static_cast<long>(s.pad);
            if (ix >= 0 && ix < static_cast<long>(s.w)) dst[static_cast<std::size_t>(ix)] += src[ox];
          }
        }
      }
    }
  }
}

// out (c_out x P) = W (c_out x c_in k k) * col (c_in k k x P), one sample.
void conv_forward(const double* in, const double* weight, const ConvShape& s,
                  std::vector<double>& col, double* out) {
  const double* cols = in;
  if (!s.pointwise()) {
    col.resize(s.rows() * s.cols());
    im2col(in, s, col.data());
    cols = col.data();
  }
  ConstMatrixMap w(weight, static_cast<Eigen::Index>(s.c_out), static_cast<Eigen::Index>(s.rows()));
  ConstMatrixMap x(cols, static_cast<Eigen::Index>(s.rows()), static_cast<Eigen::Index>(s.cols()));
  MatrixMap y(out, static_cast<Eigen::Index>(s.c_out), static_cast<Eigen::Index>(s.cols()));
  y.noalias() = w * x;
}

// Accumulates dW and (when din is non-null) dX for one sample.
void conv_backward(const double* in, const double* weight, const double* dout, const ConvShape& s,
                   std::vector<double>& col, std::vector<double>& dcol, double* dweight,
                   double* din) {
  const double* cols = in;
  if (!s.pointwise()) {
    col.resize(s.rows() * s.cols());
    im2col(in, s, col.data());
    cols = col.data();
  }
  const auto rows = static_cast<Eigen::Index>(s.rows());
  const auto p = static_cast<Eigen::Index>(s.cols());
  const auto c_out = static_cast<Eigen::Index>(s.c_out);
  ConstMatrixMap x(cols, rows, p);
  ConstMatrixMap dy(dout, c_out, p);
  MatrixMap dw(dweight, c_out, rows);
  dw.noalias() += dy * x.transpose();
  if (din == nullptr) return;
  ConstMatrixMap w(weight, c_out, rows);
  if (s.pointwise()) {
    MatrixMap dx(din, rows, p);
    dx.noalias() += w.transpose() * dy;
    return;
  }
  dcol.resize(s.rows() * s.cols());
  MatrixMap dx(dcol.data(), rows, p);
  dx.noalias() = w.transpose() * dy;
  col2im_add(dcol.data(), s, din);
}

void avg_pool(const Tensor& in, std::size_t k, Tensor& out) {
  out = Tensor(in.n, in.c, in.h / k, in.w / k);
  const double inv = 1.0 / static_cast<double>(k * k);
  for (std::size_t i = 0; i < in.n; ++i) {
    for (std::size_t c = 0; c < in.c; ++c) {
      const double* src = in.sample(i) + c * in.hw();
      double* dst = out.sample(i) + c * out.hw();
      for (std::size_t y = 0; y < out.h; ++y) {
        for (std::size_t x = 0; x < out.w; ++x) {
          double acc = 0.0;
          for (std::size_t dy = 0; dy < k; ++dy) {
            for (std::size_t dx = 0; dx < k; ++dx) acc += src[(y * k + dy) * in.w + x * k + dx];
          }
          dst[y * out.w + x] = acc * inv;
        }
      }
    }
  }
}

// dout has the pooled shape, with the given per-sample stride (channel prefix of a buffer).
void avg_pool_backward(const double* dout, std::size_t dout_stride, std::size_t k, Tensor& din) {
  const double inv = 1.0 / static_cast<double>(k * k);
  const std::size_t oh = din.h / k;
  const std::size_t ow = din.w / k;
  std::fill(din.data.begin(), din.data.end(), 0.0);
  for (std::size_t i = 0; i < din.n; ++i) {
    for (std::size_t c = 0; c < din.c; ++c) {
      const double* src = dout + i * dout_stride + c * oh * ow;
      double* dst = din.sample(i) + c * din.hw();
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
          const double g = src[y * ow + x] * inv;
          for (std::size_t dy = 0; dy < k; ++dy) {
            for (std::size_t dx = 0; dx < k; ++dx) dst[(y * k + dy) * din.w + x * k + dx] = g;
          }
        }
      }
    }
  }
}

struct BnCache {
  std::size_t n = 0, c = 0, hw = 0;
  std::vector<double> xhat;  // train only
  std::vector<double> act;   // relu(gamma xhat + beta), dense n x c x hw
  std::vector<double> mean, var, inv_std;
};

// Normalization + ReLU over `c` channels read at in + i * in_stride.
void bn_relu_forward(const double* in, std::size_t in_stride, std::size_t n, std::size_t c,
                     std::size_t hw, const double* gamma, const double* beta, Mode mode,
                     const double* running_mean, const double* running_var, double eps,
                     BnCache& cache) {
  cache.n = n;
  cache.c = c;
  cache.hw = hw;
  cache.act.assign(n * c * hw, 0.0);
  cache.mean.assign(c, 0.0);
  cache.var.assign(c, 0.0);
  cache.inv_std.assign(c, 0.0);
  const bool training = mode == Mode::train;
  if (training) cache.xhat.assign(n * c * hw, 0.0);
  const double count = static_cast<double>(n * hw);

  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean, var;
    if (training) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* x = in + i * in_stride + ch * hw;
        for (std::size_t k = 0; k < hw; ++k) acc += x[k];
      }
      mean = acc / count;
      double sq = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* x = in + i * in_stride + ch * hw;
        for (std::size_t k = 0; k < hw; ++k) sq += (x[k] - mean) * (x[k] - mean);
      }
      var = sq / count;
    } else {
      mean = running_mean[ch];
      var = running_var[ch];
    }
    const double inv_std = 1.0 / std::sqrt(var + eps);
    cache.mean[ch] = mean;
    cache.var[ch] = var;
    cache.inv_std[ch] = inv_std;
    for (std::size_t i = 0; i < n; ++i) {
      const double* x = in + i * in_stride + ch * hw;
      const std::size_t base = (i * c + ch) * hw;
      for (std::size_t k = 0; k < hw; ++k) {
        const double xh = (x[k] - mean) * inv_std;
        if (training) cache.xhat[base + k] = xh;
        const double y = gamma[ch] * xh + beta[ch];
        cache.act[base + k] = y > 0.0 ? y : 0.0;
      }
    }
  }
}

// dact is consumed (masked in place). Gradient w.r.t. the input is accumulated
// into din + i * din_stride.
void bn_relu_backward(const BnCache& cache, const double* gamma, std::vector<double>& dact,
                      double* dgamma, double* dbeta, double* din, std::size_t din_stride) {
  const std::size_t n = cache.n, c = cache.c, hw = cache.hw;
  const double count = static_cast<double>(n * hw);
  for (std::size_t k = 0; k < dact.size(); ++k) {
    if (!(cache.act[k] > 0.0)) dact[k] = 0.0;
  }
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t base = (i * c + ch) * hw;
      for (std::size_t k = 0; k < hw; ++k) {
        sum_dy += dact[base + k];
        sum_dy_xhat += dact[base + k] * cache.xhat[base + k];
      }
    }
    dbeta[ch] += sum_dy;
    dgamma[ch] += sum_dy_xhat;
    const double scale = gamma[ch] * cache.inv_std[ch] / count;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t base = (i * c + ch) * hw;
      double* dx = din + i * din_stride + ch * hw;
      for (std::size_t k = 0; k < hw; ++k) {
        dx[k] += scale * (count * dact[base + k] - sum_dy - cache.xhat[base + k] * sum_dy_xhat);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Network

struct Offsets {
  std::size_t stem_conv;
  struct Layer {
    std::size_t gamma, beta, conv, running_mean, running_var;
  };
  std::vector<std::vector<Layer>> layers;
  std::vector<Layer> transitions;
  Layer head_bn;
  std::size_t fc_weight, fc_bias;
};

Offsets resolve_offsets(const Params& p) {
  Offsets o;
  o.stem_conv = p.layout.at("stem.conv.weight").offset;
  const auto& cfg = p.config;
  auto layer = [&](auto name_of) {
    return Offsets::Layer{p.layout.at(name_of("bn.gamma")).offset,
                          p.layout.at(name_of("bn.beta")).offset,
                          p.layout.find(name_of("conv.weight"))
                              ? p.layout.at(name_of("conv.weight")).offset
                              : 0,
                          p.stats_layout.at(name_of("bn.running_mean")).offset,
                          p.stats_layout.at(name_of("bn.running_var")).offset};
  };
  o.layers.resize(cfg.n_blocks);
  for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
    for (std::size_t j = 0; j < cfg.layers_per_block; ++j) {
      o.layers[b].push_back(layer([&](std::string_view leaf) { return layer_name(b, j, leaf); }));
    }
    if (b + 1 < cfg.n_blocks) {
      o.transitions.push_back(
          layer([&](std::string_view leaf) { return transition_name(b, leaf); }));
    }
  }
  o.head_bn = layer([](std::string_view leaf) { return fmt::format("head.{}", leaf); });
  o.fc_weight = p.layout.at("head.fc.weight").offset;
  o.fc_bias = p.layout.at("head.fc.bias").offset;
  return o;
}

struct ForwardCache {
  Tensor input;
  ConvShape stem_shape{};
  Tensor stem_out;  // before pooling
  std::vector<Tensor> blocks;
  std::vector<std::vector<ConvShape>> layer_shapes;
  std::vector<std::vector<BnCache>> layer_bn;
  std::vector<ConvShape> transition_shapes;
  std::vector<BnCache> transition_bn;
  std::vector<Tensor> transition_out;  // before pooling
  BnCache head_bn;
  std::vector<double> pooled;  // n x C
  std::vector<double> logits;  // n x classes
};

class Network {
 public:
  explicit Network(const Params& params)
      : p_(params), plan_(plan_channels(params.config)), off_(resolve_offsets(params)) {
    if (p_.values.size() != p_.layout.total || !(p_.layout == build_layout(p_.config))) {
      fail(ErrorCode::shape, "parameter vector does not match the model layout");
    }
  }

  void check_eval_ready() const {
    if (p_.running_stats.size() != p_.stats_layout.total ||
        !(p_.stats_layout == build_stats_layout(p_.config))) {
      fail(ErrorCode::argument, "eval mode needs running normalization statistics");
    }
    for (const auto& slot : p_.stats_layout.slots) {
      for (std::size_t k = 0; k < slot.size; ++k) {
        const double v = p_.running_stats[slot.offset + k];
        if (!std::isfinite(v) || (slot.name.ends_with("running_var") && !(v >= 0.0))) {
          fail(ErrorCode::argument, fmt::format("running statistic '{}' is invalid", slot.name));
        }
      }
    }
  }

  void run(std::span<const ModelImage> images, Mode mode, ForwardCache& fc) const {
    const auto& cfg = p_.config;
    const std::size_t n = images.size();
    if (n == 0) fail(ErrorCode::shape, "empty batch");
    for (std::size_t i = 0; i < n; ++i) {
      const auto& im = images[i];
      if (im.height != cfg.height || im.width != cfg.width || cfg.channels != 1 ||
          im.pixels.size() != im.height * im.width) {
        fail(ErrorCode::shape,
             fmt::format("image {} is {}x{}x1, model expects {}x{}x{}", i, im.height, im.width,
                         cfg.height, cfg.width, cfg.channels));
      }
    }
    if (mode == Mode::eval) check_eval_ready();
    const double* theta = p_.values.data();
    const double* stats = p_.running_stats.data();
    std::vector<double> col;

    fc.input = Tensor(n, 1, cfg.height, cfg.width);
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(images[i].pixels.begin(), images[i].pixels.end(), fc.input.sample(i));
    }

    // Stem.
    fc.stem_shape = make_conv(cfg.channels, plan_.stem, 3, cfg.stem_stride, 1, cfg.height, cfg.width);
    const auto& ss = fc.stem_shape;
    fc.stem_out = Tensor(n, plan_.stem, ss.oh, ss.ow);
    for (std::size_t i = 0; i < n; ++i) {
      conv_forward(fc.input.sample(i), theta + off_.stem_conv, ss, col, fc.stem_out.sample(i));
    }
    Tensor entry;
    if (cfg.stem_pool > 1) {
      avg_pool(fc.stem_out, cfg.stem_pool, entry);
    } else {
      entry = fc.stem_out;
    }

    fc.blocks.assign(cfg.n_blocks, {});
    fc.layer_shapes.assign(cfg.n_blocks, {});
    fc.layer_bn.assign(cfg.n_blocks, {});
    fc.transition_shapes.clear();
    fc.transition_bn.assign(cfg.n_blocks > 0 ? cfg.n_blocks - 1 : 0, {});
    fc.transition_out.assign(cfg.n_blocks > 0 ? cfg.n_blocks - 1 : 0, {});

    for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
      const std::size_t total = plan_.block_outputs[b];
      Tensor& buf = fc.blocks[b];
      buf = Tensor(n, total, entry.h, entry.w);
      const std::size_t hw = buf.hw();
      for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(entry.sample(i), entry.sample_size(), buf.sample(i));
      }
      fc.layer_bn[b].resize(cfg.layers_per_block);
      for (std::size_t j = 0; j < cfg.layers_per_block; ++j) {
        const std::size_t c = plan_.block_layer_inputs[b][j];
        const auto& o = off_.layers[b][j];
        auto& bn = fc.layer_bn[b][j];
        bn_relu_forward(buf.data.data(), buf.sample_size(), n, c, hw, theta + o.gamma,
                        theta + o.beta, mode, stats + o.running_mean, stats + o.running_var,
                        cfg.bn_epsilon, bn);
        const auto shape = make_conv(c, cfg.growth_rate, 3, 1, 1, buf.h, buf.w);
        fc.layer_shapes[b].push_back(shape);
        for (std::size_t i = 0; i < n; ++i) {
          conv_forward(bn.act.data() + i * c * hw, theta + o.conv, shape, col,
                       buf.sample(i) + c * hw);
        }
      }
      if (b + 1 < cfg.n_blocks) {
        const auto& o = off_.transitions[b];
        auto& bn = fc.transition_bn[b];
        bn_relu_forward(buf.data.data(), buf.sample_size(), n, total, hw, theta + o.gamma,
                        theta + o.beta, mode, stats + o.running_mean, stats + o.running_var,
                        cfg.bn_epsilon, bn);
        const std::size_t c_out = plan_.transition_outputs[b];
        const auto shape = make_conv(total, c_out, 1, 1, 0, buf.h, buf.w);
        fc.transition_shapes.push_back(shape);
        Tensor& t = fc.transition_out[b];
        t = Tensor(n, c_out, buf.h, buf.w);
        for (std::size_t i = 0; i < n; ++i) {
          conv_forward(bn.act.data() + i * total * hw, theta + o.conv, shape, col, t.sample(i));
        }
        avg_pool(t, 2, entry);
      }
    }

    // Head.
    const Tensor& last = fc.blocks.back();
    const std::size_t c = last.c;
    const std::size_t hw = last.hw();
    bn_relu_forward(last.data.data(), last.sample_size(), n, c, hw, theta + off_.head_bn.gamma,
                    theta + off_.head_bn.beta, mode, stats + off_.head_bn.running_mean,
                    stats + off_.head_bn.running_var, cfg.bn_epsilon, fc.head_bn);
    fc.pooled.assign(n * c, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* a = fc.head_bn.act.data() + (i * c + ch) * hw;
        double acc = 0.0;
        for (std::size_t k = 0; k < hw; ++k) acc += a[k];
        fc.pooled[i * c + ch] = acc / static_cast<double>(hw);
      }
    }
    const std::size_t k = cfg.n_classes;
    fc.logits.assign(n * k, 0.0);
    const double* wfc = theta + off_.fc_weight;
    const double* bfc = theta + off_.fc_bias;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t cls = 0; cls < k; ++cls) {
        double acc = bfc[cls];
        for (std::size_t ch = 0; ch < c; ++ch) acc += wfc[cls * c + ch] * fc.pooled[i * c + ch];
        fc.logits[i * k + cls] = acc;
      }
    }
  }

  // dlogits: n x classes. Returns the gradient over the trainable layout.
  std::vector<double> backward(const ForwardCache& fc, const std::vector<double>& dlogits) const {
    const auto& cfg = p_.config;
    const double* theta = p_.values.data();
    std::vector<double> g(p_.layout.total, 0.0);
    double* grad = g.data();
    const std::size_t n = fc.input.n;
    std::vector<double> col, dcol;

    // Head.
    const Tensor& last = fc.blocks.back();
    const std::size_t c = last.c;
    const std::size_t hw = last.hw();
    const std::size_t k = cfg.n_classes;
    const double* wfc = theta + off_.fc_weight;
    std::vector<double> dact(n * c * hw, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t cls = 0; cls < k; ++cls) {
        const double d = dlogits[i * k + cls];
        grad[off_.fc_bias + cls] += d;
        for (std::size_t ch = 0; ch < c; ++ch) {
          grad[off_.fc_weight + cls * c + ch] += d * fc.pooled[i * c + ch];
        }
      }
      for (std::size_t ch = 0; ch < c; ++ch) {
        double dg = 0.0;
        for (std::size_t cls = 0; cls < k; ++cls) dg += dlogits[i * k + cls] * wfc[cls * c + ch];
        const double spread = dg / static_cast<double>(hw);
        std::fill_n(dact.data() + (i * c + ch) * hw, hw, spread);
      }
    }
    Tensor dbuf(n, c, last.h, last.w);
    bn_relu_backward(fc.head_bn, theta + off_.head_bn.gamma, dact, grad + off_.head_bn.gamma,
                     grad + off_.head_bn.beta, dbuf.data.data(), dbuf.sample_size());

    for (std::size_t bi = cfg.n_blocks; bi-- > 0;) {
      const Tensor& buf = fc.blocks[bi];
      const std::size_t bhw = buf.hw();
      for (std::size_t j = cfg.layers_per_block; j-- > 0;) {
        const std::size_t cin = plan_.block_layer_inputs[bi][j];
        const auto& o = off_.layers[bi][j];
        const auto& shape = fc.layer_shapes[bi][j];
        const auto& bn = fc.layer_bn[bi][j];
        std::vector<double> dlayer(n * cin * bhw, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          conv_backward(bn.act.data() + i * cin * bhw, theta + o.conv,
                        dbuf.sample(i) + cin * bhw, shape, col, dcol, grad + o.conv,
                        dlayer.data() + i * cin * bhw);
        }
        bn_relu_backward(bn, theta + o.gamma, dlayer, grad + o.gamma, grad + o.beta,
                         dbuf.data.data(), dbuf.sample_size());
      }
      // dbuf's leading channels now hold the gradient of the block entry.
      if (bi > 0) {
        const std::size_t t = bi - 1;
        const Tensor& prev = fc.blocks[t];
        const Tensor& tout = fc.transition_out[t];
        Tensor dt(n, tout.c, tout.h, tout.w);
        avg_pool_backward(dbuf.data.data(), dbuf.sample_size(), 2, dt);
        const auto& o = off_.transitions[t];
        const auto& bn = fc.transition_bn[t];
        const auto& shape = fc.transition_shapes[t];
        std::vector<double> dtrans(n * prev.c * prev.hw(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          conv_backward(bn.act.data() + i * prev.c * prev.hw(), theta + o.conv, dt.sample(i),
                        shape, col, dcol, grad + o.conv, dtrans.data() + i * prev.c * prev.hw());
        }
        Tensor dprev(n, prev.c, prev.h, prev.w);
        bn_relu_backward(bn, theta + o.gamma, dtrans, grad + o.gamma, grad + o.beta,
                         dprev.data.data(), dprev.sample_size());
        dbuf = std::move(dprev);
      } else {
        Tensor dstem(n, fc.stem_out.c, fc.stem_out.h, fc.stem_out.w);
        if (cfg.stem_pool > 1) {
          avg_pool_backward(dbuf.data.data(), dbuf.sample_size(), cfg.stem_pool, dstem);
        } else {
          for (std::size_t i = 0; i < n; ++i) {
            std::copy_n(dbuf.sample(i), dstem.sample_size(), dstem.sample(i));
          }
        }
        for (std::size_t i = 0; i < n; ++i) {
          conv_backward(fc.input.sample(i), theta + off_.stem_conv, dstem.sample(i), fc.stem_shape,
                        col, dcol, grad + off_.stem_conv, nullptr);
        }
      }
    }
    return g;
  }

  // Per-normalization batch statistics in the stats layout.
  void collect_stats(const ForwardCache& fc, std::vector<double>& means,
                     std::vector<double>& vars) const {
    means.assign(p_.stats_layout.total, 0.0);
    vars.assign(p_.stats_layout.total, 0.0);
    auto put = [&](const BnCache& bn, const Offsets::Layer& o) {
      std::copy(bn.mean.begin(), bn.mean.end(), means.begin() + static_cast<std::ptrdiff_t>(o.running_mean));
      std::copy(bn.var.begin(), bn.var.end(), vars.begin() + static_cast<std::ptrdiff_t>(o.running_var));
    };
    for (std::size_t b = 0; b < fc.layer_bn.size(); ++b) {
      for (std::size_t j = 0; j < fc.layer_bn[b].size(); ++j) put(fc.layer_bn[b][j], off_.layers[b][j]);
    }
    for (std::size_t t = 0; t < fc.transition_bn.size(); ++t) put(fc.transition_bn[t], off_.transitions[t]);
    put(fc.head_bn, off_.head_bn);
  }

  std::vector<Prediction> predictions(const ForwardCache& fc) const {
    const std::size_t k = p_.config.n_classes;
    const std::size_t n = fc.logits.size() / k;
    std::vector<Prediction> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double* z = fc.logits.data() + i * k;
      const double zmax = *std::max_element(z, z + k);
      double sum = 0.0;
      std::array<double, kNumRhythms> e{};
      for (std::size_t cls = 0; cls < k; ++cls) {
        e[cls] = std::exp(z[cls] - zmax);
        sum += e[cls];
      }
      auto& pred = out[i];
      for (std::size_t cls = 0; cls < k; ++cls) pred.probabilities[cls] = e[cls] / sum;
      const auto best = std::max_element(pred.probabilities.begin(), pred.probabilities.end());
      pred.predicted_class = static_cast<Rhythm>(best - pred.probabilities.begin());
      pred.model_version = p_.model_version;
    }
    return out;
  }

 private:
  const Params& p_;
  ChannelPlan plan_;
  Offsets off_;
};

void check_labels(std::span<const std::size_t> labels, std::size_t n) {
  if (labels.size() != n) {
    fail(ErrorCode::argument, fmt::format("{} labels for {} predictions", labels.size(), n));
  }
  for (std::size_t label : labels) {
    if (label >= kNumRhythms) {
      fail(ErrorCode::argument, fmt::format("label {} outside [0, {})", label, kNumRhythms));
    }
  }
}

}  // namespace

std::vector<Prediction> forward(const Params& params, std::span<const ModelImage> images,
                                Mode mode) {
  Network net(params);
  ForwardCache fc;
  net.run(images, mode, fc);
  return net.predictions(fc);
}

double cross_entropy(std::span<const Prediction> predictions, std::span<const std::size_t> labels) {
  check_labels(labels, predictions.size());
  if (predictions.empty()) fail(ErrorCode::argument, "empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    total -= std::log(std::max(predictions[i].probabilities[labels[i]], kProbabilityFloor));
  }
  return total / static_cast<double>(predictions.size());
}

GradResult grad(const Params& params, std::span<const ModelImage> images,
                std::span<const std::size_t> labels) {
  check_labels(labels, images.size());
  Network net(params);
  ForwardCache fc;
  net.run(images, Mode::train, fc);
  GradResult result;
  result.predictions = net.predictions(fc);
  result.loss = cross_entropy(result.predictions, labels);
  if (!std::isfinite(result.loss)) fail(ErrorCode::numeric, "non-finite loss");

  // d/dz of mean -log(max(p, floor)); zero where the floor is active.
  const std::size_t n = images.size();
  const std::size_t k = params.config.n_classes;
  std::vector<double> dlogits(n * k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = result.predictions[i].probabilities;
    if (p[labels[i]] < kProbabilityFloor) continue;
    for (std::size_t cls = 0; cls < k; ++cls) {
      dlogits[i * k + cls] = (p[cls] - (cls == labels[i] ? 1.0 : 0.0)) / static_cast<double>(n);
    }
  }
  result.gradient = net.backward(fc, dlogits);
  for (double v : result.gradient) {
    if (!std::isfinite(v)) fail(ErrorCode::numeric, "non-finite gradient");
  }
  net.collect_stats(fc, result.batch_means, result.batch_variances);
  return result;
}

TrainResult train(Params params, std::span<const LabeledImage> dataset, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  if (dataset.empty()) fail(ErrorCode::argument, "training set is empty");
  if (config.batch_size == 0) fail(ErrorCode::argument, "batch size must be positive");
  if (!(config.learning_rate >= 0.0) || !(config.momentum >= 0.0 && config.momentum < 1.0)) {
    fail(ErrorCode::argument, "invalid optimizer settings");
  }
  std::array<bool, kNumRhythms> present{};
  for (const auto& item : dataset) {
    if (item.label >= kNumRhythms) fail(ErrorCode::argument, "label out of range");
    present[item.label] = true;
  }
  for (std::size_t c = 0; c < kNumRhythms; ++c) {
    if (!present[c]) {
      fail(ErrorCode::argument,
           fmt::format("class {} missing from training set", to_string(static_cast<Rhythm>(c))));
    }
  }

  TrainResult result;
  std::vector<double> velocity(params.values.size(), 0.0);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(config.seed);
  const double m = params.config.bn_momentum;

  std::vector<ModelImage> batch;
  std::vector<std::size_t> labels;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.clear();
      labels.clear();
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(dataset[order[i]].image);
        labels.push_back(dataset[order[i]].label);
      }
      GradResult g;
      try {
        g = grad(params, batch, labels);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::numeric) throw;
        fail(ErrorCode::numeric, fmt::format("training diverged at epoch {}, batch {}: {}", epoch,
                                             start / config.batch_size, e.what()));
      }
      loss_sum += g.loss * static_cast<double>(end - start);
      for (std::size_t i = 0; i < g.predictions.size(); ++i) {
        if (static_cast<std::size_t>(g.predictions[i].predicted_class) == labels[i]) ++correct;
      }
      for (std::size_t k = 0; k < params.values.size(); ++k) {
        velocity[k] = config.momentum * velocity[k] - config.learning_rate * g.gradient[k];
        params.values[k] += velocity[k];
      }
      for (const auto& slot : params.stats_layout.slots) {
        const auto& batch_stat =
            slot.name.ends_with("running_mean") ? g.batch_means : g.batch_variances;
        for (std::size_t k = slot.offset; k < slot.offset + slot.size; ++k) {
          params.running_stats[k] = m * params.running_stats[k] + (1.0 - m) * batch_stat[k];
        }
      }
    }
    EpochStats stats{epoch, loss_sum / static_cast<double>(dataset.size()),
                     static_cast<double>(correct) / static_cast<double>(dataset.size())};
    if (!std::isfinite(stats.loss)) {
      fail(ErrorCode::numeric, fmt::format("non-finite loss at epoch {}", epoch));
    }
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats, params);
  }
  result.params = std::move(params);
  return result;
}

const ScaleGrid& default_scale_grid() {
  static const ScaleGrid grid = scale_grid(0.5, 40.0, 64, kDefaultOmega0);
  return grid;
}

ModelImage segment_to_image(const Segment& segment) {
  Signal signal;
  try {
    validate(segment);
    signal = resample(segment.as_signal(), kModelSamplingRateHz);
  } catch (const Error& e) {
    throw StageError("resample", e);
  }
  try {
    signal = normalize(signal);
  } catch (const Error& e) {
    throw StageError("normalize", e);
  }
  Scalogram scalogram;
  try {
    scalogram = cwt(signal.samples, signal.sampling_rate_hz, default_scale_grid(), signal.source_id);
  } catch (const Error& e) {
    throw StageError("cwt", e);
  }
  try {
    return to_model_input(scalogram);
  } catch (const Error& e) {
    throw StageError("to_model_input", e);
  }
}

Prediction predict_pipeline(const Params& params, const Segment& segment) {
  const ModelImage image = segment_to_image(segment);
  try {
    return forward(params, std::span(&image, 1), Mode::eval).front();
  } catch (const Error& e) {
    throw StageError("forward", e);
  }
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace {

constexpr std::array<char, 8> kCheckpointMagic = {'E', 'C', 'G', 'D', 'N', 'E', 'T', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void raw(std::span<const char> s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::size_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      fail(ErrorCode::truncation, fmt::format("checkpoint truncated at byte {}", pos_));
    }
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void write_layout(ByteWriter& w, const ParamLayout& layout) {
  w.u32(static_cast<std::uint32_t>(layout.slots.size()));
  for (const auto& slot : layout.slots) {
    w.str(slot.name);
    w.u64(slot.offset);
    w.u64(slot.size);
    w.u32(static_cast<std::uint32_t>(slot.shape.size()));
    for (std::size_t d : slot.shape) w.u64(d);
  }
  w.u64(layout.total);
}

ParamLayout read_layout(ByteReader& r) {
  ParamLayout layout;
  const std::size_t count = r.u32();
  for (std::size_t i = 0; i < count; ++i) {
    TensorSlot slot;
    slot.name = r.str();
    slot.offset = r.u64();
    slot.size = r.u64();
    const std::size_t rank = r.u32();
    if (rank > 8) fail(ErrorCode::parse, "checkpoint tensor rank out of range");
    for (std::size_t d = 0; d < rank; ++d) slot.shape.push_back(r.u64());
    layout.slots.push_back(std::move(slot));
  }
  layout.total = r.u64();
  return layout;
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(::crc32(0L, Z_NULL, 0), bytes.data(), static_cast<uInt>(bytes.size())));
}

}  // namespace

std::vector<std::uint8_t> serialize_params(const Params& params) {
  ByteWriter w;
  w.raw(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  const auto& c = params.config;
  for (std::size_t v : {c.height, c.width, c.channels, c.n_blocks, c.layers_per_block,
                        c.growth_rate, c.initial_channels, c.n_classes, c.stem_stride,
                        c.stem_pool}) {
    w.u64(v);
  }
  w.f64(c.compression);
  w.f64(c.bn_epsilon);
  w.f64(c.bn_momentum);
  w.str(params.model_version);
  write_layout(w, params.layout);
  write_layout(w, params.stats_layout);
  w.u64(params.values.size());
  for (double v : params.values) w.f64(v);
  w.u64(params.running_stats.size());
  for (double v : params.running_stats) w.f64(v);
  const auto crc = crc32_of(w.bytes());
  w.u32(crc);
  return std::move(w.bytes());
}

Params deserialize_params(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kCheckpointMagic.size() + 8 ||
      !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin(),
                  [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; })) {
    fail(ErrorCode::parse, "not a model checkpoint (bad magic)");
  }
  const auto body = bytes.first(bytes.size() - 4);
  ByteReader tail(bytes.last(4));
  if (tail.u32() != crc32_of(body)) fail(ErrorCode::validation, "checkpoint checksum mismatch");

  ByteReader r(body.subspan(kCheckpointMagic.size()));
  if (const auto version = r.u32(); version != kCheckpointVersion) {
    fail(ErrorCode::unsupported_format, fmt::format("checkpoint version {} unsupported", version));
  }
  Params p;
  auto& c = p.config;
  for (std::size_t* field : {&c.height, &c.width, &c.channels, &c.n_blocks, &c.layers_per_block,
                             &c.growth_rate, &c.initial_channels, &c.n_classes, &c.stem_stride,
                             &c.stem_pool}) {
    *field = r.u64();
  }
  c.compression = r.f64();
  c.bn_epsilon = r.f64();
  c.bn_momentum = r.f64();
  validate(c);
  p.model_version = r.str();
  p.layout = read_layout(r);
  p.stats_layout = read_layout(r);
  if (!(p.layout == build_layout(c)) || !(p.stats_layout == build_stats_layout(c))) {
    fail(ErrorCode::validation, "checkpoint layout does not match its config");
  }
  if (r.u64() != p.layout.total) fail(ErrorCode::validation, "parameter payload size mismatch");
  p.values.resize(p.layout.total);
  for (double& v : p.values) v = r.f64();
  if (r.u64() != p.stats_layout.total) fail(ErrorCode::validation, "statistics payload size mismatch");
  p.running_stats.resize(p.stats_layout.total);
  for (double& v : p.running_stats) v = r.f64();
  if (r.position() + kCheckpointMagic.size() != body.size()) {
    fail(ErrorCode::parse, "trailing bytes in checkpoint");
  }
  for (double v : p.values) {
    if (!std::isfinite(v)) fail(ErrorCode::validation, "non-finite parameter in checkpoint");
  }
  return p;
}

void save_checkpoint(const Params& params, const std::filesystem::path& path) {
  write_binary_file(path, serialize_params(params));
}

Params load_checkpoint(const std::filesystem::path& path) {
  return deserialize_params(read_binary_file(path));
}

}  // namespace ecgstudy

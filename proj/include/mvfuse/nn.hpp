#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mvfuse/common.hpp"
#include "mvfuse/ops.hpp"
#include "mvfuse/random.hpp"
#include "mvfuse/tensor.hpp"

namespace mvf::nn {

/// Callbacks used to walk a network's parameters and persistent buffers
/// (batch-norm running statistics) in a fixed, name-stable order. The same
/// walk drives optimizer state, checkpoints, and parameter counting.
template <class Real>
struct ParamVisitor {
  std::function<void(const std::string&, TensorT<Real>&)> on_param;
  std::function<void(const std::string&, std::vector<Real>&)> on_buffer;

  void param(const std::string& name, TensorT<Real>& t) const {
    if (on_param) on_param(name, t);
  }
  void buffer(const std::string& name, std::vector<Real>& b) const {
    if (on_buffer) on_buffer(name, b);
  }
};

/// Per-forward context: training toggles batch statistics, and an optional
/// sink defers running-stat updates so a coordinator can apply them in a
/// deterministic order.
template <class Real>
struct RunCtx {
  bool training = false;
  BatchStatsSink<Real>* sink = nullptr;
};

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

template <class Real>
struct Conv2d {
  int in_ch = 0, out_ch = 0;
  int kh = 3, kw = 3, sh = 1, sw = 1, ph = 1, pw = 1;
  TensorT<Real> weight;
  TensorT<Real> bias;  // undefined unless with_bias
  bool with_bias = false;

  Conv2d() = default;

  Conv2d(int in, int out, int kernel_h, int kernel_w, int stride_h, int stride_w, int pad_h,
         int pad_w, Rng& rng, bool use_bias = false)
      : in_ch(in), out_ch(out), kh(kernel_h), kw(kernel_w), sh(stride_h), sw(stride_w), ph(pad_h),
        pw(pad_w), with_bias(use_bias) {
    const std::size_t n = static_cast<std::size_t>(out) * in * kh * kw;
    const double std_dev = std::sqrt(2.0 / (static_cast<double>(in) * kh * kw));
    std::vector<Real> w(n);
    for (auto& v : w) v = static_cast<Real>(rng.normal(0.0, std_dev));
    weight = TensorT<Real>::param({out, in, kh, kw}, std::move(w));
    if (with_bias) bias = TensorT<Real>::param({out}, std::vector<Real>(out, Real(0)));
  }

  /// Square-kernel convenience: kernel k, stride (sh, sw), "same" padding.
  static Conv2d same(int in, int out, int k, int stride_h, int stride_w, Rng& rng,
                     bool use_bias = false) {
    return Conv2d(in, out, k, k, stride_h, stride_w, k / 2, k / 2, rng, use_bias);
  }

  TensorT<Real> forward(const TensorT<Real>& x) const {
    TensorT<Real> y = conv2d(x, weight, sh, sw, ph, pw);
    if (with_bias) y = add_channel_bias(y, bias);
    return y;
  }

  void visit(const std::string& prefix, const ParamVisitor<Real>& v) {
    v.param(prefix + ".weight", weight);
    if (with_bias) v.param(prefix + ".bias", bias);
  }
};

// ---------------------------------------------------------------------------
// BatchNorm
// ---------------------------------------------------------------------------

template <class Real>
struct BatchNorm {
  int channels = 0;
  TensorT<Real> gamma, beta;
  std::vector<Real> running_mean, running_var;
  Real eps = Real(1e-5);
  Real momentum = Real(0.1);

  BatchNorm() = default;

  explicit BatchNorm(int c)
      : channels(c),
        gamma(TensorT<Real>::param({c}, std::vector<Real>(c, Real(1)))),
        beta(TensorT<Real>::param({c}, std::vector<Real>(c, Real(0)))),
        running_mean(c, Real(0)),
        running_var(c, Real(1)) {}

  TensorT<Real> forward(const TensorT<Real>& x, const RunCtx<Real>& ctx) {
    return batch_norm(x, gamma, beta, running_mean, running_var, ctx.training, eps, momentum,
                      ctx.sink);
  }

  void visit(const std::string& prefix, const ParamVisitor<Real>& v) {
    v.param(prefix + ".gamma", gamma);
    v.param(prefix + ".beta", beta);
    v.buffer(prefix + ".running_mean", running_mean);
    v.buffer(prefix + ".running_var", running_var);
  }
};

// ---------------------------------------------------------------------------
// Conv -> BatchNorm -> ReLU, the "Conv" unit of the layer grammar
// ---------------------------------------------------------------------------

template <class Real>
struct ConvBlock {
  Conv2d<Real> conv;
  BatchNorm<Real> bn;

  ConvBlock() = default;

  ConvBlock(int in, int out, int k, int stride_h, int stride_w, Rng& rng)
      : conv(Conv2d<Real>::same(in, out, k, stride_h, stride_w, rng)), bn(out) {}

  TensorT<Real> forward(const TensorT<Real>& x, const RunCtx<Real>& ctx) {
    return relu(bn.forward(conv.forward(x), ctx));
  }

  void visit(const std::string& prefix, const ParamVisitor<Real>& v) {
    conv.visit(prefix + ".conv", v);
    bn.visit(prefix + ".bn", v);
  }
};

// ---------------------------------------------------------------------------
// Linear layers
// ---------------------------------------------------------------------------

template <class Real>
struct LinearLayer {
  int in_dim = 0, out_dim = 0;
  TensorT<Real> weight, bias;

  LinearLayer() = default;

  LinearLayer(int in, int out, Rng& rng) : in_dim(in), out_dim(out) {
    const double std_dev = std::sqrt(2.0 / static_cast<double>(in));
    std::vector<Real> w(static_cast<std::size_t>(out) * in);
    for (auto& v : w) v = static_cast<Real>(rng.normal(0.0, std_dev));
    weight = TensorT<Real>::param({out, in}, std::move(w));
    bias = TensorT<Real>::param({out}, std::vector<Real>(out, Real(0)));
  }

  /// x is [in_dim, M] (one column per sample/point).
  TensorT<Real> forward(const TensorT<Real>& x) const { return linear(weight, x, bias); }

  void zero_init() {
    std::fill(weight.values().begin(), weight.values().end(), Real(0));
    std::fill(bias.values().begin(), bias.values().end(), Real(0));
  }

  void visit(const std::string& prefix, const ParamVisitor<Real>& v) {
    v.param(prefix + ".weight", weight);
    v.param(prefix + ".bias", bias);
  }
};

/// Linear -> BatchNorm -> ReLU over per-point columns; the learned transform
/// inside the point-to-cell scatter and the small-class trajectory trunk.
template <class Real>
struct PointMlp {
  LinearLayer<Real> fc;
  BatchNorm<Real> bn;

  PointMlp() = default;
  PointMlp(int in, int out, Rng& rng) : fc(in, out, rng), bn(out) {}

  TensorT<Real> forward(const TensorT<Real>& x, const RunCtx<Real>& ctx) {
    return relu(bn.forward(fc.forward(x), ctx));
  }

  void visit(const std::string& prefix, const ParamVisitor<Real>& v) {
    fc.visit(prefix + ".fc", v);
    bn.visit(prefix + ".bn", v);
  }
};

// ---------------------------------------------------------------------------
// Residual block
// ---------------------------------------------------------------------------

/// Two conv+norm+relu stages plus a shortcut (identity, or 1x1 conv+norm when
/// the channel count or stride changes). The stage output is added to the
/// shortcut with no activation after the sum, so zeroed convolutions make the
/// block an exact identity on its shortcut.
template <class Real>
struct ResidualBlock {
  ConvBlock<Real> stage1;
  ConvBlock<Real> stage2;
  bool projected = false;
  Conv2d<Real> proj_conv;
  BatchNorm<Real> proj_bn;

  ResidualBlock() = default;

  ResidualBlock(int in, int out, int stride_h, int stride_w, Rng& rng)
      : stage1(in, out, 3, stride_h, stride_w, rng), stage2(out, out, 3, 1, 1, rng) {
    projected = (in != out) || stride_h != 1 || stride_w != 1;
    if (projected) {
      proj_conv = Conv2d<Real>(in, out, 1, 1, stride_h, stride_w, 0, 0, rng);
      proj_bn = BatchNorm<Real>(out);
    }
  }

  TensorT<Real> forward(const TensorT<Real>& x, const RunCtx<Real>& ctx) {
    TensorT<Real> main = stage2.forward(stage1.forward(x, ctx), ctx);
    TensorT<Real> shortcut = projected ? proj_bn.forward(proj_conv.forward(x), ctx) : x;
    return add(main, shortcut);
  }

  void visit(const std::string& prefix, const ParamVisitor<Real>& v) {
    stage1.visit(prefix + ".stage1", v);
    stage2.visit(prefix + ".stage2", v);
    if (projected) {
      proj_conv.visit(prefix + ".proj_conv", v);
      proj_bn.visit(prefix + ".proj_bn", v);
    }
  }
};

// ---------------------------------------------------------------------------
// U-Net
// ---------------------------------------------------------------------------

struct UNetStage {
  int channels = 0;
  int stride_h = 1, stride_w = 1;  // applied by the stage's first block
  int blocks = 2;
};

/// Encoder/decoder network over [C,H,W] maps. The range-view variant strides
/// the width axis only and keeps its first stage unstrided; the BEV variant
/// strides both axes. `decode_to` selects how far the decoder climbs back up
/// (0 = full input resolution, 1 = the first downsampled stage).
struct UNetConfig {
  std::vector<UNetStage> stages;
  int out_channels = 32;
  int decode_to = 0;

  static UNetConfig range_view(int in_stages = 3, int base = 32, int out = 32) {
    UNetConfig cfg;
    for (int i = 0; i < in_stages; ++i)
      cfg.stages.push_back({base << std::min(i, 4), 1, i == 0 ? 1 : 2, 2});
    cfg.out_channels = out;
    cfg.decode_to = 0;
    return cfg;
  }

  static UNetConfig birds_eye(int in_stages = 3, int base = 32, int out = 64) {
    UNetConfig cfg;
    for (int i = 0; i < in_stages; ++i)
      cfg.stages.push_back({base << std::min(i, 4), i == 0 ? 1 : 2, i == 0 ? 1 : 2, 2});
    cfg.out_channels = out;
    cfg.decode_to = 1;  // output resolution is input/2
    return cfg;
  }
};

template <class Real>
struct UNet {
  UNetConfig cfg;
  std::vector<std::vector<ResidualBlock<Real>>> encoder;  // [stage][block]
  std::vector<ConvBlock<Real>> decoder;                   // one fuse block per climbed level
  Conv2d<Real> head;                                      // 1x1 projection to out_channels

  UNet() = default;

  UNet(int in_channels, const UNetConfig& config, Rng& rng) : cfg(config) {
    MVF_CHECK_ARG(!cfg.stages.empty(), "U-Net needs at least one stage");
    MVF_CHECK_ARG(cfg.decode_to >= 0 && cfg.decode_to < static_cast<int>(cfg.stages.size()),
                  "U-Net decode_to out of range");
    int ch = in_channels;
    for (const auto& st : cfg.stages) {
      std::vector<ResidualBlock<Real>> blocks;
      for (int b = 0; b < st.blocks; ++b) {
        const int sh = b == 0 ? st.stride_h : 1;
        const int sw = b == 0 ? st.stride_w : 1;
        blocks.emplace_back(ch, st.channels, sh, sw, rng);
        ch = st.channels;
      }
      encoder.push_back(std::move(blocks));
    }
    const int deepest = static_cast<int>(cfg.stages.size()) - 1;
    for (int level = deepest - 1; level >= cfg.decode_to; --level) {
      const int in = ch + cfg.stages[level].channels;  // upsampled + skip
      decoder.emplace_back(in, cfg.stages[level].channels, 3, 1, 1, rng);
      ch = cfg.stages[level].channels;
    }
    head = Conv2d<Real>(ch, cfg.out_channels, 1, 1, 1, 1, 0, 0, rng);
  }

  TensorT<Real> forward(const TensorT<Real>& x, const RunCtx<Real>& ctx) {
    std::vector<TensorT<Real>> skips;
    TensorT<Real> h = x;
    for (auto& stage : encoder) {
      for (auto& block : stage) h = block.forward(h, ctx);
      skips.push_back(h);
    }
    const int deepest = static_cast<int>(cfg.stages.size()) - 1;
    std::size_t d = 0;
    for (int level = deepest - 1; level >= cfg.decode_to; --level, ++d) {
      const auto& below = cfg.stages[level + 1];
      h = bilinear_upsample(h, below.stride_h, below.stride_w);
      h = decoder[d].forward(concat_channels(h, skips[level]), ctx);
    }
    return head.forward(h);
  }

  void visit(const std::string& prefix, const ParamVisitor<Real>& v) {
    for (std::size_t s = 0; s < encoder.size(); ++s)
      for (std::size_t b = 0; b < encoder[s].size(); ++b)
        encoder[s][b].visit(prefix + ".enc" + std::to_string(s) + ".block" + std::to_string(b), v);
    for (std::size_t d = 0; d < decoder.size(); ++d)
      decoder[d].visit(prefix + ".dec" + std::to_string(d), v);
    head.visit(prefix + ".head", v);
  }
};

// ---------------------------------------------------------------------------
// Utilities over the visitor
// ---------------------------------------------------------------------------

template <class Real, class Net>
std::size_t param_count(Net& net) {
  std::size_t total = 0;
  ParamVisitor<Real> v;
  v.on_param = [&](const std::string&, TensorT<Real>& t) { total += t.numel(); };
  net.visit("", v);
  return total;
}

template <class Real, class Net>
std::vector<TensorT<Real>> collect_params(Net& net, const std::string& prefix = "net") {
  std::vector<TensorT<Real>> out;
  ParamVisitor<Real> v;
  v.on_param = [&](const std::string&, TensorT<Real>& t) { out.push_back(t); };
  net.visit(prefix, v);
  return out;
}

}  // namespace mvf::nn

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mvfuse/common.hpp"
#include "mvfuse/tensor.hpp"

namespace mvf {

template <class Real>
using MatRM = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using MapRM = Eigen::Map<MatRM<Real>>;
template <class Real>
using CMapRM = Eigen::Map<const MatRM<Real>>;

namespace detail {

template <class Real>
Real stable_sigmoid(Real u) {
  if (u >= Real(0)) return Real(1) / (Real(1) + std::exp(-u));
  const Real e = std::exp(u);
  return e / (Real(1) + e);
}

template <class Real>
Real stable_softplus(Real u) {
  return std::log1p(std::exp(-std::abs(u))) + std::max(u, Real(0));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <class Real, class Fwd, class Bwd>
TensorT<Real> elementwise_unary(const TensorT<Real>& x, Fwd fwd, Bwd dfdx) {
  std::vector<Real> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return make_op_output<Real>(
      x.shape(), std::move(out), {x.node_ptr()}, [xn = x.node(), dfdx](TensorNode<Real>* on) {
        return [xn, on, dfdx]() {
          for (std::size_t i = 0; i < on->grad.size(); ++i)
            xn->grad[i] += on->grad[i] * dfdx(xn->value[i], on->value[i]);
        };
      });
}

template <class Real>
TensorT<Real> relu(const TensorT<Real>& x) {
  return elementwise_unary(
      x, [](Real v) { return v > Real(0) ? v : Real(0); },
      [](Real v, Real) { return v > Real(0) ? Real(1) : Real(0); });
}

template <class Real>
TensorT<Real> exp_op(const TensorT<Real>& x) {
  return elementwise_unary(
      x, [](Real v) { return std::exp(v); }, [](Real, Real y) { return y; });
}

template <class Real>
TensorT<Real> log_op(const TensorT<Real>& x) {
  return elementwise_unary(
      x, [](Real v) { return std::log(v); }, [](Real v, Real) { return Real(1) / v; });
}

template <class Real>
TensorT<Real> abs_op(const TensorT<Real>& x) {
  return elementwise_unary(
      x, [](Real v) { return std::abs(v); },
      [](Real v, Real) { return v >= Real(0) ? Real(1) : Real(-1); });
}

template <class Real>
TensorT<Real> sigmoid(const TensorT<Real>& x) {
  return elementwise_unary(
      x, [](Real v) { return detail::stable_sigmoid(v); },
      [](Real, Real y) { return y * (Real(1) - y); });
}

template <class Real>
TensorT<Real> neg(const TensorT<Real>& x) {
  return elementwise_unary(
      x, [](Real v) { return -v; }, [](Real, Real) { return Real(-1); });
}

template <class Real>
TensorT<Real> add_scalar(const TensorT<Real>& x, Real c) {
  return elementwise_unary(
      x, [c](Real v) { return v + c; }, [](Real, Real) { return Real(1); });
}

template <class Real>
TensorT<Real> mul_scalar(const TensorT<Real>& x, Real c) {
  return elementwise_unary(
      x, [c](Real v) { return v * c; }, [c](Real, Real) { return c; });
}

template <class Real, class Fwd, class Da, class Db>
TensorT<Real> elementwise_binary(const TensorT<Real>& a, const TensorT<Real>& b, Fwd fwd, Da dfda,
                                 Db dfdb) {
  MVF_CHECK_ARG(a.shape() == b.shape(), "elementwise op requires matching shapes");
  std::vector<Real> out(a.numel());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  return make_op_output<Real>(
      a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
      [an = a.node(), bn = b.node(), dfda, dfdb](TensorNode<Real>* on) {
        return [an, bn, on, dfda, dfdb]() {
          for (std::size_t i = 0; i < on->grad.size(); ++i) {
            const Real g = on->grad[i];
            if (an->requires_grad) an->grad[i] += g * dfda(an->value[i], bn->value[i]);
            if (bn->requires_grad) bn->grad[i] += g * dfdb(an->value[i], bn->value[i]);
          }
        };
      });
}

template <class Real>
TensorT<Real> add(const TensorT<Real>& a, const TensorT<Real>& b) {
  return elementwise_binary(
      a, b, [](Real x, Real y) { return x + y; }, [](Real, Real) { return Real(1); },
      [](Real, Real) { return Real(1); });
}

template <class Real>
TensorT<Real> sub(const TensorT<Real>& a, const TensorT<Real>& b) {
  return elementwise_binary(
      a, b, [](Real x, Real y) { return x - y; }, [](Real, Real) { return Real(1); },
      [](Real, Real) { return Real(-1); });
}

template <class Real>
TensorT<Real> mul(const TensorT<Real>& a, const TensorT<Real>& b) {
  return elementwise_binary(
      a, b, [](Real x, Real y) { return x * y; }, [](Real, Real y) { return y; },
      [](Real x, Real) { return x; });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class Real>
TensorT<Real> sum_all(const TensorT<Real>& x) {
  double acc = 0.0;
  for (Real v : x.values()) acc += static_cast<double>(v);
  return make_op_output<Real>({1}, {static_cast<Real>(acc)}, {x.node_ptr()},
                              [xn = x.node()](TensorNode<Real>* on) {
                                return [xn, on]() {
                                  const Real g = on->grad[0];
                                  for (auto& gv : xn->grad) gv += g;
                                };
                              });
}

template <class Real>
TensorT<Real> mean_all(const TensorT<Real>& x) {
  MVF_CHECK_ARG(x.numel() > 0, "mean of empty tensor");
  const Real inv = Real(1) / static_cast<Real>(x.numel());
  return mul_scalar(sum_all(x), inv);
}

/// Mean of a variable-size set of same-shape tensors; each member receives
/// gradient 1/M.
template <class Real>
TensorT<Real> mean_over_set(const std::vector<TensorT<Real>>& parts) {
  MVF_CHECK(!parts.empty(), Errc::empty_input, "mean_over_set of empty set");
  const auto& shape = parts[0].shape();
  std::vector<Real> out(parts[0].numel(), Real(0));
  std::vector<std::shared_ptr<TensorNode<Real>>> parents;
  parents.reserve(parts.size());
  for (const auto& p : parts) {
    MVF_CHECK_ARG(p.shape() == shape, "mean_over_set requires matching shapes");
    const auto& pv = p.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += pv[i];
    parents.push_back(p.node_ptr());
  }
  const Real inv = Real(1) / static_cast<Real>(parts.size());
  for (auto& v : out) v *= inv;
  return make_op_output<Real>(shape, std::move(out), std::move(parents),
                              [inv](TensorNode<Real>* on) {
                                return [on, inv]() {
                                  for (auto& p : on->parents) {
                                    if (!p->requires_grad) continue;
                                    for (std::size_t i = 0; i < on->grad.size(); ++i)
                                      p->grad[i] += on->grad[i] * inv;
                                  }
                                };
                              });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <class Real>
TensorT<Real> reshape(const TensorT<Real>& x, std::vector<int> shape) {
  MVF_CHECK_ARG(shape_numel(shape) == x.numel(), "reshape changes element count");
  std::vector<Real> out = x.values();
  return make_op_output<Real>(std::move(shape), std::move(out), {x.node_ptr()},
                              [xn = x.node()](TensorNode<Real>* on) {
                                return [xn, on]() {
                                  for (std::size_t i = 0; i < on->grad.size(); ++i)
                                    xn->grad[i] += on->grad[i];
                                };
                              });
}

/// Concatenate along axis 0 (the channel axis). Trailing extents must match.
template <class Real>
TensorT<Real> concat_channels(const std::vector<TensorT<Real>>& parts) {
  MVF_CHECK(!parts.empty(), Errc::empty_input, "concat_channels of empty list");
  std::vector<int> shape = parts[0].shape();
  MVF_CHECK_ARG(!shape.empty(), "concat_channels needs rank >= 1");
  std::size_t inner = parts[0].numel() / static_cast<std::size_t>(shape[0]);
  int total_c = 0;
  for (const auto& p : parts) {
    MVF_CHECK_ARG(p.shape().size() == shape.size(), "concat_channels rank mismatch");
    for (std::size_t d = 1; d < shape.size(); ++d)
      MVF_CHECK_ARG(p.shape()[d] == shape[d], "concat_channels trailing extent mismatch");
    total_c += p.shape()[0];
  }
  shape[0] = total_c;
  std::vector<Real> out;
  out.reserve(total_c * inner);
  std::vector<std::shared_ptr<TensorNode<Real>>> parents;
  for (const auto& p : parts) {
    out.insert(out.end(), p.values().begin(), p.values().end());
    parents.push_back(p.node_ptr());
  }
  return make_op_output<Real>(std::move(shape), std::move(out), std::move(parents),
                              [](TensorNode<Real>* on) {
                                return [on]() {
                                  std::size_t offset = 0;
                                  for (auto& p : on->parents) {
                                    const std::size_t n = p->numel();
                                    if (p->requires_grad)
                                      for (std::size_t i = 0; i < n; ++i)
                                        p->grad[i] += on->grad[offset + i];
                                    offset += n;
                                  }
                                };
                              });
}

template <class Real>
TensorT<Real> concat_channels(const TensorT<Real>& a, const TensorT<Real>& b) {
  return concat_channels(std::vector<TensorT<Real>>{a, b});
}

/// Channels [begin, end) of x as a new tensor.
template <class Real>
TensorT<Real> slice_channels(const TensorT<Real>& x, int begin, int end) {
  const auto& shape = x.shape();
  MVF_CHECK_ARG(!shape.empty() && begin >= 0 && end <= shape[0] && begin < end,
                "slice_channels range out of bounds");
  const std::size_t inner = x.numel() / static_cast<std::size_t>(shape[0]);
  std::vector<int> oshape = shape;
  oshape[0] = end - begin;
  std::vector<Real> out(x.values().begin() + begin * inner, x.values().begin() + end * inner);
  return make_op_output<Real>(
      std::move(oshape), std::move(out), {x.node_ptr()},
      [xn = x.node(), begin, inner](TensorNode<Real>* on) {
        return [xn, on, begin, inner]() {
          const std::size_t off = static_cast<std::size_t>(begin) * inner;
          for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[off + i] += on->grad[i];
        };
      });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <class Real>
TensorT<Real> matmul(const TensorT<Real>& a, const TensorT<Real>& b) {
  MVF_CHECK_ARG(a.shape().size() == 2 && b.shape().size() == 2 && a.dim(1) == b.dim(0),
                "matmul shape mismatch");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<Real> out(static_cast<std::size_t>(m) * n);
  CMapRM<Real> am(a.values().data(), m, k);
  CMapRM<Real> bm(b.values().data(), k, n);
  MapRM<Real> om(out.data(), m, n);
  om.noalias() = am * bm;
  return make_op_output<Real>(
      {m, n}, std::move(out), {a.node_ptr(), b.node_ptr()},
      [an = a.node(), bn = b.node(), m, k, n](TensorNode<Real>* on) {
        return [an, bn, on, m, k, n]() {
          CMapRM<Real> g(on->grad.data(), m, n);
          if (an->requires_grad) {
            CMapRM<Real> bm(bn->value.data(), k, n);
            MapRM<Real> ga(an->grad.data(), m, k);
            ga.noalias() += g * bm.transpose();
          }
          if (bn->requires_grad) {
            CMapRM<Real> am(an->value.data(), m, k);
            MapRM<Real> gb(bn->grad.data(), k, n);
            gb.noalias() += am.transpose() * g;
          }
        };
      });
}

/// y = W x + b with W [out, in], x [in, M], b [out] broadcast over columns.
template <class Real>
TensorT<Real> linear(const TensorT<Real>& w, const TensorT<Real>& x, const TensorT<Real>& b) {
  MVF_CHECK_ARG(w.shape().size() == 2 && x.shape().size() == 2 && w.dim(1) == x.dim(0),
                "linear shape mismatch");
  MVF_CHECK_ARG(b.shape().size() == 1 && b.dim(0) == w.dim(0), "linear bias shape mismatch");
  const int out_dim = w.dim(0), in_dim = w.dim(1), m = x.dim(1);
  std::vector<Real> out(static_cast<std::size_t>(out_dim) * m);
  CMapRM<Real> wm(w.values().data(), out_dim, in_dim);
  CMapRM<Real> xm(x.values().data(), in_dim, m);
  MapRM<Real> om(out.data(), out_dim, m);
  om.noalias() = wm * xm;
  for (int r = 0; r < out_dim; ++r) {
    const Real bv = b.values()[r];
    Real* row = out.data() + static_cast<std::size_t>(r) * m;
    for (int c = 0; c < m; ++c) row[c] += bv;
  }
  return make_op_output<Real>(
      {out_dim, m}, std::move(out), {w.node_ptr(), x.node_ptr(), b.node_ptr()},
      [wn = w.node(), xn = x.node(), bn = b.node(), out_dim, in_dim, m](TensorNode<Real>* on) {
        return [wn, xn, bn, on, out_dim, in_dim, m]() {
          CMapRM<Real> g(on->grad.data(), out_dim, m);
          if (wn->requires_grad) {
            CMapRM<Real> xm(xn->value.data(), in_dim, m);
            MapRM<Real> gw(wn->grad.data(), out_dim, in_dim);
            gw.noalias() += g * xm.transpose();
          }
          if (xn->requires_grad) {
            CMapRM<Real> wm(wn->value.data(), out_dim, in_dim);
            MapRM<Real> gx(xn->grad.data(), in_dim, m);
            gx.noalias() += wm.transpose() * g;
          }
          if (bn->requires_grad) {
            for (int r = 0; r < out_dim; ++r) {
              double acc = 0.0;
              const Real* row = on->grad.data() + static_cast<std::size_t>(r) * m;
              for (int c = 0; c < m; ++c) acc += row[c];
              bn->grad[r] += static_cast<Real>(acc);
            }
          }
        };
      });
}

/// x [C, ...] + b [C] broadcast over the trailing axes.
template <class Real>
TensorT<Real> add_channel_bias(const TensorT<Real>& x, const TensorT<Real>& b) {
  MVF_CHECK_ARG(!x.shape().empty() && b.shape().size() == 1 && b.dim(0) == x.dim(0),
                "add_channel_bias shape mismatch");
  const int c = x.dim(0);
  const std::size_t inner = x.numel() / static_cast<std::size_t>(c);
  std::vector<Real> out = x.values();
  for (int ch = 0; ch < c; ++ch) {
    const Real bv = b.values()[ch];
    Real* slab = out.data() + static_cast<std::size_t>(ch) * inner;
    for (std::size_t i = 0; i < inner; ++i) slab[i] += bv;
  }
  return make_op_output<Real>(
      x.shape(), std::move(out), {x.node_ptr(), b.node_ptr()},
      [xn = x.node(), bn = b.node(), c, inner](TensorNode<Real>* on) {
        return [xn, bn, on, c, inner]() {
          if (xn->requires_grad)
            for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
          if (bn->requires_grad) {
            for (int ch = 0; ch < c; ++ch) {
              double acc = 0.0;
              const Real* slab = on->grad.data() + static_cast<std::size_t>(ch) * inner;
              for (std::size_t i = 0; i < inner; ++i) acc += slab[i];
              bn->grad[ch] += static_cast<Real>(acc);
            }
          }
        };
      });
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

struct ConvGeom {
  int c_in = 0, h = 0, w = 0;
  int c_out = 0, kh = 0, kw = 0;
  int sh = 1, sw = 1, ph = 0, pw = 0;
  int oh = 0, ow = 0;
};

inline ConvGeom conv_geometry(const std::vector<int>& xshape, const std::vector<int>& wshape,
                              int sh, int sw, int ph, int pw) {
  MVF_CHECK_ARG(xshape.size() == 3 && wshape.size() == 4, "conv2d expects [C,H,W] and [F,C,kh,kw]");
  ConvGeom g;
  g.c_in = xshape[0];
  g.h = xshape[1];
  g.w = xshape[2];
  g.c_out = wshape[0];
  MVF_CHECK_ARG(wshape[1] == g.c_in, "conv2d channel mismatch");
  g.kh = wshape[2];
  g.kw = wshape[3];
  g.sh = sh;
  g.sw = sw;
  g.ph = ph;
  g.pw = pw;
  MVF_CHECK_ARG(sh >= 1 && sw >= 1 && ph >= 0 && pw >= 0, "conv2d bad stride/padding");
  g.oh = (g.h + 2 * ph - g.kh) / sh + 1;
  g.ow = (g.w + 2 * pw - g.kw) / sw + 1;
  MVF_CHECK_ARG(g.oh >= 1 && g.ow >= 1, "conv2d output collapses to zero size");
  return g;
}

namespace detail {

template <class Real>
void im2col(const Real* in, const ConvGeom& g, Real* cols) {
  const int khw = g.kh * g.kw;
  const std::size_t ohw = static_cast<std::size_t>(g.oh) * g.ow;
  for (int c = 0; c < g.c_in; ++c) {
    const Real* plane = in + static_cast<std::size_t>(c) * g.h * g.w;
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        Real* row = cols + (static_cast<std::size_t>(c) * khw + i * g.kw + j) * ohw;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.sh - g.ph + i;
          Real* dst = row + static_cast<std::size_t>(oy) * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.ow, Real(0));
            continue;
          }
          const Real* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.sw - g.pw + j;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : Real(0);
          }
        }
      }
    }
  }
}

template <class Real>
void col2im_accumulate(const Real* cols, const ConvGeom& g, Real* gin) {
  const int khw = g.kh * g.kw;
  const std::size_t ohw = static_cast<std::size_t>(g.oh) * g.ow;
  for (int c = 0; c < g.c_in; ++c) {
    Real* plane = gin + static_cast<std::size_t>(c) * g.h * g.w;
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        const Real* row = cols + (static_cast<std::size_t>(c) * khw + i * g.kw + j) * ohw;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.sh - g.ph + i;
          if (iy < 0 || iy >= g.h) continue;
          Real* dst = plane + static_cast<std::size_t>(iy) * g.w;
          const Real* src = row + static_cast<std::size_t>(oy) * g.ow;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.sw - g.pw + j;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2D cross-correlation of x [C,H,W] with weights [F,C,kh,kw]. No bias; the
/// layer grammar composes normalization and activation separately.
template <class Real>
TensorT<Real> conv2d(const TensorT<Real>& x, const TensorT<Real>& w, int stride_h, int stride_w,
                     int pad_h, int pad_w) {
  const ConvGeom g = conv_geometry(x.shape(), w.shape(), stride_h, stride_w, pad_h, pad_w);
  const std::size_t k = static_cast<std::size_t>(g.c_in) * g.kh * g.kw;
  const std::size_t ohw = static_cast<std::size_t>(g.oh) * g.ow;
  std::vector<Real> cols(k * ohw);
  detail::im2col(x.values().data(), g, cols.data());
  std::vector<Real> out(static_cast<std::size_t>(g.c_out) * ohw);
  {
    CMapRM<Real> wm(w.values().data(), g.c_out, static_cast<int>(k));
    CMapRM<Real> cm(cols.data(), static_cast<int>(k), static_cast<int>(ohw));
    MapRM<Real> om(out.data(), g.c_out, static_cast<int>(ohw));
    om.noalias() = wm * cm;
  }
  // cols are recomputed in backward to keep tape memory proportional to
  // activations rather than to unrolled patches.
  return make_op_output<Real>(
      {g.c_out, g.oh, g.ow}, std::move(out), {x.node_ptr(), w.node_ptr()},
      [xn = x.node(), wn = w.node(), g, k, ohw](TensorNode<Real>* on) {
        return [xn, wn, on, g, k, ohw]() {
          CMapRM<Real> gout(on->grad.data(), g.c_out, static_cast<int>(ohw));
          if (wn->requires_grad) {
            std::vector<Real> cols(k * ohw);
            detail::im2col(xn->value.data(), g, cols.data());
            CMapRM<Real> cm(cols.data(), static_cast<int>(k), static_cast<int>(ohw));
            MapRM<Real> gw(wn->grad.data(), g.c_out, static_cast<int>(k));
            gw.noalias() += gout * cm.transpose();
          }
          if (xn->requires_grad) {
            std::vector<Real> gcols(k * ohw);
            CMapRM<Real> wm(wn->value.data(), g.c_out, static_cast<int>(k));
            MapRM<Real> gc(gcols.data(), static_cast<int>(k), static_cast<int>(ohw));
            gc.noalias() = wm.transpose() * gout;
            detail::col2im_accumulate(gcols.data(), g, xn->grad.data());
          }
        };
      });
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

/// Per-channel batch statistics captured during a training forward pass, so a
/// coordinator can apply running-stat updates in a deterministic order.
template <class Real>
struct BatchStats {
  std::vector<Real>* running_mean = nullptr;
  std::vector<Real>* running_var = nullptr;
  std::vector<Real> mean;
  std::vector<Real> var;
};

template <class Real>
using BatchStatsSink = std::vector<BatchStats<Real>>;

/// Normalizes over every axis except axis 0. In training mode (set size >= 2)
/// batch statistics are used and running statistics receive a momentum
/// update; otherwise the running statistics are used.
template <class Real>
TensorT<Real> batch_norm(const TensorT<Real>& x, const TensorT<Real>& gamma,
                         const TensorT<Real>& beta, std::vector<Real>& running_mean,
                         std::vector<Real>& running_var, bool training, Real eps, Real momentum,
                         BatchStatsSink<Real>* sink = nullptr) {
  MVF_CHECK_ARG(!x.shape().empty(), "batch_norm needs rank >= 1");
  const int c = x.dim(0);
  const std::size_t m = x.numel() / static_cast<std::size_t>(c);
  MVF_CHECK_ARG(gamma.shape() == std::vector<int>{c} && beta.shape() == std::vector<int>{c},
                "batch_norm gamma/beta must be [C]");
  MVF_CHECK_ARG(running_mean.size() == static_cast<std::size_t>(c) &&
                    running_var.size() == static_cast<std::size_t>(c),
                "batch_norm running stats must be [C]");

  const bool use_batch_stats = training && m >= 2;
  std::vector<Real> mean(c), var(c);
  if (use_batch_stats) {
    for (int ch = 0; ch < c; ++ch) {
      const Real* slab = x.values().data() + static_cast<std::size_t>(ch) * m;
      double acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) acc += slab[i];
      const double mu = acc / static_cast<double>(m);
      double vacc = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double d = slab[i] - mu;
        vacc += d * d;
      }
      mean[ch] = static_cast<Real>(mu);
      var[ch] = static_cast<Real>(vacc / static_cast<double>(m));
    }
    if (sink != nullptr) {
      sink->push_back(BatchStats<Real>{&running_mean, &running_var, mean, var});
    } else {
      for (int ch = 0; ch < c; ++ch) {
        running_mean[ch] = (Real(1) - momentum) * running_mean[ch] + momentum * mean[ch];
        running_var[ch] = (Real(1) - momentum) * running_var[ch] + momentum * var[ch];
      }
    }
  } else {
    mean = running_mean;
    var = running_var;
  }

  std::vector<Real> inv_std(c);
  for (int ch = 0; ch < c; ++ch) inv_std[ch] = Real(1) / std::sqrt(var[ch] + eps);

  std::vector<Real> out(x.numel());
  for (int ch = 0; ch < c; ++ch) {
    const Real* slab = x.values().data() + static_cast<std::size_t>(ch) * m;
    Real* oslab = out.data() + static_cast<std::size_t>(ch) * m;
    const Real g = gamma.values()[ch], b = beta.values()[ch];
    const Real mu = mean[ch], is = inv_std[ch];
    for (std::size_t i = 0; i < m; ++i) oslab[i] = (slab[i] - mu) * is * g + b;
  }

  return make_op_output<Real>(
      x.shape(), std::move(out),
      {x.node_ptr(), gamma.node_ptr(), beta.node_ptr()},
      [xn = x.node(), gn = gamma.node(), bn = beta.node(), c, m, mean, inv_std,
       use_batch_stats](TensorNode<Real>* on) {
        return [xn, gn, bn, on, c, m, mean, inv_std, use_batch_stats]() {
          for (int ch = 0; ch < c; ++ch) {
            const Real* xv = xn->value.data() + static_cast<std::size_t>(ch) * m;
            const Real* gv = on->grad.data() + static_cast<std::size_t>(ch) * m;
            const Real mu = mean[ch], is = inv_std[ch];
            const Real gamma_v = gn->value[ch];
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
              sum_dy += gv[i];
              sum_dy_xhat += static_cast<double>(gv[i]) * ((xv[i] - mu) * is);
            }
            if (gn->requires_grad) gn->grad[ch] += static_cast<Real>(sum_dy_xhat);
            if (bn->requires_grad) bn->grad[ch] += static_cast<Real>(sum_dy);
            if (xn->requires_grad) {
              Real* gx = xn->grad.data() + static_cast<std::size_t>(ch) * m;
              if (use_batch_stats) {
                const Real mean_dy = static_cast<Real>(sum_dy / static_cast<double>(m));
                const Real mean_dy_xhat = static_cast<Real>(sum_dy_xhat / static_cast<double>(m));
                for (std::size_t i = 0; i < m; ++i) {
                  const Real xhat = (xv[i] - mu) * is;
                  gx[i] += gamma_v * is * (gv[i] - mean_dy - xhat * mean_dy_xhat);
                }
              } else {
                for (std::size_t i = 0; i < m; ++i) gx[i] += gamma_v * is * gv[i];
              }
            }
          }
        };
      });
}

// ---------------------------------------------------------------------------
// Bilinear upsampling (cell-center convention, edges clamped)
// ---------------------------------------------------------------------------

namespace detail {

struct LerpIndex {
  int lo = 0, hi = 0;
  double w_hi = 0.0;
};

inline std::vector<LerpIndex> upsample_axis(int in, int factor) {
  std::vector<LerpIndex> idx(static_cast<std::size_t>(in) * factor);
  for (int o = 0; o < in * factor; ++o) {
    double src = (o + 0.5) / factor - 0.5;
    if (src < 0.0) src = 0.0;
    if (src > in - 1) src = in - 1;
    int lo = static_cast<int>(std::floor(src));
    if (lo > in - 2) lo = std::max(in - 2, 0);
    const int hi = std::min(lo + 1, in - 1);
    idx[o] = LerpIndex{lo, hi, src - lo};
  }
  return idx;
}

}  // namespace detail

/// Bilinear upsampling of x [C,H,W] by integer factors per axis.
template <class Real>
TensorT<Real> bilinear_upsample(const TensorT<Real>& x, int factor_h, int factor_w) {
  MVF_CHECK_ARG(x.shape().size() == 3, "bilinear_upsample expects [C,H,W]");
  MVF_CHECK_ARG(factor_h >= 1 && factor_w >= 1, "bilinear_upsample factors must be >= 1");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int oh = h * factor_h, ow = w * factor_w;
  const auto ys = detail::upsample_axis(h, factor_h);
  const auto xs = detail::upsample_axis(w, factor_w);
  std::vector<Real> out(static_cast<std::size_t>(c) * oh * ow);
  for (int ch = 0; ch < c; ++ch) {
    const Real* plane = x.values().data() + static_cast<std::size_t>(ch) * h * w;
    Real* oplane = out.data() + static_cast<std::size_t>(ch) * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      const auto& yi = ys[oy];
      const Real* r0 = plane + static_cast<std::size_t>(yi.lo) * w;
      const Real* r1 = plane + static_cast<std::size_t>(yi.hi) * w;
      Real* orow = oplane + static_cast<std::size_t>(oy) * ow;
      for (int ox = 0; ox < ow; ++ox) {
        const auto& xi = xs[ox];
        const double v0 = r0[xi.lo] + (r0[xi.hi] - r0[xi.lo]) * xi.w_hi;
        const double v1 = r1[xi.lo] + (r1[xi.hi] - r1[xi.lo]) * xi.w_hi;
        orow[ox] = static_cast<Real>(v0 + (v1 - v0) * yi.w_hi);
      }
    }
  }
  return make_op_output<Real>(
      {c, oh, ow}, std::move(out), {x.node_ptr()},
      [xn = x.node(), c, h, w, oh, ow, ys, xs](TensorNode<Real>* on) {
        return [xn, on, c, h, w, oh, ow, ys, xs]() {
          for (int ch = 0; ch < c; ++ch) {
            Real* gplane = xn->grad.data() + static_cast<std::size_t>(ch) * h * w;
            const Real* gout = on->grad.data() + static_cast<std::size_t>(ch) * oh * ow;
            for (int oy = 0; oy < oh; ++oy) {
              const auto& yi = ys[oy];
              for (int ox = 0; ox < ow; ++ox) {
                const auto& xi = xs[ox];
                const Real g = gout[static_cast<std::size_t>(oy) * ow + ox];
                const Real wy1 = static_cast<Real>(yi.w_hi), wy0 = Real(1) - wy1;
                const Real wx1 = static_cast<Real>(xi.w_hi), wx0 = Real(1) - wx1;
                gplane[static_cast<std::size_t>(yi.lo) * w + xi.lo] += g * wy0 * wx0;
                gplane[static_cast<std::size_t>(yi.lo) * w + xi.hi] += g * wy0 * wx1;
                gplane[static_cast<std::size_t>(yi.hi) * w + xi.lo] += g * wy1 * wx0;
                gplane[static_cast<std::size_t>(yi.hi) * w + xi.hi] += g * wy1 * wx1;
              }
            }
          }
        };
      });
}

// ---------------------------------------------------------------------------
// Gather / scatter
// ---------------------------------------------------------------------------

/// out[:, m] = x[:, idx[m]] for x [C, N]. All indices must be valid.
template <class Real>
TensorT<Real> gather_columns(const TensorT<Real>& x, std::vector<int> idx) {
  MVF_CHECK_ARG(x.shape().size() == 2, "gather_columns expects [C, N]");
  const int c = x.dim(0), n = x.dim(1);
  const int m = static_cast<int>(idx.size());
  std::vector<Real> out(static_cast<std::size_t>(c) * m);
  for (int i = 0; i < m; ++i)
    MVF_CHECK_ARG(idx[i] >= 0 && idx[i] < n, "gather_columns index out of range");
  for (int ch = 0; ch < c; ++ch) {
    const Real* row = x.values().data() + static_cast<std::size_t>(ch) * n;
    Real* orow = out.data() + static_cast<std::size_t>(ch) * m;
    for (int i = 0; i < m; ++i) orow[i] = row[idx[i]];
  }
  return make_op_output<Real>(
      {c, m}, std::move(out), {x.node_ptr()},
      [xn = x.node(), c, n, m, idx = std::move(idx)](TensorNode<Real>* on) {
        return [xn, on, c, n, m, idx]() {
          for (int ch = 0; ch < c; ++ch) {
            Real* grow = xn->grad.data() + static_cast<std::size_t>(ch) * n;
            const Real* gout = on->grad.data() + static_cast<std::size_t>(ch) * m;
            for (int i = 0; i < m; ++i) grow[idx[i]] += gout[i];
          }
        };
      });
}

/// out[:, j] = x[:, idx[j]] where idx[j] >= 0, else zeros. Used by the RV
/// rasterizer and RV-to-RV warp (pure gather, no interpolation).
template <class Real>
TensorT<Real> gather_columns_or_zero(const TensorT<Real>& x, std::vector<int> idx) {
  MVF_CHECK_ARG(x.shape().size() == 2, "gather_columns_or_zero expects [C, N]");
  const int c = x.dim(0), n = x.dim(1);
  const int m = static_cast<int>(idx.size());
  std::vector<Real> out(static_cast<std::size_t>(c) * m, Real(0));
  for (int i = 0; i < m; ++i) MVF_CHECK_ARG(idx[i] < n, "gather_columns_or_zero index out of range");
  for (int ch = 0; ch < c; ++ch) {
    const Real* row = x.values().data() + static_cast<std::size_t>(ch) * n;
    Real* orow = out.data() + static_cast<std::size_t>(ch) * m;
    for (int i = 0; i < m; ++i)
      if (idx[i] >= 0) orow[i] = row[idx[i]];
  }
  return make_op_output<Real>(
      {c, m}, std::move(out), {x.node_ptr()},
      [xn = x.node(), c, n, m, idx = std::move(idx)](TensorNode<Real>* on) {
        return [xn, on, c, n, m, idx]() {
          for (int ch = 0; ch < c; ++ch) {
            Real* grow = xn->grad.data() + static_cast<std::size_t>(ch) * n;
            const Real* gout = on->grad.data() + static_cast<std::size_t>(ch) * m;
            for (int i = 0; i < m; ++i)
              if (idx[i] >= 0) grow[idx[i]] += gout[i];
          }
        };
      });
}

/// Per-cell mean of point features: x [C, M] scattered by cells[m] into
/// [C, n_cells]. Summation follows ascending point index; each member point
/// receives gradient 1/count(cell).
template <class Real>
TensorT<Real> scatter_mean_columns(const TensorT<Real>& x, std::vector<int> cells, int n_cells) {
  MVF_CHECK_ARG(x.shape().size() == 2, "scatter_mean_columns expects [C, M]");
  const int c = x.dim(0), m = x.dim(1);
  MVF_CHECK_ARG(static_cast<int>(cells.size()) == m, "scatter_mean_columns index count mismatch");
  std::vector<int> count(n_cells, 0);
  for (int i = 0; i < m; ++i) {
    MVF_CHECK_ARG(cells[i] >= 0 && cells[i] < n_cells, "scatter_mean_columns cell out of range");
    ++count[cells[i]];
  }
  std::vector<Real> out(static_cast<std::size_t>(c) * n_cells, Real(0));
  for (int ch = 0; ch < c; ++ch) {
    const Real* row = x.values().data() + static_cast<std::size_t>(ch) * m;
    Real* orow = out.data() + static_cast<std::size_t>(ch) * n_cells;
    for (int i = 0; i < m; ++i) orow[cells[i]] += row[i];
    for (int j = 0; j < n_cells; ++j)
      if (count[j] > 0) orow[j] /= static_cast<Real>(count[j]);
  }
  return make_op_output<Real>(
      {c, n_cells}, std::move(out), {x.node_ptr()},
      [xn = x.node(), c, m, n_cells, cells = std::move(cells),
       count = std::move(count)](TensorNode<Real>* on) {
        return [xn, on, c, m, n_cells, cells, count]() {
          for (int ch = 0; ch < c; ++ch) {
            Real* grow = xn->grad.data() + static_cast<std::size_t>(ch) * m;
            const Real* gout = on->grad.data() + static_cast<std::size_t>(ch) * n_cells;
            for (int i = 0; i < m; ++i)
              grow[i] += gout[cells[i]] / static_cast<Real>(count[cells[i]]);
          }
        };
      });
}

/// 1-D gather of arbitrary flat elements.
template <class Real>
TensorT<Real> gather_elements(const TensorT<Real>& x, std::vector<std::size_t> idx) {
  const int k = static_cast<int>(idx.size());
  std::vector<Real> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    MVF_CHECK_ARG(idx[i] < x.numel(), "gather_elements index out of range");
    out[i] = x.values()[idx[i]];
  }
  return make_op_output<Real>({k}, std::move(out), {x.node_ptr()},
                              [xn = x.node(), idx = std::move(idx)](TensorNode<Real>* on) {
                                return [xn, on, idx]() {
                                  for (std::size_t i = 0; i < idx.size(); ++i)
                                    xn->grad[idx[i]] += on->grad[i];
                                };
                              });
}

// ---------------------------------------------------------------------------
// Bilinear point sampling (zero padded) — RROI feature extraction
// ---------------------------------------------------------------------------

/// Samples x [C,H,W] at continuous (row, col) positions; locations outside
/// the map read zeros. Differentiable w.r.t. x; sample positions are data.
template <class Real>
TensorT<Real> bilinear_sample(const TensorT<Real>& x, std::vector<double> rows,
                              std::vector<double> cols) {
  MVF_CHECK_ARG(x.shape().size() == 3, "bilinear_sample expects [C,H,W]");
  MVF_CHECK_ARG(rows.size() == cols.size(), "bilinear_sample coordinate count mismatch");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int p = static_cast<int>(rows.size());

  struct Tap {
    int index = -1;  // flat offset within a channel plane, -1 when outside
    Real weight = Real(0);
  };
  std::vector<std::array<Tap, 4>> taps(p);
  for (int i = 0; i < p; ++i) {
    const double y = rows[i], x0f = cols[i];
    const int y0 = static_cast<int>(std::floor(y));
    const int x0 = static_cast<int>(std::floor(x0f));
    const double wy = y - y0, wx = x0f - x0;
    const double ws[4] = {(1 - wy) * (1 - wx), (1 - wy) * wx, wy * (1 - wx), wy * wx};
    const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
    const int xcs[4] = {x0, x0 + 1, x0, x0 + 1};
    for (int t = 0; t < 4; ++t) {
      if (ys[t] >= 0 && ys[t] < h && xcs[t] >= 0 && xcs[t] < w)
        taps[i][t] = Tap{ys[t] * w + xcs[t], static_cast<Real>(ws[t])};
    }
  }

  std::vector<Real> out(static_cast<std::size_t>(c) * p, Real(0));
  for (int ch = 0; ch < c; ++ch) {
    const Real* plane = x.values().data() + static_cast<std::size_t>(ch) * h * w;
    Real* orow = out.data() + static_cast<std::size_t>(ch) * p;
    for (int i = 0; i < p; ++i) {
      Real acc = Real(0);
      for (const auto& t : taps[i])
        if (t.index >= 0) acc += t.weight * plane[t.index];
      orow[i] = acc;
    }
  }
  return make_op_output<Real>(
      {c, p}, std::move(out), {x.node_ptr()},
      [xn = x.node(), c, h, w, p, taps = std::move(taps)](TensorNode<Real>* on) {
        return [xn, on, c, h, w, p, taps]() {
          for (int ch = 0; ch < c; ++ch) {
            Real* gplane = xn->grad.data() + static_cast<std::size_t>(ch) * h * w;
            const Real* gout = on->grad.data() + static_cast<std::size_t>(ch) * p;
            for (int i = 0; i < p; ++i)
              for (const auto& t : taps[i])
                if (t.index >= 0) gplane[t.index] += gout[i] * t.weight;
          }
        };
      });
}

// ---------------------------------------------------------------------------
// Fused losses
// ---------------------------------------------------------------------------

/// Mean focal loss over all elements. targets hold 0/1; alpha weights the
/// positive terms while negatives are unweighted, so gamma=0, alpha=1 is
/// plain binary cross-entropy.
template <class Real>
TensorT<Real> focal_loss_with_logits(const TensorT<Real>& logits, const TensorT<Real>& targets,
                                     Real gamma, Real alpha) {
  MVF_CHECK_ARG(logits.shape() == targets.shape(), "focal loss shape mismatch");
  MVF_CHECK_ARG(!targets.requires_grad(), "focal loss targets must be constant");
  const std::size_t n = logits.numel();
  MVF_CHECK_ARG(n > 0, "focal loss of empty tensor");
  double acc = 0.0;
  const auto& zv = logits.values();
  const auto& tv = targets.values();
  for (std::size_t i = 0; i < n; ++i) {
    const bool pos = tv[i] > Real(0.5);
    const Real u = pos ? -zv[i] : zv[i];
    const Real a = pos ? alpha : Real(1);
    acc += static_cast<double>(a * std::pow(detail::stable_sigmoid(u), gamma) *
                               detail::stable_softplus(u));
  }
  const Real loss = static_cast<Real>(acc / static_cast<double>(n));
  return make_op_output<Real>(
      {1}, {loss}, {logits.node_ptr(), targets.node_ptr()},
      [zn = logits.node(), tn = targets.node(), gamma, alpha, n](TensorNode<Real>* on) {
        return [zn, tn, on, gamma, alpha, n]() {
          const Real g = on->grad[0] / static_cast<Real>(n);
          for (std::size_t i = 0; i < n; ++i) {
            const bool pos = tn->value[i] > Real(0.5);
            const Real u = pos ? -zn->value[i] : zn->value[i];
            const Real a = pos ? alpha : Real(1);
            const Real s = detail::stable_sigmoid(u);
            const Real sp = detail::stable_softplus(u);
            const Real dldu =
                a * (gamma * std::pow(s, gamma) * (Real(1) - s) * sp + std::pow(s, gamma) * s);
            zn->grad[i] += g * (pos ? -dldu : dldu);
          }
        };
      });
}

/// Mean smooth-L1 (Huber) with quadratic zone |d| < beta.
template <class Real>
TensorT<Real> smooth_l1(const TensorT<Real>& pred, const TensorT<Real>& target, Real beta) {
  MVF_CHECK_ARG(pred.shape() == target.shape(), "smooth_l1 shape mismatch");
  MVF_CHECK_ARG(beta > Real(0), "smooth_l1 beta must be positive");
  const std::size_t n = pred.numel();
  MVF_CHECK_ARG(n > 0, "smooth_l1 of empty tensor");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Real d = pred.values()[i] - target.values()[i];
    const Real a = std::abs(d);
    acc += (a < beta) ? 0.5 * d * d / beta : a - 0.5 * beta;
  }
  const Real loss = static_cast<Real>(acc / static_cast<double>(n));
  return make_op_output<Real>(
      {1}, {loss}, {pred.node_ptr(), target.node_ptr()},
      [pn = pred.node(), tn = target.node(), beta, n](TensorNode<Real>* on) {
        return [pn, tn, on, beta, n]() {
          const Real g = on->grad[0] / static_cast<Real>(n);
          for (std::size_t i = 0; i < n; ++i) {
            const Real d = pn->value[i] - tn->value[i];
            const Real dd = std::clamp(d / beta, Real(-1), Real(1));
            if (pn->requires_grad) pn->grad[i] += g * dd;
            if (tn->requires_grad) tn->grad[i] -= g * dd;
          }
        };
      });
}

}  // namespace mvf

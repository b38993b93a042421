#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mvfuse/ops.hpp"
#include "mvfuse/random.hpp"
#include "mvfuse/tensor.hpp"
#include "support/finite_diff.hpp"

using namespace mvf;
using mvftest::gradient_check;

namespace {

std::vector<double> random_values(std::size_t n, Rng& rng, double lo, double hi) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

Tensor random_param(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  const std::size_t n = shape_numel(shape);
  return Tensor::param(std::move(shape), random_values(n, rng, lo, hi));
}

Tensor random_const(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  const std::size_t n = shape_numel(shape);
  return Tensor::from_data(std::move(shape), random_values(n, rng, lo, hi));
}

/// Reference convolution: six nested loops, no reordering tricks.
std::vector<double> conv_reference(const std::vector<double>& x, int c, int h, int w,
                                   const std::vector<double>& k, int f, int kh, int kw, int sh,
                                   int sw, int ph, int pw) {
  const int oh = (h + 2 * ph - kh) / sh + 1;
  const int ow = (w + 2 * pw - kw) / sw + 1;
  std::vector<double> out(static_cast<std::size_t>(f) * oh * ow, 0.0);
  for (int fo = 0; fo < f; ++fo)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (int ci = 0; ci < c; ++ci)
          for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) {
              const int iy = oy * sh - ph + i;
              const int ix = ox * sw - pw + j;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += x[(static_cast<std::size_t>(ci) * h + iy) * w + ix] *
                     k[((static_cast<std::size_t>(fo) * c + ci) * kh + i) * kw + j];
            }
        out[(static_cast<std::size_t>(fo) * oh + oy) * ow + ox] = acc;
      }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise values
// ---------------------------------------------------------------------------

TEST_CASE("elementwise forward anchors") {
  Tensor x = Tensor::from_data({4}, {-1.0, 2.0, 0.5, -0.25});
  Tensor r = relu(x);
  REQUIRE(r.values() == std::vector<double>{0.0, 2.0, 0.5, 0.0});

  Tensor s = sigmoid(Tensor::from_data({1}, {0.0}));
  REQUIRE(s.item() == Catch::Approx(0.5));

  REQUIRE(exp_op(Tensor::scalar(1.0)).item() == Catch::Approx(std::exp(1.0)));
  REQUIRE(log_op(Tensor::scalar(std::exp(2.0))).item() == Catch::Approx(2.0));
  REQUIRE(abs_op(Tensor::scalar(-3.5)).item() == Catch::Approx(3.5));
  REQUIRE(neg(Tensor::scalar(4.0)).item() == Catch::Approx(-4.0));
  REQUIRE(add_scalar(Tensor::scalar(1.0), 2.5).item() == Catch::Approx(3.5));
  REQUIRE(mul_scalar(Tensor::scalar(3.0), -2.0).item() == Catch::Approx(-6.0));

  Tensor a = Tensor::from_data({2}, {1.0, 2.0});
  Tensor b = Tensor::from_data({2}, {10.0, 20.0});
  REQUIRE(add(a, b).values() == std::vector<double>{11.0, 22.0});
  REQUIRE(sub(a, b).values() == std::vector<double>{-9.0, -18.0});
  REQUIRE(mul(a, b).values() == std::vector<double>{10.0, 40.0});
}

// ---------------------------------------------------------------------------
// Backward mechanics
// ---------------------------------------------------------------------------

TEST_CASE("backward of sum(w * x) returns x exactly") {
  Rng rng(1);
  Tensor x = random_const({3, 4}, rng);
  Tensor w = random_param({3, 4}, rng);
  Tensor loss = sum_all(mul(w, x));
  backward(loss);
  REQUIRE(w.grads() == x.values());
}

TEST_CASE("disconnected parameters keep zero gradients") {
  Rng rng(2);
  Tensor used = random_param({3}, rng);
  Tensor unused = random_param({3}, rng);
  Tensor loss = sum_all(used);
  backward(loss);
  REQUIRE(unused.grads() == std::vector<double>{0.0, 0.0, 0.0});
  REQUIRE(used.grads() == std::vector<double>{1.0, 1.0, 1.0});
}

TEST_CASE("backward rejects non-scalar losses and double invocation") {
  Rng rng(3);
  Tensor x = random_param({2, 2}, rng);
  Tensor y = mul_scalar(x, 2.0);
  REQUIRE_THROWS_AS(backward(y), Error);

  Tensor loss = sum_all(x);
  backward(loss);
  REQUIRE_THROWS_AS(backward(loss), Error);
}

TEST_CASE("gradients accumulate along reconverging paths") {
  Tensor x = Tensor::param({1}, {3.0});
  Tensor y = add(x, x);  // dy/dx = 2
  Tensor loss = sum_all(y);
  backward(loss);
  REQUIRE(x.grads()[0] == Catch::Approx(2.0));
}

TEST_CASE("NoGrad suppresses tape construction") {
  Tensor x = Tensor::param({2}, {1.0, 2.0});
  {
    NoGrad guard;
    Tensor y = mul_scalar(x, 3.0);
    REQUIRE(!y.requires_grad());
    Tensor loss = sum_all(y);
    backward(loss);  // no-op: nothing requires grad
  }
  REQUIRE(x.grads() == std::vector<double>{0.0, 0.0});
}

// ---------------------------------------------------------------------------
// Gradient checks for the elementwise and reduction ops
// ---------------------------------------------------------------------------

TEST_CASE("gradcheck: elementwise ops") {
  Rng rng(10);
  // Inputs bounded away from the relu/abs kink at zero.
  std::vector<double> raw = random_values(12, rng, 0.1, 1.0);
  for (std::size_t i = 0; i < raw.size(); i += 2) raw[i] = -raw[i];
  Tensor x = Tensor::param({3, 4}, raw);
  Tensor w = random_const({3, 4}, rng);

  REQUIRE(gradient_check([&] { return sum_all(mul(relu(x), w)); }, {x}) < 1e-4);
  REQUIRE(gradient_check([&] { return sum_all(mul(abs_op(x), w)); }, {x}) < 1e-4);
  REQUIRE(gradient_check([&] { return sum_all(mul(exp_op(x), w)); }, {x}) < 1e-4);
  REQUIRE(gradient_check([&] { return sum_all(mul(sigmoid(x), w)); }, {x}) < 1e-4);
  REQUIRE(gradient_check([&] { return sum_all(mul(neg(x), w)); }, {x}) < 1e-4);
  REQUIRE(gradient_check([&] { return sum_all(mul(add_scalar(x, 1.7), w)); }, {x}) < 1e-4);
  REQUIRE(gradient_check([&] { return sum_all(mul(mul_scalar(x, -0.6), w)); }, {x}) < 1e-4);
  REQUIRE(gradient_check([&] { return mean_all(mul(x, x)); }, {x}) < 1e-4);

  Tensor pos = random_param({5}, rng, 0.5, 2.0);
  Tensor wp = random_const({5}, rng);
  REQUIRE(gradient_check([&] { return sum_all(mul(log_op(pos), wp)); }, {pos}) < 1e-4);

  Tensor a = random_param({2, 3}, rng);
  Tensor b = random_param({2, 3}, rng);
  Tensor wab = random_const({2, 3}, rng);
  REQUIRE(gradient_check([&] { return sum_all(mul(add(a, b), wab)); }, {a, b}) < 1e-4);
  REQUIRE(gradient_check([&] { return sum_all(mul(sub(a, b), wab)); }, {a, b}) < 1e-4);
  REQUIRE(gradient_check([&] { return sum_all(mul(mul(a, b), wab)); }, {a, b}) < 1e-4);
}

TEST_CASE("mean_over_set averages and splits gradient") {
  Rng rng(11);
  std::vector<Tensor> parts = {random_param({2, 3}, rng), random_param({2, 3}, rng),
                               random_param({2, 3}, rng)};
  Tensor m = mean_over_set(parts);
  for (std::size_t i = 0; i < m.numel(); ++i) {
    const double expect =
        (parts[0].values()[i] + parts[1].values()[i] + parts[2].values()[i]) / 3.0;
    REQUIRE(m.values()[i] == Catch::Approx(expect));
  }
  Tensor loss = sum_all(m);
  backward(loss);
  for (auto& p : parts)
    for (double g : p.grads()) REQUIRE(g == Catch::Approx(1.0 / 3.0));

  Tensor w = random_const({2, 3}, rng);
  REQUIRE(gradient_check([&] { return sum_all(mul(mean_over_set(parts), w)); },
                         {parts[0], parts[1], parts[2]}) < 1e-4);
  REQUIRE_THROWS_AS(mean_over_set(std::vector<Tensor>{}), Error);
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

TEST_CASE("reshape, concat, slice round-trip values and gradients") {
  Rng rng(12);
  Tensor x = random_param({2, 6}, rng);
  Tensor r = reshape(x, {3, 4});
  REQUIRE(r.shape() == std::vector<int>{3, 4});
  REQUIRE(r.values() == x.values());
  REQUIRE_THROWS_AS(reshape(x, {5, 5}), Error);

  Tensor a = random_param({2, 3, 2}, rng);
  Tensor b = random_param({1, 3, 2}, rng);
  Tensor cat = concat_channels(a, b);
  REQUIRE(cat.shape() == std::vector<int>{3, 3, 2});
  Tensor sa = slice_channels(cat, 0, 2);
  Tensor sb = slice_channels(cat, 2, 3);
  REQUIRE(sa.values() == a.values());
  REQUIRE(sb.values() == b.values());

  Tensor w = random_const({3, 3, 2}, rng);
  REQUIRE(gradient_check([&] { return sum_all(mul(concat_channels(a, b), w)); }, {a, b}) < 1e-4);
  Tensor w2 = random_const({1, 3, 2}, rng);
  REQUIRE(gradient_check([&] { return sum_all(mul(slice_channels(concat_channels(a, b), 2, 3), w2)); },
                         {a, b}) < 1e-4);
  Tensor w3 = random_const({3, 4}, rng);
  REQUIRE(gradient_check([&] { return sum_all(mul(reshape(x, {3, 4}), w3)); }, {x}) < 1e-4);
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

TEST_CASE("matmul value anchor and gradients") {
  Tensor a = Tensor::from_data({2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tensor b = Tensor::from_data({2, 1}, {5.0, 6.0});
  Tensor c = matmul(a, b);
  REQUIRE(c.shape() == std::vector<int>{2, 1});
  REQUIRE(c.values()[0] == Catch::Approx(17.0));
  REQUIRE(c.values()[1] == Catch::Approx(39.0));

  Rng rng(13);
  Tensor ap = random_param({3, 4}, rng);
  Tensor bp = random_param({4, 5}, rng);
  Tensor w = random_const({3, 5}, rng);
  REQUIRE(gradient_check([&] { return sum_all(mul(matmul(ap, bp), w)); }, {ap, bp}) < 1e-4);
}

TEST_CASE("linear layer and channel bias gradients") {
  Rng rng(14);
  Tensor w = random_param({3, 4}, rng);
  Tensor x = random_param({4, 6}, rng);
  Tensor b = random_param({3}, rng);
  Tensor pw = random_const({3, 6}, rng);
  REQUIRE(gradient_check([&] { return sum_all(mul(linear(w, x, b), pw)); }, {w, x, b}) < 1e-4);

  Tensor f = random_param({2, 3, 3}, rng);
  Tensor cb = random_param({2}, rng);
  Tensor pf = random_const({2, 3, 3}, rng);
  REQUIRE(gradient_check([&] { return sum_all(mul(add_channel_bias(f, cb), pf)); }, {f, cb}) <
          1e-4);
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

TEST_CASE("conv2d 1x1 kernel is a scalar multiply") {
  Tensor x = Tensor::param({1, 1, 1}, {3.0});
  Tensor w = Tensor::from_data({1, 1, 1, 1}, {2.0});
  Tensor y = conv2d(x, w, 1, 1, 0, 0);
  REQUIRE(y.item() == Catch::Approx(6.0));
  backward(sum_all(y));
  REQUIRE(x.grads()[0] == Catch::Approx(2.0));
}

TEST_CASE("conv2d identity kernel with padding reproduces the input") {
  Rng rng(15);
  Tensor x = random_const({1, 4, 5}, rng);
  std::vector<double> k(9, 0.0);
  k[4] = 1.0;  // center tap
  Tensor w = Tensor::from_data({1, 1, 3, 3}, k);
  Tensor y = conv2d(x, w, 1, 1, 1, 1);
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < y.numel(); ++i)
    REQUIRE(y.values()[i] == Catch::Approx(x.values()[i]));
}

TEST_CASE("conv2d matches the nested-loop reference") {
  Rng rng(16);
  struct Case {
    int c, h, w, f, kh, kw, sh, sw, ph, pw;
  };
  const Case cases[] = {
      {2, 5, 7, 3, 3, 3, 1, 1, 1, 1}, {2, 5, 7, 3, 3, 3, 2, 1, 1, 2},
      {1, 4, 4, 2, 1, 1, 1, 1, 0, 0}, {3, 6, 5, 2, 3, 2, 1, 2, 0, 1},
      {2, 4, 8, 4, 3, 3, 1, 2, 1, 1},  // width-only stride, as in the range-view net
  };
  for (const auto& cs : cases) {
    Tensor x = random_const({cs.c, cs.h, cs.w}, rng);
    Tensor w = random_const({cs.f, cs.c, cs.kh, cs.kw}, rng);
    Tensor y = conv2d(x, w, cs.sh, cs.sw, cs.ph, cs.pw);
    const auto ref = conv_reference(x.values(), cs.c, cs.h, cs.w, w.values(), cs.f, cs.kh, cs.kw,
                                    cs.sh, cs.sw, cs.ph, cs.pw);
    REQUIRE(y.numel() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i)
      REQUIRE(std::abs(y.values()[i] - ref[i]) < 1e-12);
  }
}

TEST_CASE("gradcheck: conv2d") {
  Rng rng(17);
  Tensor x = random_param({2, 4, 5}, rng);
  Tensor w = random_param({3, 2, 3, 3}, rng);
  Tensor p = random_const({3, 4, 3}, rng);  // output 4x3 for stride (1,2), pad 1
  REQUIRE(gradient_check([&] { return sum_all(mul(conv2d(x, w, 1, 2, 1, 1), p)); }, {x, w}) <
          1e-4);

  Tensor x1 = random_param({1, 3, 3}, rng);
  Tensor w1 = random_param({2, 1, 1, 1}, rng);
  Tensor p1 = random_const({2, 3, 3}, rng);
  REQUIRE(gradient_check([&] { return sum_all(mul(conv2d(x1, w1, 1, 1, 0, 0), p1)); }, {x1, w1}) <
          1e-4);
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

TEST_CASE("batch_norm normalizes per channel in training mode") {
  Rng rng(18);
  const int c = 3;
  const int m = 40;
  Tensor x = random_param({c, m}, rng, -2.0, 5.0);
  Tensor gamma = Tensor::param({c}, {1.0, 1.0, 1.0});
  Tensor beta = Tensor::param({c}, {0.0, 0.0, 0.0});
  std::vector<double> rmean(c, 0.0), rvar(c, 1.0);
  Tensor y = batch_norm(x, gamma, beta, rmean, rvar, true, 1e-5, 0.1);
  for (int ch = 0; ch < c; ++ch) {
    double mean = 0.0, var = 0.0;
    for (int i = 0; i < m; ++i) mean += y.values()[ch * m + i];
    mean /= m;
    for (int i = 0; i < m; ++i) {
      const double d = y.values()[ch * m + i] - mean;
      var += d * d;
    }
    var /= m;
    REQUIRE(mean == Catch::Approx(0.0).margin(1e-10));
    REQUIRE(var == Catch::Approx(1.0).epsilon(1e-3));  // eps shrinks variance slightly
  }
}

TEST_CASE("batch_norm constant channel collapses to beta") {
  Tensor x = Tensor::from_data({2, 5}, std::vector<double>(10, 3.0));
  Tensor gamma = Tensor::from_data({2}, {1.5, 2.0});
  Tensor beta = Tensor::from_data({2}, {-1.0, 0.5});
  std::vector<double> rmean(2, 0.0), rvar(2, 1.0);
  Tensor y = batch_norm(x, gamma, beta, rmean, rvar, true, 1e-5, 0.1);
  for (int i = 0; i < 5; ++i) {
    REQUIRE(y.values()[i] == Catch::Approx(-1.0).margin(1e-9));
    REQUIRE(y.values()[5 + i] == Catch::Approx(0.5).margin(1e-9));
  }
}

TEST_CASE("batch_norm running statistics update with momentum") {
  Tensor x = Tensor::from_data({1, 4}, {1.0, 2.0, 3.0, 4.0});
  Tensor gamma = Tensor::from_data({1}, {1.0});
  Tensor beta = Tensor::from_data({1}, {0.0});
  std::vector<double> rmean = {10.0}, rvar = {4.0};
  batch_norm(x, gamma, beta, rmean, rvar, true, 1e-5, 0.1);
  // batch mean 2.5, biased variance 1.25
  REQUIRE(rmean[0] == Catch::Approx(0.9 * 10.0 + 0.1 * 2.5));
  REQUIRE(rvar[0] == Catch::Approx(0.9 * 4.0 + 0.1 * 1.25));

  // Eval mode uses the running statistics and leaves them untouched.
  const std::vector<double> rm_before = rmean, rv_before = rvar;
  Tensor y = batch_norm(x, gamma, beta, rmean, rvar, false, 1e-5, 0.1);
  REQUIRE(rmean == rm_before);
  REQUIRE(rvar == rv_before);
  for (int i = 0; i < 4; ++i) {
    const double expect = (x.values()[i] - rmean[0]) / std::sqrt(rvar[0] + 1e-5);
    REQUIRE(y.values()[i] == Catch::Approx(expect));
  }
}

TEST_CASE("batch_norm with a single sample falls back to running stats") {
  Tensor x = Tensor::from_data({2, 1}, {5.0, -3.0});
  Tensor gamma = Tensor::from_data({2}, {1.0, 1.0});
  Tensor beta = Tensor::from_data({2}, {0.0, 0.0});
  std::vector<double> rmean = {1.0, 2.0}, rvar = {4.0, 9.0};
  const std::vector<double> rm_before = rmean;
  Tensor y = batch_norm(x, gamma, beta, rmean, rvar, true, 1e-5, 0.1);
  REQUIRE(rmean == rm_before);  // no update without a real batch
  REQUIRE(y.values()[0] == Catch::Approx((5.0 - 1.0) / std::sqrt(4.0 + 1e-5)));
  REQUIRE(y.values()[1] == Catch::Approx((-3.0 - 2.0) / std::sqrt(9.0 + 1e-5)));
}

TEST_CASE("batch_norm stats sink defers running updates") {
  Tensor x = Tensor::from_data({1, 4}, {1.0, 2.0, 3.0, 4.0});
  Tensor gamma = Tensor::from_data({1}, {1.0});
  Tensor beta = Tensor::from_data({1}, {0.0});
  std::vector<double> rmean = {10.0}, rvar = {4.0};
  BatchStatsSink<double> sink;
  batch_norm(x, gamma, beta, rmean, rvar, true, 1e-5, 0.1, &sink);
  REQUIRE(rmean[0] == 10.0);
  REQUIRE(rvar[0] == 4.0);
  REQUIRE(sink.size() == 1);
  REQUIRE(sink[0].running_mean == &rmean);
  REQUIRE(sink[0].mean[0] == Catch::Approx(2.5));
  REQUIRE(sink[0].var[0] == Catch::Approx(1.25));
}

TEST_CASE("gradcheck: batch_norm") {
  Rng rng(19);
  Tensor x = random_param({2, 7}, rng, -2.0, 2.0);
  Tensor gamma = random_param({2}, rng, 0.5, 1.5);
  Tensor beta = random_param({2}, rng, -0.5, 0.5);
  std::vector<double> rmean = {0.1, -0.2}, rvar = {1.3, 0.8};
  Tensor p = random_const({2, 7}, rng);

  REQUIRE(gradient_check(
              [&] {
                return sum_all(
                    mul(batch_norm(x, gamma, beta, rmean, rvar, true, 1e-5, 0.1), p));
              },
              {x, gamma, beta}) < 1e-4);
  REQUIRE(gradient_check(
              [&] {
                return sum_all(
                    mul(batch_norm(x, gamma, beta, rmean, rvar, false, 1e-5, 0.1), p));
              },
              {x, gamma, beta}) < 1e-4);
}

// ---------------------------------------------------------------------------
// Bilinear upsampling
// ---------------------------------------------------------------------------

TEST_CASE("bilinear_upsample preserves constant maps and doubles extents") {
  Tensor x = Tensor::full({2, 3, 4}, 2.5);
  Tensor y = bilinear_upsample(x, 2, 2);
  REQUIRE(y.shape() == std::vector<int>{2, 6, 8});
  for (double v : y.values()) REQUIRE(v == Catch::Approx(2.5));

  Tensor z = bilinear_upsample(x, 1, 2);  // width-only, as used by the RV decoder
  REQUIRE(z.shape() == std::vector<int>{2, 3, 8});
}

TEST_CASE("bilinear_upsample reproduces linear ramps away from borders") {
  // f(x) = x on a row; cell-center upsampling doubles the sample density.
  Tensor x = Tensor::from_data({1, 1, 4}, {0.0, 1.0, 2.0, 3.0});
  Tensor y = bilinear_upsample(x, 1, 2);
  // Interior samples sit at source coordinates 0.25, 0.75, 1.25, ...
  REQUIRE(y.values()[1] == Catch::Approx(0.25));
  REQUIRE(y.values()[2] == Catch::Approx(0.75));
  REQUIRE(y.values()[3] == Catch::Approx(1.25));
  REQUIRE(y.values()[4] == Catch::Approx(1.75));
  REQUIRE(y.values()[6] == Catch::Approx(2.75));
}

TEST_CASE("gradcheck: bilinear_upsample") {
  Rng rng(20);
  Tensor x = random_param({2, 3, 3}, rng);
  Tensor p2 = random_const({2, 6, 6}, rng);
  REQUIRE(gradient_check([&] { return sum_all(mul(bilinear_upsample(x, 2, 2), p2)); }, {x}) <
          1e-4);
  Tensor p1 = random_const({2, 3, 6}, rng);
  REQUIRE(gradient_check([&] { return sum_all(mul(bilinear_upsample(x, 1, 2), p1)); }, {x}) <
          1e-4);
}

// ---------------------------------------------------------------------------
// Gather / scatter
// ---------------------------------------------------------------------------

TEST_CASE("gather_columns and the zero-filled variant") {
  Tensor x = Tensor::from_data({2, 3}, {1.0, 2.0, 3.0, 10.0, 20.0, 30.0});
  Tensor g = gather_columns(x, {2, 0, 0});
  REQUIRE(g.values() == std::vector<double>{3.0, 1.0, 1.0, 30.0, 10.0, 10.0});
  REQUIRE_THROWS_AS(gather_columns(x, {3}), Error);

  Tensor gz = gather_columns_or_zero(x, {1, -1, 2});
  REQUIRE(gz.values() == std::vector<double>{2.0, 0.0, 3.0, 20.0, 0.0, 30.0});
}

TEST_CASE("scatter_mean_columns matches brute-force per-cell grouping") {
  Rng rng(21);
  const int c = 3, m = 40, n = 10;
  Tensor x = random_const({c, m}, rng);
  std::vector<int> cells(m);
  for (auto& id : cells) id = static_cast<int>(rng.uniform_index(n));
  Tensor out = scatter_mean_columns(x, cells, n);

  for (int ch = 0; ch < c; ++ch) {
    for (int cell = 0; cell < n; ++cell) {
      double acc = 0.0;
      int cnt = 0;
      for (int i = 0; i < m; ++i)
        if (cells[i] == cell) {
          acc += x.values()[ch * m + i];
          ++cnt;
        }
      const double expect = cnt > 0 ? acc / cnt : 0.0;
      REQUIRE(out.values()[ch * n + cell] == Catch::Approx(expect).margin(1e-12));
    }
  }
}

TEST_CASE("gradcheck: gather and scatter ops") {
  Rng rng(22);
  Tensor x = random_param({2, 6}, rng);
  Tensor pg = random_const({2, 4}, rng);
  REQUIRE(gradient_check(
              [&] { return sum_all(mul(gather_columns(x, {0, 5, 2, 2}), pg)); }, {x}) < 1e-4);
  REQUIRE(gradient_check(
              [&] { return sum_all(mul(gather_columns_or_zero(x, {3, -1, 0, 1}), pg)); }, {x}) <
          1e-4);

  std::vector<int> cells = {0, 1, 1, 2, 2, 2};
  Tensor ps = random_const({2, 4}, rng);
  REQUIRE(gradient_check(
              [&] { return sum_all(mul(scatter_mean_columns(x, cells, 4), ps)); }, {x}) < 1e-4);

  Tensor pe = random_const({3}, rng);
  REQUIRE(gradient_check(
              [&] { return sum_all(mul(gather_elements(x, {0, 7, 11}), pe)); }, {x}) < 1e-4);
}

// ---------------------------------------------------------------------------
// Bilinear point sampling
// ---------------------------------------------------------------------------

TEST_CASE("bilinear_sample is exact on affine fields and zero outside") {
  // Feature = column coordinate; bilinear interpolation reproduces it exactly.
  std::vector<double> field(5 * 5);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) field[y * 5 + x] = static_cast<double>(x);
  Tensor t = Tensor::from_data({1, 5, 5}, field);

  Tensor s = bilinear_sample(t, {1.3, 2.0, 3.7}, {0.4, 2.5, 3.1});
  REQUIRE(s.values()[0] == Catch::Approx(0.4));
  REQUIRE(s.values()[1] == Catch::Approx(2.5));
  REQUIRE(s.values()[2] == Catch::Approx(3.1));

  Tensor outside = bilinear_sample(t, {-5.0, 10.0}, {2.0, 2.0});
  REQUIRE(outside.values()[0] == 0.0);
  REQUIRE(outside.values()[1] == 0.0);
}

TEST_CASE("gradcheck: bilinear_sample") {
  Rng rng(23);
  Tensor x = random_param({2, 5, 5}, rng);
  std::vector<double> rows, cols;
  for (int i = 0; i < 7; ++i) {
    rows.push_back(rng.uniform(-0.5, 4.5));
    cols.push_back(rng.uniform(-0.5, 4.5));
  }
  Tensor p = random_const({2, 7}, rng);
  REQUIRE(gradient_check([&] { return sum_all(mul(bilinear_sample(x, rows, cols), p)); }, {x}) <
          1e-4);
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

TEST_CASE("focal loss reduces to binary cross-entropy at gamma 0, alpha 1") {
  Rng rng(24);
  Tensor logits = random_param({20}, rng, -2.0, 2.0);
  std::vector<double> t(20);
  for (auto& v : t) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
  Tensor targets = Tensor::from_data({20}, t);

  Tensor loss = focal_loss_with_logits(logits, targets, 0.0, 1.0);

  double ref = 0.0;
  for (int i = 0; i < 20; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-logits.values()[i]));
    ref += t[i] > 0.5 ? -std::log(p) : -std::log(1.0 - p);
  }
  ref /= 20.0;
  REQUIRE(std::abs(loss.item() - ref) < 1e-12);
}

TEST_CASE("focal loss scalar anchor at p=0.9") {
  // Positive with p = 0.9, gamma = 2: loss = -(0.1)^2 * ln(0.9).
  Tensor logit = Tensor::from_data({1}, {std::log(9.0)});
  Tensor target = Tensor::from_data({1}, {1.0});
  Tensor loss = focal_loss_with_logits(logit, target, 2.0, 1.0);
  REQUIRE(loss.item() == Catch::Approx(-0.01 * std::log(0.9)).epsilon(1e-9));
  REQUIRE(loss.item() == Catch::Approx(1.0536e-3).epsilon(1e-3));

  // Near-perfect positive prediction: loss approaches zero.
  Tensor sharp = Tensor::from_data({1}, {20.0});
  REQUIRE(focal_loss_with_logits(sharp, target, 2.0, 1.0).item() < 1e-9);
}

TEST_CASE("gradcheck: focal loss") {
  Rng rng(25);
  Tensor logits = random_param({16}, rng, -2.0, 2.0);
  std::vector<double> t(16);
  for (auto& v : t) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
  Tensor targets = Tensor::from_data({16}, t);
  REQUIRE(gradient_check([&] { return focal_loss_with_logits(logits, targets, 2.0, 0.25); },
                         {logits}) < 1e-4);
  REQUIRE(gradient_check([&] { return focal_loss_with_logits(logits, targets, 0.0, 1.0); },
                         {logits}) < 1e-4);
}

TEST_CASE("smooth_l1 piecewise anchors and continuity") {
  Tensor zero = Tensor::from_data({1}, {0.0});
  REQUIRE(smooth_l1(zero, zero, 1.0).item() == 0.0);

  Tensor half = Tensor::from_data({1}, {0.5});
  REQUIRE(smooth_l1(half, zero, 1.0).item() == Catch::Approx(0.125));
  Tensor two = Tensor::from_data({1}, {2.0});
  REQUIRE(smooth_l1(two, zero, 1.0).item() == Catch::Approx(1.5));

  Tensor below = Tensor::from_data({1}, {1.0 - 1e-9});
  Tensor above = Tensor::from_data({1}, {1.0 + 1e-9});
  REQUIRE(std::abs(smooth_l1(below, zero, 1.0).item() - smooth_l1(above, zero, 1.0).item()) <
          1e-8);
}

TEST_CASE("gradcheck: smooth_l1 in both regimes") {
  Rng rng(26);
  Tensor target = random_const({10}, rng, -1.0, 1.0);
  // Quadratic zone: |d| < 0.7.
  std::vector<double> inner(10);
  for (int i = 0; i < 10; ++i) inner[i] = target.values()[i] + rng.uniform(-0.7, 0.7);
  Tensor pred_in = Tensor::param({10}, inner);
  REQUIRE(gradient_check([&] { return smooth_l1(pred_in, target, 1.0); }, {pred_in}) < 1e-4);
  // Linear zone: |d| > 1.3.
  std::vector<double> outer(10);
  for (int i = 0; i < 10; ++i)
    outer[i] = target.values()[i] + (i % 2 ? 1.0 : -1.0) * rng.uniform(1.3, 2.0);
  Tensor pred_out = Tensor::param({10}, outer);
  REQUIRE(gradient_check([&] { return smooth_l1(pred_out, target, 1.0); }, {pred_out}) < 1e-4);
}

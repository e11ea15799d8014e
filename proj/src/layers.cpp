#include "emr/layers.hpp"
#include "emr/error.hpp"

#include <Eigen/Core>

#include <array>
#include <cmath>

namespace emr {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/*
 * A dilated 3x3 convolution over a zero-padded plane is nine GEMMs over
 * shifted column ranges of the flattened padded input. Output pixel (i, j)
 * lives at flat offset i * Wp + j of the range; columns with j >= W wrap
 * into the padding and are discarded.
 */
struct PaddedLayout
{
  Index h, w, d, hp, wp, start, length;
  PaddedLayout(Index h, Index w, Index d)
    : h{h}
    , w{w}
    , d{d}
    , hp{h + 2 * d}
    , wp{w + 2 * d}
    , start{d * (w + 2 * d) + d}
    , length{(h - 1) * (w + 2 * d) + w}
  {
  }
  Index tap_offset(int a, int b) const { return (a - 1) * d * wp + (b - 1) * d; }
};

Mat pad_sample(Tensor const &x, Index n, PaddedLayout const &L)
{
  Mat           xp = Mat::Zero(x.c(), L.hp * L.wp);
  double const *src = x.sample(n);
  for (Index c = 0; c < x.c(); c++) {
    for (Index i = 0; i < L.h; i++) {
      for (Index j = 0; j < L.w; j++) { xp(c, (i + L.d) * L.wp + j + L.d) = src[(c * L.h + i) * L.w + j]; }
    }
  }
  return xp;
}

std::array<Mat, 9> tap_matrices(ConvWeights const &w)
{
  std::array<Mat, 9> taps;
  for (int t = 0; t < 9; t++) {
    taps[t].resize(w.out, w.in);
    for (Index o = 0; o < w.out; o++) {
      for (Index i = 0; i < w.in; i++) { taps[t](o, i) = w.kernel.value[(o * w.in + i) * 9 + t]; }
    }
  }
  return taps;
}

void check_input(Tensor const &x, ConvWeights const &w, Index dilation)
{
  if (x.c() != w.in) {
    throw InvalidArgument("conv3x3: input has " + std::to_string(x.c()) + " channels, expected " + std::to_string(w.in));
  }
  if (dilation < 1) { throw InvalidArgument("conv3x3: dilation must be positive"); }
}

} // namespace

ConvWeights::ConvWeights(Index in, Index out)
  : in{in}
  , out{out}
  , kernel(static_cast<std::size_t>(out * in * 9))
  , bias(static_cast<std::size_t>(out))
{
  if (in < 1 || out < 1) { throw InvalidArgument("ConvWeights: channel counts must be positive"); }
}

void ConvWeights::init(Rng &rng, double scale)
{
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(9 * in)));
  for (auto &v : kernel.value) { v = scale * normal(rng); }
  std::fill(bias.value.begin(), bias.value.end(), 0.0);
}

void ConvWeights::zero()
{
  std::fill(kernel.value.begin(), kernel.value.end(), 0.0);
  std::fill(bias.value.begin(), bias.value.end(), 0.0);
}

Tensor conv3x3_forward(Tensor const &x, ConvWeights const &w, Index dilation)
{
  check_input(x, w, dilation);
  PaddedLayout const L(x.h(), x.w(), dilation);
  auto const         taps = tap_matrices(w);
  Tensor             y(x.n(), w.out, x.h(), x.w());
  Mat                acc(w.out, L.length);
  for (Index n = 0; n < x.n(); n++) {
    Mat const xp = pad_sample(x, n, L);
    acc.setZero();
    for (int t = 0; t < 9; t++) {
      acc.noalias() += taps[t] * xp.middleCols(L.start + L.tap_offset(t / 3, t % 3), L.length);
    }
    double *dst = y.sample(n);
    for (Index o = 0; o < w.out; o++) {
      double const b = w.bias.value[o];
      for (Index i = 0; i < L.h; i++) {
        for (Index j = 0; j < L.w; j++) { dst[(o * L.h + i) * L.w + j] = acc(o, i * L.wp + j) + b; }
      }
    }
  }
  return y;
}

Tensor conv3x3_backward(Tensor const &x, ConvWeights &w, Index dilation, Tensor const &dy)
{
  check_input(x, w, dilation);
  if (dy.n() != x.n() || dy.c() != w.out || dy.h() != x.h() || dy.w() != x.w()) {
    throw InvalidArgument("conv3x3_backward: gradient shape mismatch");
  }
  PaddedLayout const L(x.h(), x.w(), dilation);
  auto const         taps = tap_matrices(w);
  std::array<Mat, 9> dtaps;
  for (auto &m : dtaps) { m = Mat::Zero(w.out, w.in); }
  Tensor dx(x.n(), x.c(), x.h(), x.w());
  Mat    g(w.out, L.length);
  for (Index n = 0; n < x.n(); n++) {
    Mat const     xp = pad_sample(x, n, L);
    Mat           dxp = Mat::Zero(x.c(), L.hp * L.wp);
    double const *src = dy.sample(n);
    g.setZero();
    for (Index o = 0; o < w.out; o++) {
      double bsum = 0.0;
      for (Index i = 0; i < L.h; i++) {
        for (Index j = 0; j < L.w; j++) {
          double const v = src[(o * L.h + i) * L.w + j];
          g(o, i * L.wp + j) = v;
          bsum += v;
        }
      }
      w.bias.grad[o] += bsum;
    }
    for (int t = 0; t < 9; t++) {
      Index const off = L.start + L.tap_offset(t / 3, t % 3);
      dtaps[t].noalias() += g * xp.middleCols(off, L.length).transpose();
      dxp.middleCols(off, L.length).noalias() += taps[t].transpose() * g;
    }
    double *dst = dx.sample(n);
    for (Index c = 0; c < x.c(); c++) {
      for (Index i = 0; i < L.h; i++) {
        for (Index j = 0; j < L.w; j++) { dst[(c * L.h + i) * L.w + j] = dxp(c, (i + L.d) * L.wp + j + L.d); }
      }
    }
  }
  for (int t = 0; t < 9; t++) {
    for (Index o = 0; o < w.out; o++) {
      for (Index i = 0; i < w.in; i++) { w.kernel.grad[(o * w.in + i) * 9 + t] += dtaps[t](o, i); }
    }
  }
  return dx;
}

Conv2d::Conv2d(ConvWeights w, Index dilation)
  : w_{std::move(w)}
  , dilation_{dilation}
{
}

Tensor Conv2d::forward(Tensor const &x)
{
  x_ = x;
  return conv3x3_forward(x, w_, dilation_);
}

Tensor Conv2d::backward(Tensor const &dy)
{
  if (x_.size() == 0) { throw InvalidArgument("Conv2d::backward without forward"); }
  return conv3x3_backward(x_, w_, dilation_, dy);
}

BatchNorm2d::BatchNorm2d(Index channels)
  : gamma(static_cast<std::size_t>(channels))
  , beta(static_cast<std::size_t>(channels))
  , running_mean(static_cast<std::size_t>(channels), 0.0)
  , running_var(static_cast<std::size_t>(channels), 1.0)
{
  std::fill(gamma.value.begin(), gamma.value.end(), 1.0);
}

Tensor BatchNorm2d::forward(Tensor const &x, bool training)
{
  constexpr double eps = 1e-5;
  constexpr double momentum = 0.1;
  Index const      C = x.c(), P = x.plane();
  if (C != static_cast<Index>(gamma.size())) { throw InvalidArgument("BatchNorm2d: channel mismatch"); }
  Index const count = x.n() * P;
  Tensor      y(x.n(), C, x.h(), x.w());
  xhat_ = Tensor(x.n(), C, x.h(), x.w());
  inv_std_.assign(static_cast<std::size_t>(C), 0.0);
  batch_stats_ = training;
  for (Index c = 0; c < C; c++) {
    double mean = running_mean[c], var = running_var[c];
    if (training) {
      double s = 0.0, s2 = 0.0;
      for (Index n = 0; n < x.n(); n++) {
        double const *p = x.sample(n) + c * P;
        for (Index i = 0; i < P; i++) { s += p[i]; }
      }
      mean = s / static_cast<double>(count);
      for (Index n = 0; n < x.n(); n++) {
        double const *p = x.sample(n) + c * P;
        for (Index i = 0; i < P; i++) { s2 += (p[i] - mean) * (p[i] - mean); }
      }
      var = s2 / static_cast<double>(count);
      running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean;
      running_var[c] = (1.0 - momentum) * running_var[c] + momentum * var;
    }
    double const inv = 1.0 / std::sqrt(var + eps);
    inv_std_[c] = inv;
    for (Index n = 0; n < x.n(); n++) {
      double const *p = x.sample(n) + c * P;
      double       *h = xhat_.sample(n) + c * P;
      double       *q = y.sample(n) + c * P;
      for (Index i = 0; i < P; i++) {
        h[i] = (p[i] - mean) * inv;
        q[i] = gamma.value[c] * h[i] + beta.value[c];
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(Tensor const &dy)
{
  if (!dy.same_shape(xhat_)) { throw InvalidArgument("BatchNorm2d::backward: shape mismatch"); }
  Index const C = dy.c(), P = dy.plane();
  double const count = static_cast<double>(dy.n() * P);
  Tensor       dx(dy.n(), C, dy.h(), dy.w());
  for (Index c = 0; c < C; c++) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (Index n = 0; n < dy.n(); n++) {
      double const *g = dy.sample(n) + c * P;
      double const *h = xhat_.sample(n) + c * P;
      for (Index i = 0; i < P; i++) {
        sum_dy += g[i];
        sum_dy_xhat += g[i] * h[i];
      }
    }
    gamma.grad[c] += sum_dy_xhat;
    beta.grad[c] += sum_dy;
    double const k = gamma.value[c] * inv_std_[c];
    for (Index n = 0; n < dy.n(); n++) {
      double const *g = dy.sample(n) + c * P;
      double const *h = xhat_.sample(n) + c * P;
      double       *d = dx.sample(n) + c * P;
      for (Index i = 0; i < P; i++) {
        d[i] = batch_stats_ ? k * (g[i] - sum_dy / count - h[i] * sum_dy_xhat / count) : k * g[i];
      }
    }
  }
  return dx;
}

void BatchNorm2d::clear_cache()
{
  xhat_ = Tensor();
  inv_std_.clear();
}

Tensor leaky_relu(Tensor x, double slope)
{
  for (auto &v : x.values()) {
    if (v < 0.0) { v *= slope; }
  }
  return x;
}

Tensor leaky_relu_backward(Tensor const &pre, Tensor dy, double slope)
{
  if (!pre.same_shape(dy)) { throw InvalidArgument("leaky_relu_backward: shape mismatch"); }
  auto const p = pre.values();
  auto       g = dy.values();
  for (std::size_t i = 0; i < g.size(); i++) {
    if (p[i] < 0.0) { g[i] *= slope; }
  }
  return dy;
}

} // namespace emr

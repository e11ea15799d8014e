#pragma once

// Independent reference computations used by the tests. Nothing here calls
// into the library's transform or convolution code.

#include "emr/kspace.hpp"
#include "emr/tensor.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

namespace oracle {

using emr::Index;

/// Direct double-sum centered orthonormal DFT.
inline emr::KSpaceGrid naive_dft(emr::ComplexImage const &img)
{
  Index const     h = img.h(), w = img.w();
  Index const     ch = h / 2, cw = w / 2;
  emr::KSpaceGrid k(h, w);
  for (Index u = 0; u < h; u++) {
    for (Index v = 0; v < w; v++) {
      std::complex<double> s = 0.0;
      for (Index m = 0; m < h; m++) {
        for (Index n = 0; n < w; n++) {
          double const phase = -2.0 * std::numbers::pi *
                               (static_cast<double>((u - ch) * (m - ch)) / static_cast<double>(h) +
                                static_cast<double>((v - cw) * (n - cw)) / static_cast<double>(w));
          s += std::complex<double>(img.re(m, n), img.im(m, n)) * std::polar(1.0, phase);
        }
      }
      s /= std::sqrt(static_cast<double>(h * w));
      k.re(u, v) = s.real();
      k.im(u, v) = s.imag();
    }
  }
  return k;
}

/// Sliding-window dilated 3x3 convolution, zero padding = dilation.
/// kernel layout (out, in, 3, 3).
inline emr::Tensor naive_conv(emr::Tensor const &x, std::vector<double> const &kernel, std::vector<double> const &bias,
                              Index out, Index dilation)
{
  emr::Tensor y(x.n(), out, x.h(), x.w());
  for (Index n = 0; n < x.n(); n++) {
    for (Index o = 0; o < out; o++) {
      for (Index i = 0; i < x.h(); i++) {
        for (Index j = 0; j < x.w(); j++) {
          double s = bias[o];
          for (Index c = 0; c < x.c(); c++) {
            for (Index a = 0; a < 3; a++) {
              for (Index b = 0; b < 3; b++) {
                Index const yi = i + (a - 1) * dilation, xj = j + (b - 1) * dilation;
                if (yi < 0 || yi >= x.h() || xj < 0 || xj >= x.w()) { continue; }
                s += kernel[((o * x.c() + c) * 3 + a) * 3 + b] * x(n, c, yi, xj);
              }
            }
          }
          y(n, o, i, j) = s;
        }
      }
    }
  }
  return y;
}

template <typename G>
G random_grid(Index h, Index w, std::uint64_t seed)
{
  std::mt19937_64                        rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  G                                      g(h, w);
  for (auto &v : g.values()) { v = u(rng); }
  return g;
}

inline emr::Tensor random_tensor(Index n, Index c, Index h, Index w, std::uint64_t seed, double scale = 1.0)
{
  std::mt19937_64                        rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  emr::Tensor                            t(n, c, h, w);
  for (auto &v : t.values()) { v = u(rng); }
  return t;
}

template <typename A, typename B>
double max_abs_diff(A const &a, B const &b)
{
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); i++) { m = std::max(m, std::abs(a[i] - b[i])); }
  return m;
}

inline double l2(std::vector<double> const &v)
{
  double s = 0.0;
  for (double x : v) { s += x * x; }
  return std::sqrt(s);
}

} // namespace oracle

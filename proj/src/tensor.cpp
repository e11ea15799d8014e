#include "emr/tensor.hpp"
#include "emr/error.hpp"

#include <cmath>

namespace emr {

Tensor::Tensor(Index n, Index c, Index h, Index w, double fill)
  : n_{n}
  , c_{c}
  , h_{h}
  , w_{w}
  , data_(static_cast<std::size_t>(n * c * h * w), fill)
{
  if (n < 0 || c < 0 || h < 0 || w < 0) { throw InvalidArgument("Tensor: negative dimension"); }
}

Tensor &Tensor::operator+=(Tensor const &o)
{
  if (!same_shape(o)) { throw InvalidArgument("Tensor +=: shape mismatch"); }
  for (std::size_t i = 0; i < data_.size(); i++) { data_[i] += o.data_[i]; }
  return *this;
}

Tensor &Tensor::operator*=(double s)
{
  for (auto &v : data_) { v *= s; }
  return *this;
}

void Tensor::zero() { std::fill(data_.begin(), data_.end(), 0.0); }

Tensor operator+(Tensor a, Tensor const &b)
{
  a += b;
  return a;
}

Tensor operator-(Tensor a, Tensor const &b)
{
  if (!a.same_shape(b)) { throw InvalidArgument("Tensor -: shape mismatch"); }
  auto       av = a.values();
  auto const bv = b.values();
  for (std::size_t i = 0; i < av.size(); i++) { av[i] -= bv[i]; }
  return a;
}

Tensor operator*(double s, Tensor a)
{
  a *= s;
  return a;
}

Tensor concat_channels(Tensor const &a, Tensor const &b)
{
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) { throw InvalidArgument("concat_channels: shape mismatch"); }
  Tensor      out(a.n(), a.c() + b.c(), a.h(), a.w());
  Index const pa = a.c() * a.plane(), pb = b.c() * b.plane();
  for (Index n = 0; n < a.n(); n++) {
    std::copy_n(a.sample(n), pa, out.sample(n));
    std::copy_n(b.sample(n), pb, out.sample(n) + pa);
  }
  return out;
}

std::pair<Tensor, Tensor> split_channels(Tensor const &t, Index ca)
{
  if (ca < 0 || ca > t.c()) { throw InvalidArgument("split_channels: bad split"); }
  Tensor      a(t.n(), ca, t.h(), t.w()), b(t.n(), t.c() - ca, t.h(), t.w());
  Index const pa = a.c() * a.plane(), pb = b.c() * b.plane();
  for (Index n = 0; n < t.n(); n++) {
    std::copy_n(t.sample(n), pa, a.sample(n));
    std::copy_n(t.sample(n) + pa, pb, b.sample(n));
  }
  return {std::move(a), std::move(b)};
}

double dot(Tensor const &a, Tensor const &b)
{
  if (!a.same_shape(b)) { throw InvalidArgument("dot: shape mismatch"); }
  double     s = 0.0;
  auto const av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < av.size(); i++) { s += av[i] * bv[i]; }
  return s;
}

bool all_finite(std::span<double const> v)
{
  for (double x : v) {
    if (!std::isfinite(x)) { return false; }
  }
  return true;
}

} // namespace emr

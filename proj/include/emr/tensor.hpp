#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace emr {

using Index = std::ptrdiff_t;

/// Dense NCHW feature map in double precision.
class Tensor
{
public:
  Tensor() = default;
  Tensor(Index n, Index c, Index h, Index w, double fill = 0.0);

  Index n() const { return n_; }
  Index c() const { return c_; }
  Index h() const { return h_; }
  Index w() const { return w_; }
  Index size() const { return static_cast<Index>(data_.size()); }
  Index plane() const { return h_ * w_; }

  double       &operator()(Index n, Index c, Index y, Index x) { return data_[((n * c_ + c) * h_ + y) * w_ + x]; }
  double const &operator()(Index n, Index c, Index y, Index x) const { return data_[((n * c_ + c) * h_ + y) * w_ + x]; }

  double       *sample(Index n) { return data_.data() + n * c_ * h_ * w_; }
  double const *sample(Index n) const { return data_.data() + n * c_ * h_ * w_; }

  std::span<double>       values() { return data_; }
  std::span<double const> values() const { return data_; }
  std::vector<double>    &storage() { return data_; }

  bool same_shape(Tensor const &o) const { return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_; }

  Tensor &operator+=(Tensor const &o);
  Tensor &operator*=(double s);
  void    zero();

private:
  Index               n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  std::vector<double> data_;
};

Tensor operator+(Tensor a, Tensor const &b);
Tensor operator-(Tensor a, Tensor const &b);
Tensor operator*(double s, Tensor a);

/// Concatenate along the channel axis.
Tensor concat_channels(Tensor const &a, Tensor const &b);
/// Split a channel-concatenated gradient back into [0, ca) and [ca, c).
std::pair<Tensor, Tensor> split_channels(Tensor const &t, Index ca);

double dot(Tensor const &a, Tensor const &b);
bool   all_finite(std::span<double const> v);

} // namespace emr

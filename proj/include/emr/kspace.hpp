#pragma once

#include "emr/tensor.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <vector>

namespace emr {

struct ImageDomain;
struct FrequencyDomain;

/// Two-channel (real, imaginary) planar grid of shape (2, H, W).
/// The domain tag keeps spatial images and centered k-space apart at compile time.
template <typename Domain>
class Planar
{
public:
  Planar() = default;
  Planar(Index h, Index w)
    : h_{h}
    , w_{w}
    , data_(static_cast<std::size_t>(2 * h * w), 0.0)
  {
  }

  Index h() const { return h_; }
  Index w() const { return w_; }
  Index plane() const { return h_ * w_; }

  double       &re(Index y, Index x) { return data_[y * w_ + x]; }
  double const &re(Index y, Index x) const { return data_[y * w_ + x]; }
  double       &im(Index y, Index x) { return data_[plane() + y * w_ + x]; }
  double const &im(Index y, Index x) const { return data_[plane() + y * w_ + x]; }

  std::vector<double>       &values() { return data_; }
  std::vector<double> const &values() const { return data_; }

  bool same_shape(Planar const &o) const { return h_ == o.h_ && w_ == o.w_; }
  bool operator==(Planar const &o) const = default;

private:
  Index               h_ = 0, w_ = 0;
  std::vector<double> data_;
};

using ComplexImage = Planar<ImageDomain>;
using KSpaceGrid = Planar<FrequencyDomain>;

/// Cartesian line mask: row i of k-space is acquired iff i is in `lines`.
struct SamplingMask
{
  Index             h = 0;
  Index             w = 0;
  double            rate = 1.0;
  std::uint64_t     seed = 0;
  std::vector<Index> lines; // sorted, distinct

  bool sampled(Index row) const;
  bool operator==(SamplingMask const &) const = default;
};

KSpaceGrid   fft2c(ComplexImage const &img);
ComplexImage ifft2c(KSpaceGrid const &k);

/// Number of lines a mask of this rate acquires: round-half-up(rate * h).
Index        mask_line_count(Index h, double rate);
SamplingMask make_cartesian_mask(Index h, Index w, double rate, std::uint64_t seed);
SamplingMask full_mask(Index h, Index w);

KSpaceGrid undersample(KSpaceGrid const &k_full, SamplingMask const &m);
KSpaceGrid data_consistency(KSpaceGrid const &k_rec, KSpaceGrid const &k0, SamplingMask const &m);

/*
 * Two-step data consistency. Replace sampled k-space rows, return to image
 * space, collapse to the real-valued magnitude, and replace again. If
 * `intermediate` is given it receives the image after the first replacement,
 * which is what tdc_backward needs.
 */
ComplexImage tdc(ComplexImage const &s, KSpaceGrid const &k0, SamplingMask const &m, ComplexImage *intermediate = nullptr);

/// Vector-Jacobian product of tdc with respect to its image input.
ComplexImage tdc_backward(ComplexImage const &intermediate, SamplingMask const &m, ComplexImage const &grad_out);

/// ifft2c(P fft2c(g)) where P zeroes the sampled rows; self-adjoint.
ComplexImage project_unsampled(ComplexImage const &g, SamplingMask const &m);

// Conversions between single-sample tensors and planar grids.
ComplexImage to_image(Tensor const &t, Index n);
void         store_image(ComplexImage const &img, Tensor &t, Index n);

nlohmann::json mask_to_json(SamplingMask const &m);
SamplingMask   mask_from_json(nlohmann::json const &j);

/// Deterministic per-image seed from a global seed and an image index.
std::uint64_t derive_seed(std::uint64_t global, std::uint64_t index);

} // namespace emr

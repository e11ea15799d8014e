#pragma once

#include "emr/kspace.hpp"

#include <nlohmann/json.hpp>

#include <span>
#include <vector>

namespace emr {

/// Single-channel real image, row-major.
struct RealImage
{
  Index               h = 0;
  Index               w = 0;
  std::vector<double> v;

  RealImage() = default;
  RealImage(Index h, Index w, double fill = 0.0)
    : h{h}
    , w{w}
    , v(static_cast<std::size_t>(h * w), fill)
  {
  }
  double       &at(Index y, Index x) { return v[y * w + x]; }
  double const &at(Index y, Index x) const { return v[y * w + x]; }
  bool          operator==(RealImage const &) const = default;
};

RealImage    magnitude(ComplexImage const &img);
ComplexImage as_complex(RealImage const &img);

/// Peak 1.0. Identical images give +infinity.
double psnr(RealImage const &ref, RealImage const &rec);
/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5) over the valid region, dynamic range 1.
double ssim(RealImage const &ref, RealImage const &rec);

constexpr double kPsnrCap = 100.0;

struct ImageScores
{
  double psnr;
  double ssim;
};

/// Scores magnitude images after dividing both by the reference maximum.
ImageScores score_reconstruction(ComplexImage const &target, ComplexImage const &pred);

struct Stat
{
  double mean = 0.0;
  double std = 0.0;
};

/// Population mean and standard deviation; values above `cap` (including +inf) count as `cap`.
Stat mean_std(std::span<double const> values, double cap = kPsnrCap);

struct MetricReport
{
  std::vector<double> psnr;
  std::vector<double> ssim;
};

/// Per-fold means, then mean and std across folds.
struct FoldSummary
{
  std::vector<MetricReport> folds;
  std::vector<double>       psnr_per_fold, ssim_per_fold;
  Stat                      psnr, ssim;
};

FoldSummary    summarize_folds(std::vector<MetricReport> folds);
nlohmann::json to_json(FoldSummary const &s);

} // namespace emr

#include "emr/metrics.hpp"
#include "emr/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace emr {

namespace {

void check_same(RealImage const &a, RealImage const &b, char const *what)
{
  if (a.h != b.h || a.w != b.w) { throw InvalidArgument(std::string(what) + ": shape mismatch"); }
  if (a.h < 1 || a.w < 1) { throw InvalidArgument(std::string(what) + ": empty image"); }
}

std::vector<double> gaussian_window(Index size, double sigma)
{
  std::vector<double> g(static_cast<std::size_t>(size));
  double const        c = static_cast<double>(size - 1) / 2.0;
  double              sum = 0.0;
  for (Index i = 0; i < size; i++) {
    double const d = static_cast<double>(i) - c;
    g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += g[i];
  }
  for (auto &v : g) { v /= sum; }
  return g;
}

// Separable valid-mode filtering with a symmetric 1-D window.
RealImage filter_valid(RealImage const &img, std::vector<double> const &g)
{
  Index const k = static_cast<Index>(g.size());
  Index const oh = img.h - k + 1, ow = img.w - k + 1;
  RealImage   rows(img.h, ow);
  for (Index y = 0; y < img.h; y++) {
    for (Index x = 0; x < ow; x++) {
      double s = 0.0;
      for (Index t = 0; t < k; t++) { s += g[t] * img.at(y, x + t); }
      rows.at(y, x) = s;
    }
  }
  RealImage out(oh, ow);
  for (Index y = 0; y < oh; y++) {
    for (Index x = 0; x < ow; x++) {
      double s = 0.0;
      for (Index t = 0; t < k; t++) { s += g[t] * rows.at(y + t, x); }
      out.at(y, x) = s;
    }
  }
  return out;
}

RealImage product(RealImage a, RealImage const &b)
{
  for (std::size_t i = 0; i < a.v.size(); i++) { a.v[i] *= b.v[i]; }
  return a;
}

} // namespace

RealImage magnitude(ComplexImage const &img)
{
  RealImage out(img.h(), img.w());
  for (Index y = 0; y < img.h(); y++) {
    for (Index x = 0; x < img.w(); x++) { out.at(y, x) = std::hypot(img.re(y, x), img.im(y, x)); }
  }
  return out;
}

ComplexImage as_complex(RealImage const &img)
{
  ComplexImage out(img.h, img.w);
  std::copy(img.v.begin(), img.v.end(), out.values().begin());
  return out;
}

double psnr(RealImage const &ref, RealImage const &rec)
{
  check_same(ref, rec, "psnr");
  double se = 0.0;
  for (std::size_t i = 0; i < ref.v.size(); i++) { se += (ref.v[i] - rec.v[i]) * (ref.v[i] - rec.v[i]); }
  double const mse = se / static_cast<double>(ref.v.size());
  if (mse == 0.0) { return std::numeric_limits<double>::infinity(); }
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(RealImage const &ref, RealImage const &rec)
{
  check_same(ref, rec, "ssim");
  constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  Index            win = std::min<Index>({11, ref.h, ref.w});
  if (win % 2 == 0) { win--; }
  auto const g = gaussian_window(win, 1.5);

  auto const mx = filter_valid(ref, g), my = filter_valid(rec, g);
  auto const exx = filter_valid(product(ref, ref), g), eyy = filter_valid(product(rec, rec), g);
  auto const exy = filter_valid(product(ref, rec), g);
  double     sum = 0.0;
  for (std::size_t i = 0; i < mx.v.size(); i++) {
    double const ux = mx.v[i], uy = my.v[i];
    double const sx = exx.v[i] - ux * ux, sy = eyy.v[i] - uy * uy, sxy = exy.v[i] - ux * uy;
    sum += ((2.0 * ux * uy + C1) * (2.0 * sxy + C2)) / ((ux * ux + uy * uy + C1) * (sx + sy + C2));
  }
  return sum / static_cast<double>(mx.v.size());
}

ImageScores score_reconstruction(ComplexImage const &target, ComplexImage const &pred)
{
  RealImage ref = magnitude(target), rec = magnitude(pred);
  double    peak = *std::max_element(ref.v.begin(), ref.v.end());
  if (peak > 0.0) {
    for (auto &v : ref.v) { v /= peak; }
    for (auto &v : rec.v) { v /= peak; }
  }
  return {psnr(ref, rec), ssim(ref, rec)};
}

Stat mean_std(std::span<double const> values, double cap)
{
  if (values.empty()) { throw InvalidArgument("mean_std: no values"); }
  auto const clip = [cap](double v) { return std::min(v, cap); };
  double     s = 0.0;
  for (double v : values) { s += clip(v); }
  double const mean = s / static_cast<double>(values.size());
  double       ss = 0.0;
  for (double v : values) { ss += (clip(v) - mean) * (clip(v) - mean); }
  return {mean, std::sqrt(ss / static_cast<double>(values.size()))};
}

FoldSummary summarize_folds(std::vector<MetricReport> folds)
{
  if (folds.empty()) { throw InvalidArgument("summarize_folds: no folds"); }
  FoldSummary s;
  for (auto const &f : folds) {
    if (f.psnr.empty()) { throw InvalidArgument("summarize_folds: empty test set"); }
    s.psnr_per_fold.push_back(mean_std(f.psnr).mean);
    s.ssim_per_fold.push_back(mean_std(f.ssim, std::numeric_limits<double>::infinity()).mean);
  }
  s.psnr = mean_std(s.psnr_per_fold);
  s.ssim = mean_std(s.ssim_per_fold, std::numeric_limits<double>::infinity());
  s.folds = std::move(folds);
  return s;
}

nlohmann::json to_json(FoldSummary const &s)
{
  auto per_image = [&](auto member) {
    nlohmann::json arr = nlohmann::json::array();
    for (auto const &f : s.folds) {
      for (double v : f.*member) { arr.push_back(std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr)); }
    }
    return arr;
  };
  return {
    {"psnr",
     {{"mean", s.psnr.mean}, {"std", s.psnr.std}, {"per_fold", s.psnr_per_fold}, {"per_image", per_image(&MetricReport::psnr)}}},
    {"ssim",
     {{"mean", s.ssim.mean}, {"std", s.ssim.std}, {"per_fold", s.ssim_per_fold}, {"per_image", per_image(&MetricReport::ssim)}}},
  };
}

} // namespace emr

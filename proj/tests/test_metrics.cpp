#include "emr/error.hpp"
#include "emr/metrics.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace emr;

namespace {

RealImage random_image(Index h, Index w, std::uint64_t seed, double lo = 0.0, double hi = 1.0)
{
  std::mt19937_64                        rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  RealImage                              img(h, w);
  for (auto &v : img.v) { v = u(rng); }
  return img;
}

// Direct per-window SSIM with explicitly normalized Gaussian weights.
double oracle_ssim(RealImage const &a, RealImage const &b, Index win)
{
  double const C1 = 1e-4, C2 = 9e-4;
  std::vector<double> wts(static_cast<std::size_t>(win * win));
  double              total = 0.0;
  for (Index i = 0; i < win; i++) {
    for (Index j = 0; j < win; j++) {
      double const di = static_cast<double>(i - win / 2), dj = static_cast<double>(j - win / 2);
      wts[i * win + j] = std::exp(-(di * di + dj * dj) / (2 * 1.5 * 1.5));
      total += wts[i * win + j];
    }
  }
  for (auto &x : wts) { x /= total; }
  double sum = 0.0;
  int    count = 0;
  for (Index y = 0; y + win <= a.h; y++) {
    for (Index x = 0; x + win <= a.w; x++) {
      double ma = 0, mb = 0;
      for (Index i = 0; i < win; i++) {
        for (Index j = 0; j < win; j++) {
          ma += wts[i * win + j] * a.at(y + i, x + j);
          mb += wts[i * win + j] * b.at(y + i, x + j);
        }
      }
      double va = 0, vb = 0, cov = 0;
      for (Index i = 0; i < win; i++) {
        for (Index j = 0; j < win; j++) {
          double const da = a.at(y + i, x + j) - ma, db = b.at(y + i, x + j) - mb;
          va += wts[i * win + j] * da * da;
          vb += wts[i * win + j] * db * db;
          cov += wts[i * win + j] * da * db;
        }
      }
      sum += (2 * ma * mb + C1) * (2 * cov + C2) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
      count++;
    }
  }
  return sum / count;
}

} // namespace

TEST_CASE("psnr")
{
  auto const a = random_image(16, 16, 1);
  CHECK(std::isinf(psnr(a, a)));
  CHECK(psnr(a, a) > 0);

  RealImage b = a;
  for (auto &v : b.v) { v += 0.1; }
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));

  auto const c = random_image(16, 16, 2);
  double     mse = 0.0;
  for (std::size_t i = 0; i < a.v.size(); i++) { mse += (a.v[i] - c.v[i]) * (a.v[i] - c.v[i]); }
  mse /= static_cast<double>(a.v.size());
  CHECK(std::abs(psnr(a, c) - 10.0 * std::log10(1.0 / mse)) < 1e-9);

  RealImage half = a;
  for (std::size_t i = 0; i < a.v.size(); i++) { half.v[i] = a.v[i] + 0.5 * (c.v[i] - a.v[i]); }
  CHECK(psnr(a, half) > psnr(a, c));
  CHECK_THROWS_AS(psnr(a, RealImage(16, 15)), InvalidArgument);
}

TEST_CASE("ssim")
{
  auto const a = random_image(24, 20, 3);
  CHECK(ssim(a, a) == 1.0);

  for (std::uint64_t s = 0; s < 5; s++) {
    auto const x = random_image(20 + static_cast<Index>(s), 17, s + 10);
    auto const y = random_image(20 + static_cast<Index>(s), 17, s + 20);
    CHECK(std::abs(ssim(x, y) - oracle_ssim(x, y, 11)) < 1e-10);
    CHECK(std::abs(ssim(x, y) - ssim(y, x)) < 1e-12);
  }
  auto const small_a = random_image(7, 9, 4), small_b = random_image(7, 9, 5);
  CHECK(std::abs(ssim(small_a, small_b) - oracle_ssim(small_a, small_b, 7)) < 1e-10);

  double const mx = 0.3, my = 0.7, c1 = 1e-4;
  RealImage    cx(16, 16, mx), cy(16, 16, my);
  CHECK(ssim(cx, cy) == doctest::Approx((2 * mx * my + c1) / (mx * mx + my * my + c1)).epsilon(1e-12));

  for (std::uint64_t s = 0; s < 100; s++) {
    auto const x = random_image(12, 12, s, -1.0, 1.0);
    auto const y = random_image(12, 12, s + 1000, -1.0, 1.0);
    double const v = ssim(x, y);
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  CHECK_THROWS_AS(ssim(a, RealImage(24, 21)), InvalidArgument);
}

TEST_CASE("magnitude")
{
  ComplexImage z(4, 5);
  for (Index y = 0; y < 4; y++) {
    for (Index x = 0; x < 5; x++) {
      z.re(y, x) = 3.0;
      z.im(y, x) = 4.0;
    }
  }
  for (double v : magnitude(z).v) { CHECK(v == 5.0); }

  ComplexImage r(3, 3);
  r.re(1, 1) = -2.0;
  CHECK(magnitude(r).at(1, 1) == 2.0);

  std::mt19937_64                        rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  ComplexImage                           q(6, 6);
  for (auto &v : q.values()) { v = u(rng); }
  auto const m = magnitude(q);
  for (Index y = 0; y < 6; y++) {
    for (Index x = 0; x < 6; x++) { CHECK(m.at(y, x) == doctest::Approx(std::hypot(q.re(y, x), q.im(y, x))).epsilon(1e-15)); }
  }
  CHECK(magnitude(as_complex(m)) == m);
}

TEST_CASE("score reconstruction normalizes by the reference maximum")
{
  auto const   ref = random_image(16, 16, 7);
  auto const   rec = random_image(16, 16, 8);
  ComplexImage t = as_complex(ref), p = as_complex(rec);
  for (auto &v : t.values()) { v *= 4.0; }
  for (auto &v : p.values()) { v *= 4.0; }
  double peak = 0.0;
  for (double v : ref.v) { peak = std::max(peak, v); }
  RealImage nr = ref, np = rec;
  for (auto &v : nr.v) { v /= peak; }
  for (auto &v : np.v) { v /= peak; }
  auto const sc = score_reconstruction(t, p);
  CHECK(sc.psnr == doctest::Approx(psnr(nr, np)).epsilon(1e-12));
  CHECK(sc.ssim == doctest::Approx(ssim(nr, np)).epsilon(1e-12));

  auto const same = score_reconstruction(t, t);
  CHECK(std::isinf(same.psnr));
  CHECK(same.ssim == 1.0);
}

TEST_CASE("mean and population std")
{
  std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  auto const          s = mean_std(v);
  CHECK(s.mean == 2.5);
  CHECK(s.std == doctest::Approx(std::sqrt(1.25)));
  std::vector<double> inf{std::numeric_limits<double>::infinity(), 50.0};
  CHECK(mean_std(inf).mean == 75.0);
  CHECK(mean_std(inf).std == 25.0);
  CHECK_THROWS_AS(mean_std(std::vector<double>{}), InvalidArgument);
}

TEST_CASE("fold aggregation")
{
  std::vector<MetricReport> folds{
    {{30.0, 32.0}, {0.90, 0.92}},
    {{28.0, 29.0, 30.0}, {0.80, 0.82, 0.84}},
    {{std::numeric_limits<double>::infinity()}, {1.0}},
  };
  auto const s = summarize_folds(folds);
  REQUIRE(s.psnr_per_fold.size() == 3);
  CHECK(s.psnr_per_fold[0] == 31.0);
  CHECK(s.psnr_per_fold[1] == 29.0);
  CHECK(s.psnr_per_fold[2] == 100.0);
  double const m = (31.0 + 29.0 + 100.0) / 3.0;
  double const var = ((31.0 - m) * (31.0 - m) + (29.0 - m) * (29.0 - m) + (100.0 - m) * (100.0 - m)) / 3.0;
  CHECK(s.psnr.mean == doctest::Approx(m).epsilon(1e-14));
  CHECK(s.psnr.std == doctest::Approx(std::sqrt(var)).epsilon(1e-14));
  CHECK(s.ssim_per_fold[1] == doctest::Approx(0.82));

  auto const j = to_json(s);
  for (char const *key : {"psnr", "ssim"}) {
    CHECK(j.at(key).contains("mean"));
    CHECK(j.at(key).contains("std"));
    CHECK(j.at(key).at("per_fold").size() == 3);
    CHECK(j.at(key).at("per_image").size() == 6);
  }
  CHECK(j["psnr"]["per_image"][5].is_null());
  CHECK_THROWS_AS(summarize_folds({}), InvalidArgument);
}

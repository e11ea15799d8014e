#include "emr/kspace.hpp"
#include "emr/error.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <tuple>

namespace emr {

namespace {

using Cx = std::complex<double>;

// FFTW planning is not thread safe, execution with new-array functions is.
class PlanCache
{
public:
  ~PlanCache()
  {
    for (auto &[key, plan] : plans_) { fftw_destroy_plan(plan); }
  }

  fftw_plan get(Index h, Index w, int sign)
  {
    std::lock_guard lock(mutex_);
    auto const      key = std::make_tuple(h, w, sign);
    if (auto it = plans_.find(key); it != plans_.end()) { return it->second; }
    std::vector<Cx> scratch(static_cast<std::size_t>(h * w));
    auto           *p = reinterpret_cast<fftw_complex *>(scratch.data());
    fftw_plan       plan =
      fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), p, p, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
    plans_.emplace(key, plan);
    return plan;
  }

private:
  std::mutex                                         mutex_;
  std::map<std::tuple<Index, Index, int>, fftw_plan> plans_;
};

PlanCache &plans()
{
  static PlanCache cache;
  return cache;
}

// Centered orthonormal transform: ifftshift, FFT, fftshift, scale.
template <typename Out, typename In>
Out centered_transform(In const &in, int sign)
{
  Index const h = in.h(), w = in.w();
  if (h < 1 || w < 1) { throw InvalidArgument("fft: empty grid"); }
  if (!all_finite(in.values())) { throw InvalidArgument("fft: non-finite input"); }
  Index const     ch = h / 2, cw = w / 2;
  std::vector<Cx> buf(static_cast<std::size_t>(h * w));
  for (Index y = 0; y < h; y++) {
    Index const ys = (y - ch + h) % h;
    for (Index x = 0; x < w; x++) {
      Index const xs = (x - cw + w) % w;
      buf[ys * w + xs] = Cx(in.re(y, x), in.im(y, x));
    }
  }
  auto *p = reinterpret_cast<fftw_complex *>(buf.data());
  fftw_execute_dft(plans().get(h, w, sign), p, p);
  double const scale = 1.0 / std::sqrt(static_cast<double>(h * w));
  Out          out(h, w);
  for (Index y = 0; y < h; y++) {
    Index const ys = (y - ch + h) % h;
    for (Index x = 0; x < w; x++) {
      Index const xs = (x - cw + w) % w;
      Cx const    v = buf[ys * w + xs] * scale;
      out.re(y, x) = v.real();
      out.im(y, x) = v.imag();
    }
  }
  return out;
}

void check_shapes(Index h, Index w, SamplingMask const &m, char const *what)
{
  if (m.h != h || m.w != w) { throw InvalidArgument(std::string(what) + ": mask shape mismatch"); }
}

} // namespace

bool SamplingMask::sampled(Index row) const { return std::binary_search(lines.begin(), lines.end(), row); }

KSpaceGrid fft2c(ComplexImage const &img) { return centered_transform<KSpaceGrid>(img, FFTW_FORWARD); }

ComplexImage ifft2c(KSpaceGrid const &k) { return centered_transform<ComplexImage>(k, FFTW_BACKWARD); }

Index mask_line_count(Index h, double rate) { return static_cast<Index>(std::floor(rate * static_cast<double>(h) + 0.5)); }

SamplingMask make_cartesian_mask(Index h, Index w, double rate, std::uint64_t seed)
{
  if (!(rate > 0.0 && rate <= 1.0)) { throw InvalidArgument("make_cartesian_mask: rate must lie in (0, 1]"); }
  if (h < 1 || w < 1) { throw InvalidArgument("make_cartesian_mask: empty grid"); }
  Index const        count = std::min(mask_line_count(h, rate), h);
  std::vector<Index> rows(static_cast<std::size_t>(h));
  std::iota(rows.begin(), rows.end(), Index{0});
  // Partial Fisher-Yates: the first `count` entries are a uniform draw without replacement.
  std::mt19937_64 rng(seed);
  for (Index i = 0; i < count; i++) {
    std::uniform_int_distribution<Index> pick(i, h - 1);
    std::swap(rows[i], rows[pick(rng)]);
  }
  rows.resize(static_cast<std::size_t>(count));
  std::sort(rows.begin(), rows.end());
  return SamplingMask{h, w, rate, seed, std::move(rows)};
}

SamplingMask full_mask(Index h, Index w) { return make_cartesian_mask(h, w, 1.0, 0); }

KSpaceGrid undersample(KSpaceGrid const &k_full, SamplingMask const &m)
{
  check_shapes(k_full.h(), k_full.w(), m, "undersample");
  KSpaceGrid out(k_full.h(), k_full.w());
  for (Index y : m.lines) {
    for (Index x = 0; x < k_full.w(); x++) {
      out.re(y, x) = k_full.re(y, x);
      out.im(y, x) = k_full.im(y, x);
    }
  }
  return out;
}

KSpaceGrid data_consistency(KSpaceGrid const &k_rec, KSpaceGrid const &k0, SamplingMask const &m)
{
  if (!k_rec.same_shape(k0)) { throw InvalidArgument("data_consistency: shape mismatch"); }
  check_shapes(k_rec.h(), k_rec.w(), m, "data_consistency");
  KSpaceGrid out = k_rec;
  for (Index y : m.lines) {
    for (Index x = 0; x < k0.w(); x++) {
      out.re(y, x) = k0.re(y, x);
      out.im(y, x) = k0.im(y, x);
    }
  }
  return out;
}

ComplexImage tdc(ComplexImage const &s, KSpaceGrid const &k0, SamplingMask const &m, ComplexImage *intermediate)
{
  if (!s.same_shape(ComplexImage(k0.h(), k0.w()))) { throw InvalidArgument("tdc: shape mismatch"); }
  check_shapes(s.h(), s.w(), m, "tdc");
  ComplexImage first = ifft2c(data_consistency(fft2c(s), k0, m));
  ComplexImage mag(s.h(), s.w());
  for (Index y = 0; y < s.h(); y++) {
    for (Index x = 0; x < s.w(); x++) { mag.re(y, x) = std::hypot(first.re(y, x), first.im(y, x)); }
  }
  if (intermediate) { *intermediate = std::move(first); }
  return ifft2c(data_consistency(fft2c(mag), k0, m));
}

ComplexImage project_unsampled(ComplexImage const &g, SamplingMask const &m)
{
  check_shapes(g.h(), g.w(), m, "project_unsampled");
  KSpaceGrid k = fft2c(g);
  for (Index y : m.lines) {
    for (Index x = 0; x < k.w(); x++) {
      k.re(y, x) = 0.0;
      k.im(y, x) = 0.0;
    }
  }
  return ifft2c(k);
}

ComplexImage tdc_backward(ComplexImage const &intermediate, SamplingMask const &m, ComplexImage const &grad_out)
{
  if (!intermediate.same_shape(grad_out)) { throw InvalidArgument("tdc_backward: shape mismatch"); }
  ComplexImage const g_mag = project_unsampled(grad_out, m);
  ComplexImage      g_first(grad_out.h(), grad_out.w());
  for (Index y = 0; y < grad_out.h(); y++) {
    for (Index x = 0; x < grad_out.w(); x++) {
      double const a = intermediate.re(y, x), b = intermediate.im(y, x);
      double const r = std::hypot(a, b);
      if (r > 0.0) {
        // Only the real channel of the magnitude image feeds forward.
        g_first.re(y, x) = g_mag.re(y, x) * a / r;
        g_first.im(y, x) = g_mag.re(y, x) * b / r;
      }
    }
  }
  return project_unsampled(g_first, m);
}

ComplexImage to_image(Tensor const &t, Index n)
{
  if (t.c() != 2) { throw InvalidArgument("to_image: tensor must have 2 channels"); }
  ComplexImage img(t.h(), t.w());
  std::copy_n(t.sample(n), 2 * t.plane(), img.values().begin());
  return img;
}

void store_image(ComplexImage const &img, Tensor &t, Index n)
{
  if (t.c() != 2 || t.h() != img.h() || t.w() != img.w()) { throw InvalidArgument("store_image: shape mismatch"); }
  std::copy(img.values().begin(), img.values().end(), t.sample(n));
}

nlohmann::json mask_to_json(SamplingMask const &m)
{
  return {{"H", m.h}, {"W", m.w}, {"rate", m.rate}, {"seed", m.seed}, {"lines", m.lines}};
}

SamplingMask mask_from_json(nlohmann::json const &j)
{
  SamplingMask m;
  try {
    m.h = j.at("H").get<Index>();
    m.w = j.at("W").get<Index>();
    m.rate = j.at("rate").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.lines = j.at("lines").get<std::vector<Index>>();
  } catch (nlohmann::json::exception const &e) {
    throw InvalidArgument(std::string("mask json: ") + e.what());
  }
  std::sort(m.lines.begin(), m.lines.end());
  if (std::adjacent_find(m.lines.begin(), m.lines.end()) != m.lines.end()) {
    throw InvalidArgument("mask json: duplicate lines");
  }
  for (Index l : m.lines) {
    if (l < 0 || l >= m.h) { throw InvalidArgument("mask json: line out of range"); }
  }
  return m;
}

std::uint64_t derive_seed(std::uint64_t global, std::uint64_t index)
{
  // splitmix64 finalizer over the combined key
  std::uint64_t z = global + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

} // namespace emr

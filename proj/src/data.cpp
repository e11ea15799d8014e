#include "emr/data.hpp"
#include "emr/layers.hpp"
#include "emr/error.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <thread>

namespace emr {

namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little, "float32 slices are stored little-endian");

std::vector<float> read_f32(fs::path const &path, Index count)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) { throw IngestError("cannot open slice file " + path.string()); }
  in.seekg(0, std::ios::end);
  auto const bytes = static_cast<Index>(in.tellg());
  if (bytes != count * 4) {
    throw IngestError("slice file " + path.string() + " has " + std::to_string(bytes) + " bytes, expected " +
                      std::to_string(count * 4));
  }
  in.seekg(0);
  std::vector<float> v(static_cast<std::size_t>(count));
  in.read(reinterpret_cast<char *>(v.data()), bytes);
  if (!in) { throw IngestError("short read on " + path.string()); }
  return v;
}

unsigned worker_count()
{
  if (char const *env = std::getenv("EMR_NUM_WORKERS")) {
    int const n = std::atoi(env);
    if (n >= 1) { return static_cast<unsigned>(n); }
  }
  return 1;
}

struct SubjectEntry
{
  std::string           id;
  std::vector<fs::path> files;
};

Subject load_subject(SubjectEntry const &entry, Index h, Index w)
{
  Subject                         s{entry.id, {}};
  double                          peak = 0.0;
  std::vector<std::vector<float>> slices;
  for (auto const &file : entry.files) {
    auto v = read_f32(file, h * w);
    for (float f : v) {
      if (!std::isfinite(f)) { throw IngestError("non-finite value in " + file.string()); }
      if (f < 0.0f) { throw IngestError("negative intensity in " + file.string()); }
      peak = std::max(peak, static_cast<double>(f));
    }
    slices.push_back(std::move(v));
  }
  for (auto const &v : slices) {
    ComplexImage img(h, w);
    for (Index i = 0; i < h * w; i++) { img.values()[i] = peak > 0.0 ? static_cast<double>(v[i]) / peak : 0.0; }
    s.slices.push_back(std::move(img));
  }
  return s;
}

} // namespace

std::size_t Dataset::slice_count() const
{
  std::size_t n = 0;
  for (auto const &s : subjects) { n += s.slices.size(); }
  return n;
}

std::vector<std::string> Dataset::subject_ids() const
{
  std::vector<std::string> ids;
  for (auto const &s : subjects) { ids.push_back(s.id); }
  return ids;
}

std::string slice_filename(std::string const &subject, std::size_t k)
{
  return "subject_" + subject + "_slice_" + std::to_string(k) + ".f32";
}

Dataset load_dataset(fs::path const &manifest)
{
  std::ifstream in(manifest);
  if (!in) { throw IngestError("cannot open manifest " + manifest.string()); }
  nlohmann::json j;
  try {
    in >> j;
  } catch (nlohmann::json::exception const &e) {
    throw IngestError("malformed manifest " + manifest.string() + ": " + e.what());
  }
  Dataset                   ds;
  std::vector<SubjectEntry> entries;
  try {
    if (j.at("schema").get<int>() != 1) { throw IngestError("unsupported manifest schema in " + manifest.string()); }
    if (j.contains("dtype") && j["dtype"].get<std::string>() != "float32-le") {
      throw IngestError("unsupported dtype in " + manifest.string());
    }
    ds.name = j.value("name", std::string("dataset"));
    ds.h = j.at("H").get<Index>();
    ds.w = j.at("W").get<Index>();
    std::set<std::string> seen;
    for (auto const &s : j.at("subjects")) {
      SubjectEntry e{s.at("id").get<std::string>(), {}};
      if (!seen.insert(e.id).second) { throw IngestError("duplicate subject id '" + e.id + "' in " + manifest.string()); }
      for (auto const &f : s.at("slices")) { e.files.push_back(manifest.parent_path() / f.get<std::string>()); }
      entries.push_back(std::move(e));
    }
  } catch (nlohmann::json::exception const &e) {
    throw IngestError("invalid manifest " + manifest.string() + ": " + e.what());
  }
  if (ds.h < 1 || ds.w < 1) { throw IngestError("invalid grid size in " + manifest.string()); }

  ds.subjects.resize(entries.size());
  std::vector<std::exception_ptr> errors(entries.size());
  unsigned const                  workers = std::min<unsigned>(worker_count(), std::max<std::size_t>(entries.size(), 1));
  auto                            run = [&](unsigned wid) {
    for (std::size_t i = wid; i < entries.size(); i += workers) {
      try {
        ds.subjects[i] = load_subject(entries[i], ds.h, ds.w);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    run(0);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < workers; t++) { pool.emplace_back(run, t); }
  }
  for (auto const &e : errors) {
    if (e) { std::rethrow_exception(e); }
  }
  return ds;
}

fs::path export_dataset(Dataset const &ds, fs::path const &dir)
{
  fs::create_directories(dir);
  nlohmann::json subjects = nlohmann::json::array();
  for (auto const &s : ds.subjects) {
    nlohmann::json files = nlohmann::json::array();
    for (std::size_t k = 0; k < s.slices.size(); k++) {
      auto const         name = slice_filename(s.id, k);
      std::vector<float> v(static_cast<std::size_t>(ds.h * ds.w));
      for (Index i = 0; i < ds.h * ds.w; i++) { v[i] = static_cast<float>(s.slices[k].values()[i]); }
      std::ofstream out(dir / name, std::ios::binary);
      out.write(reinterpret_cast<char const *>(v.data()), static_cast<std::streamsize>(v.size() * 4));
      if (!out) { throw IngestError("cannot write " + (dir / name).string()); }
      files.push_back(name);
    }
    subjects.push_back({{"id", s.id}, {"slices", files}});
  }
  nlohmann::json const manifest{{"schema", 1},        {"name", ds.name}, {"H", ds.h}, {"W", ds.w},
                                {"dtype", "float32-le"}, {"value_range", {0.0, 1.0}}, {"subjects", subjects}};
  auto const           path = dir / "manifest.json";
  std::ofstream        out(path);
  out << manifest.dump(2) << "\n";
  if (!out) { throw IngestError("cannot write " + path.string()); }
  return path;
}

std::vector<Ellipse> shepp_logan_ellipses()
{
  return {
    {1.0, 0.69, 0.92, 0.0, 0.0, 0.0},          {-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0},
    {-0.2, 0.11, 0.31, 0.22, 0.0, -18.0},      {-0.2, 0.16, 0.41, -0.22, 0.0, 18.0},
    {0.1, 0.21, 0.25, 0.0, 0.35, 0.0},         {0.1, 0.046, 0.046, 0.0, 0.1, 0.0},
    {0.1, 0.046, 0.046, 0.0, -0.1, 0.0},       {0.1, 0.046, 0.023, -0.08, -0.605, 0.0},
    {0.1, 0.023, 0.023, 0.0, -0.605, 0.0},     {0.1, 0.023, 0.046, 0.06, -0.605, 0.0},
  };
}

RealImage render_ellipses(Index h, Index w, std::vector<Ellipse> const &ellipses)
{
  RealImage img(h, w);
  for (Index i = 0; i < h; i++) {
    double const y = 1.0 - 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(h);
    for (Index j = 0; j < w; j++) {
      double const x = 2.0 * (static_cast<double>(j) + 0.5) / static_cast<double>(w) - 1.0;
      double       v = 0.0;
      for (auto const &e : ellipses) {
        double const phi = e.phi_deg * std::numbers::pi / 180.0;
        double const dx = x - e.x0, dy = y - e.y0;
        double const u = dx * std::cos(phi) + dy * std::sin(phi);
        double const t = -dx * std::sin(phi) + dy * std::cos(phi);
        if ((u * u) / (e.a * e.a) + (t * t) / (e.b * e.b) <= 1.0) { v += e.intensity; }
      }
      img.at(i, j) = std::clamp(v, 0.0, 1.0);
    }
  }
  return img;
}

RealImage shepp_logan(Index h, Index w)
{
  if (h < 8 || w < 8) { throw InvalidArgument("shepp_logan: grid must be at least 8x8"); }
  return render_ellipses(h, w, shepp_logan_ellipses());
}

RealImage phantom_variant(Index h, Index w, std::uint64_t seed)
{
  if (h < 8 || w < 8) { throw InvalidArgument("phantom_variant: grid must be at least 8x8"); }
  Rng                                    rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double const                           scale = 0.9 + 0.08 * u(rng);
  double const                           sx = 0.05 * u(rng), sy = 0.05 * u(rng);
  double const                           rot = 12.0 * u(rng);
  double const                           r = rot * std::numbers::pi / 180.0;
  auto                                   ellipses = shepp_logan_ellipses();
  for (std::size_t i = 0; i < ellipses.size(); i++) {
    auto &e = ellipses[i];
    if (i >= 2) {
      // inner structures: jitter size, position and contrast
      e.a *= 1.0 + 0.2 * u(rng);
      e.b *= 1.0 + 0.2 * u(rng);
      e.x0 += 0.03 * u(rng);
      e.y0 += 0.03 * u(rng);
      e.intensity *= 1.0 + 0.5 * u(rng);
    }
    double const x0 = e.x0 * scale, y0 = e.y0 * scale;
    e.x0 = x0 * std::cos(r) - y0 * std::sin(r) + sx;
    e.y0 = x0 * std::sin(r) + y0 * std::cos(r) + sy;
    e.a *= scale;
    e.b *= scale;
    e.phi_deg += rot;
  }
  return render_ellipses(h, w, ellipses);
}

Dataset phantom_dataset(Index h, Index w, int subjects, int slices, std::uint64_t seed)
{
  Dataset ds{"phantoms", h, w, {}};
  for (int s = 0; s < subjects; s++) {
    char id[16];
    std::snprintf(id, sizeof(id), "%03d", s);
    Subject subj{id, {}};
    for (int k = 0; k < slices; k++) {
      subj.slices.push_back(as_complex(phantom_variant(h, w, derive_seed(seed, static_cast<std::uint64_t>(s * 1000 + k)))));
    }
    ds.subjects.push_back(std::move(subj));
  }
  return ds;
}

Sample simulate_pair(ComplexImage const &y, double rate, std::uint64_t mask_seed)
{
  if (!all_finite(y.values())) { throw InvalidArgument("simulate_pair: non-finite image"); }
  for (Index i = 0; i < y.plane(); i++) {
    if (y.values()[i] < 0.0 || y.values()[i] > 1.0) { throw InvalidArgument("simulate_pair: intensities must lie in [0, 1]"); }
  }
  Sample s;
  s.y = y;
  s.mask = make_cartesian_mask(y.h(), y.w(), rate, mask_seed);
  s.k0 = undersample(fft2c(y), s.mask);
  s.x = ifft2c(s.k0);
  return s;
}

std::vector<Sample> make_samples(Dataset const &ds, std::vector<std::string> const &subjects, double rate, std::uint64_t seed)
{
  std::map<std::string, std::size_t> first_index;
  std::size_t                        offset = 0;
  for (auto const &s : ds.subjects) {
    first_index[s.id] = offset;
    offset += s.slices.size();
  }
  std::vector<Sample> out;
  for (auto const &id : subjects) {
    auto it = first_index.find(id);
    if (it == first_index.end()) { throw InvalidArgument("unknown subject '" + id + "'"); }
    auto const &subj = *std::find_if(ds.subjects.begin(), ds.subjects.end(), [&](Subject const &s) { return s.id == id; });
    for (std::size_t k = 0; k < subj.slices.size(); k++) {
      Sample s = simulate_pair(subj.slices[k], rate, derive_seed(seed, it->second + k));
      s.subject = id;
      out.push_back(std::move(s));
    }
  }
  return out;
}

} // namespace emr

#include "emr/run.hpp"
#include "emr/checkpoint.hpp"
#include "emr/error.hpp"

#include <fmt/format.h>
#include <png.h>

#include <chrono>
#include <cstdio>
#include <fcntl.h>
#include <fstream>
#include <unistd.h>

namespace emr {

void RunConfig::validate() const
{
  network.validate();
  train.validate();
  if (fold < 0 || fold > 2) { throw InvalidArgument("run config: fold must be 0, 1 or 2"); }
  if (!(data.rate > 0.0 && data.rate <= 1.0)) { throw InvalidArgument("run config: rate must lie in (0, 1]"); }
  if (data.manifest.empty() && (data.phantom_size < 8 || data.phantom_subjects < 3 || data.phantom_slices < 1)) {
    throw InvalidArgument("run config: phantom cohort needs size >= 8, >= 3 subjects and >= 1 slice");
  }
  if (!data.manifest.empty() && !fs::exists(data.manifest)) {
    throw InvalidArgument("dataset manifest not found: " + data.manifest);
  }
}

RunConfig preset_config(std::string const &name)
{
  RunConfig cfg;
  cfg.preset = name;
  if (name == "desk") {
    cfg.network.components = 2;
    cfg.network.channels = 4;
    cfg.train.warmup_epochs = 2;
    cfg.train.search_epochs = 6;
    cfg.train.retrain_epochs = 6;
    cfg.data.phantom_size = 32;
    cfg.data.phantom_subjects = 60;
    cfg.data.phantom_slices = 4;
    cfg.train.lr_w = 5e-3;
    cfg.train.batch_size = 1;
  } else if (name == "paper") {
    cfg.network.components = 5;
    cfg.network.channels = 19;
    cfg.train.warmup_epochs = 50;
    cfg.train.search_epochs = 50;
    cfg.train.retrain_epochs = 100;
    cfg.train.batch_size = 8;
    cfg.data.phantom_size = 256;
  } else {
    throw InvalidArgument("unknown preset '" + name + "' (expected desk or paper)");
  }
  return cfg;
}

nlohmann::json to_json(RunConfig const &cfg)
{
  return {{"preset", cfg.preset},
          {"network", to_json(cfg.network)},
          {"train", to_json(cfg.train)},
          {"data",
           {{"manifest", cfg.data.manifest},
            {"phantom_size", cfg.data.phantom_size},
            {"phantom_subjects", cfg.data.phantom_subjects},
            {"phantom_slices", cfg.data.phantom_slices},
            {"rate", cfg.data.rate}}},
          {"fold", cfg.fold},
          {"random_arch", cfg.random_arch}};
}

RunConfig run_config_from_json(nlohmann::json const &j)
{
  if (!j.is_object()) { throw InvalidArgument("run config must be a JSON object"); }
  RunConfig cfg = j.contains("preset") && j["preset"] != "custom" ? preset_config(j["preset"].get<std::string>()) : RunConfig{};
  try {
    for (auto const &[key, value] : j.items()) {
      if (key == "preset") {
        cfg.preset = value.get<std::string>();
      } else if (key == "network") {
        auto merged = to_json(cfg.network);
        merged.update(value);
        cfg.network = network_config_from_json(merged);
      } else if (key == "train") {
        auto merged = to_json(cfg.train);
        merged.update(value);
        cfg.train = train_config_from_json(merged);
      } else if (key == "data") {
        for (auto const &[dk, dv] : value.items()) {
          if (dk == "manifest") {
            cfg.data.manifest = dv.get<std::string>();
          } else if (dk == "phantom_size") {
            cfg.data.phantom_size = dv.get<Index>();
          } else if (dk == "phantom_subjects") {
            cfg.data.phantom_subjects = dv.get<int>();
          } else if (dk == "phantom_slices") {
            cfg.data.phantom_slices = dv.get<int>();
          } else if (dk == "rate") {
            cfg.data.rate = dv.get<double>();
          } else {
            throw InvalidArgument("run config: unknown key 'data." + dk + "'");
          }
        }
      } else if (key == "fold") {
        cfg.fold = value.get<int>();
      } else if (key == "random_arch") {
        cfg.random_arch = value.get<bool>();
      } else {
        throw InvalidArgument("run config: unknown key '" + key + "'");
      }
    }
  } catch (nlohmann::json::exception const &e) {
    throw InvalidArgument(std::string("run config: ") + e.what());
  }
  return cfg;
}

RunConfig load_run_config(fs::path const &path)
{
  std::ifstream in(path);
  if (!in) { throw InvalidArgument("config file not found: " + path.string()); }
  try {
    return run_config_from_json(nlohmann::json::parse(in));
  } catch (nlohmann::json::parse_error const &e) {
    throw InvalidArgument("config file " + path.string() + " is not valid JSON: " + e.what());
  }
}

std::string config_hash(RunConfig const &cfg)
{
  // FNV-1a over the canonical dump
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : to_json(cfg).dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

RunLock::RunLock(fs::path dir)
  : path_{std::move(dir) / ".lock"}
{
  fs::create_directories(path_.parent_path());
  int const fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) { throw InvalidArgument("run directory is locked by another writer: " + path_.parent_path().string()); }
  auto const pid = std::to_string(::getpid());
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

RunLock::~RunLock()
{
  std::error_code ec;
  fs::remove(path_, ec);
}

void write_json(fs::path const &path, nlohmann::json const &j)
{
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) { throw InvalidArgument("cannot write " + path.string()); }
}

nlohmann::json read_json(fs::path const &path)
{
  std::ifstream in(path);
  if (!in) { throw IngestError("missing file " + path.string()); }
  try {
    return nlohmann::json::parse(in);
  } catch (nlohmann::json::parse_error const &e) {
    throw IngestError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

Dataset load_run_dataset(RunConfig const &cfg)
{
  if (!cfg.data.manifest.empty()) {
    if (!fs::exists(cfg.data.manifest)) { throw InvalidArgument("dataset manifest not found: " + cfg.data.manifest); }
    return load_dataset(cfg.data.manifest);
  }
  return phantom_dataset(cfg.data.phantom_size, cfg.data.phantom_size, cfg.data.phantom_subjects, cfg.data.phantom_slices,
                         derive_seed(cfg.train.seed, 100));
}

FoldSplit run_split(RunConfig const &cfg, Dataset const &ds) { return split_folds(ds.subject_ids(), cfg.fold, cfg.train.seed); }

namespace {

nlohmann::json stamp(RunConfig const &cfg)
{
  return {{"seed", cfg.train.seed}, {"config_hash", config_hash(cfg)}};
}

std::vector<OpRow> one_hot_rows(Genotype const &g)
{
  std::vector<OpRow> rows;
  for (int op : g.ops) {
    OpRow r{};
    r[op - 1] = 1.0;
    rows.push_back(r);
  }
  return rows;
}

void write_genotype(fs::path const &path, Genotype const &g, nlohmann::json const &extra)
{
  auto j = to_json(g);
  j.update(extra);
  write_json(path, j);
}

} // namespace

SearchOutcome run_search(RunConfig const &cfg, fs::path const &out)
{
  cfg.validate();
  RunLock lock(out);
  write_json(out / "config.json", to_json(cfg));
  Dataset const   ds = load_run_dataset(cfg);
  FoldSplit const split = run_split(cfg, ds);
  auto            folds = to_json(split);
  folds.update(stamp(cfg));
  write_json(out / "folds.json", folds);

  SearchOutcome res;
  auto const   &net = cfg.network;
  nlohmann::json alpha_doc = stamp(cfg);
  alpha_doc["N"] = net.components;
  alpha_doc["cells_per_block"] = net.cells_per_block;
  if (net.homogeneous_op || cfg.random_arch) {
    if (net.homogeneous_op) {
      res.genotype = homogeneous_genotype(net, *net.homogeneous_op);
    } else {
      Rng                                rng(derive_seed(cfg.train.seed, 5));
      std::uniform_int_distribution<int> pick(1, kNumOps);
      res.genotype = Genotype{net.components, net.cells_per_block, {}};
      for (int l = 0; l < net.cells(); l++) { res.genotype.ops.push_back(pick(rng)); }
    }
    res.probs = one_hot_rows(res.genotype);
    alpha_doc["alpha"] = nullptr;
    std::ofstream(out / "search.log.jsonl").flush();
  } else {
    double const  rate = cfg.data.rate;
    auto const    train = make_samples(ds, split.train, rate, cfg.train.seed);
    auto const    val = make_samples(ds, split.val, rate, cfg.train.seed);
    std::ofstream log(out / "search.log.jsonl");
    SearchObserver observer;
    observer.epoch_end = [&](EpochLog const &e) {
      auto j = to_json(e);
      j.update(stamp(cfg));
      log << j.dump() << "\n" << std::flush;
    };
    auto const result = search(train, val, net, cfg.train, &observer);
    res.probs = result.arch.probs();
    res.genotype = discretize(result.arch, net.components, net.cells_per_block);
    std::vector<OpRow> alpha;
    for (int l = 0; l < result.arch.cells(); l++) { alpha.push_back(result.arch.row(l)); }
    alpha_doc["alpha"] = to_json(alpha);
  }
  alpha_doc["probs"] = to_json(res.probs);
  write_json(out / "alpha.json", alpha_doc);
  write_genotype(out / "genotype.json", res.genotype, stamp(cfg));
  return res;
}

Genotype run_ensemble(std::vector<fs::path> const &runs, fs::path const &out)
{
  if (runs.size() != 3) { throw InvalidArgument("ensemble expects exactly three search runs"); }
  std::vector<std::vector<OpRow>> sets;
  std::vector<nlohmann::json>     provenance;
  int                             n = -1, cpb = -1;
  for (auto const &run : runs) {
    auto const doc = read_json(run / "alpha.json");
    try {
      int const rn = doc.at("N").get<int>(), rc = doc.at("cells_per_block").get<int>();
      if (n >= 0 && (rn != n || rc != cpb)) { throw InvalidArgument("ensemble: runs disagree on the number of cells"); }
      n = rn;
      cpb = rc;
      sets.push_back(rows_from_json(doc.at("probs")));
      provenance.push_back({{"config_hash", doc.value("config_hash", "")}, {"seed", doc.value("seed", std::uint64_t{0})}});
    } catch (nlohmann::json::exception const &e) {
      throw IngestError("malformed alpha.json in " + run.string() + ": " + e.what());
    }
    if (static_cast<int>(sets.back().size()) != n * cpb) {
      throw InvalidArgument("ensemble: " + run.string() + " has the wrong number of probability rows");
    }
  }
  Genotype const g = ensemble(sets, n, cpb);
  std::sort(provenance.begin(), provenance.end(), [](auto const &a, auto const &b) { return a.dump() < b.dump(); });
  fs::create_directories(out);
  write_genotype(out / "genotype.json", g, {{"sources", provenance}});
  return g;
}

namespace {

void emit_images(fs::path const &dir, std::vector<Sample> const &test, std::vector<ComplexImage> const &recs)
{
  fs::create_directories(dir);
  for (std::size_t i = 0; i < recs.size(); i++) {
    RealImage ref = magnitude(test[i].y), rec = magnitude(recs[i]), zf = magnitude(test[i].x);
    double    peak = *std::max_element(ref.v.begin(), ref.v.end());
    if (peak <= 0.0) { peak = 1.0; }
    RealImage err(ref.h, ref.w);
    for (std::size_t k = 0; k < ref.v.size(); k++) {
      ref.v[k] /= peak;
      rec.v[k] /= peak;
      zf.v[k] /= peak;
      err.v[k] = std::abs(rec.v[k] - ref.v[k]);
    }
    write_png(dir / fmt::format("{:04d}_target.png", i), ref, 0.0, 1.0);
    write_png(dir / fmt::format("{:04d}_zerofilled.png", i), zf, 0.0, 1.0);
    write_png(dir / fmt::format("{:04d}_recon.png", i), rec, 0.0, 1.0);
    write_png(dir / fmt::format("{:04d}_error.png", i), err, 0.0, 0.2);
  }
}

EvalOutcome evaluate_fold(RunConfig const &cfg, Model &model, fs::path const &out, bool images, nlohmann::json extra)
{
  Dataset const   ds = load_run_dataset(cfg);
  FoldSplit const split = run_split(cfg, ds);
  auto const      test = make_samples(ds, split.test, cfg.data.rate, cfg.train.seed);
  std::vector<ComplexImage> recs;
  auto const                t0 = std::chrono::steady_clock::now();
  EvalOutcome               res;
  res.report = evaluate(model, test, cfg.train.batch_size, &recs);
  res.seconds_per_frame =
    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / static_cast<double>(test.size());

  MetricReport zero_filled;
  for (auto const &s : test) {
    auto const sc = score_reconstruction(s.y, s.x);
    zero_filled.psnr.push_back(sc.psnr);
    zero_filled.ssim.push_back(sc.ssim);
  }
  auto metrics = to_json(summarize_folds({res.report}));
  metrics["zero_filled"] = to_json(summarize_folds({zero_filled}));
  metrics["fold"] = cfg.fold;
  metrics["genotype"] = model.genotype().pretty();
  metrics["param_count"] = model.num_parameters();
  metrics["timing"] = {{"inference_seconds_per_frame", res.seconds_per_frame}};
  metrics.update(extra);
  metrics.update(stamp(cfg));
  write_json(out / "metrics.json", metrics);
  if (images) { emit_images(out / "images", test, recs); }
  return res;
}

} // namespace

EvalOutcome run_retrain(RunConfig const &cfg, Genotype const &g, fs::path const &out, bool images)
{
  cfg.validate();
  check_genotype(g, cfg.network);
  RunLock lock(out);
  write_json(out / "config.json", to_json(cfg));
  Dataset const   ds = load_run_dataset(cfg);
  FoldSplit const split = run_split(cfg, ds);
  auto            folds = to_json(split);
  folds.update(stamp(cfg));
  write_json(out / "folds.json", folds);
  write_genotype(out / "genotype.json", g, stamp(cfg));

  auto const trainval = make_samples(ds, split.trainval(), cfg.data.rate, cfg.train.seed);
  auto const t0 = std::chrono::steady_clock::now();
  auto       trained = retrain(g, trainval, cfg.network, cfg.train);
  double const per_epoch = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() /
                           std::max(1, cfg.train.retrain_epochs);
  save_checkpoint(out / "checkpoint.bin", trained.model, cfg.train.seed, cfg.train.retrain_epochs, stamp(cfg));
  nlohmann::json extra{{"train_loss", trained.epoch_loss}};
  auto           res = evaluate_fold(cfg, trained.model, out, images, extra);
  auto           metrics = read_json(out / "metrics.json");
  metrics["timing"]["train_seconds_per_epoch"] = per_epoch;
  write_json(out / "metrics.json", metrics);
  return res;
}

EvalOutcome run_eval(RunConfig const &cfg, fs::path const &checkpoint, fs::path const &out, bool images)
{
  cfg.validate();
  auto loaded = load_checkpoint(checkpoint);
  RunLock lock(out);
  return evaluate_fold(cfg, loaded.model, out, images, {{"checkpoint", checkpoint.string()}});
}

nlohmann::json run_report(std::vector<fs::path> const &runs)
{
  if (runs.empty()) { throw InvalidArgument("report: no run directories"); }
  std::vector<MetricReport> folds;
  for (auto const &run : runs) {
    auto const   doc = read_json(run / "metrics.json");
    MetricReport r;
    try {
      for (auto const &v : doc.at("psnr").at("per_image")) {
        r.psnr.push_back(v.is_null() ? std::numeric_limits<double>::infinity() : v.get<double>());
      }
      for (auto const &v : doc.at("ssim").at("per_image")) { r.ssim.push_back(v.get<double>()); }
    } catch (nlohmann::json::exception const &e) {
      throw IngestError("malformed metrics.json in " + run.string() + ": " + e.what());
    }
    folds.push_back(std::move(r));
  }
  auto           j = to_json(summarize_folds(std::move(folds)));
  nlohmann::json refs = nlohmann::json::array();
  for (auto const &t : reference_targets()) {
    refs.push_back({{"dataset", t.dataset},
                    {"psnr", {{"mean", t.psnr.mean}, {"std", t.psnr.std}}},
                    {"ssim", {{"mean", t.ssim.mean}, {"std", t.ssim.std}}}});
  }
  j["reference_targets"] = refs;
  return j;
}

void write_png(fs::path const &path, RealImage const &img, double lo, double hi)
{
  FILE *fp = std::fopen(path.c_str(), "wb");
  if (!fp) { throw InvalidArgument("cannot write " + path.string()); }
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop   info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw InvalidArgument("libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<std::size_t>(img.w));
  for (Index y = 0; y < img.h; y++) {
    for (Index x = 0; x < img.w; x++) {
      double const t = std::clamp((img.at(y, x) - lo) / (hi - lo), 0.0, 1.0);
      row[x] = static_cast<png_byte>(std::lround(255.0 * t));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

} // namespace emr

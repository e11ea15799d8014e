// emr: command-line driver for mask/phantom generation, architecture search,
// fold ensembling, retraining, evaluation and parameter audits.

#include "emr/checkpoint.hpp"
#include "emr/error.hpp"
#include "emr/run.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <fstream>
#include <iostream>

using namespace emr;

namespace {

enum Exit
{
  kOk = 0,
  kUsage = 2,
  kData = 3,
  kTraining = 4
};

struct Common
{
  std::string config;
  std::string preset = "desk";
  std::string out = ".";
  std::string data;
  std::string homogeneous;
  long long   seed = -1;
  int         fold = -1;
  double      rate = -1.0;
  int         channels = -1;
  bool        bn = false, no_rir = false, deeper = false, random_arch = false;
};

void add_run_options(CLI::App *cmd, Common &c)
{
  cmd->add_option("--preset", c.preset, "desk or paper (ignored with --config)");
  cmd->add_option("--fold", c.fold, "cross-validation fold 0..2");
  cmd->add_option("--data", c.data, "dataset manifest.json (default: synthetic phantoms)");
  cmd->add_option("--rate", c.rate, "Cartesian sampling rate");
  cmd->add_option("--channels", c.channels, "feature width c");
  cmd->add_option("--homogeneous", c.homogeneous, "repeat one operation in every cell (e.g. O8)");
  cmd->add_flag("--bn", c.bn, "batch norm after convs 1-3 of each cell");
  cmd->add_flag("--no-rir", c.no_rir, "plain chained cells without residuals");
  cmd->add_flag("--deeper", c.deeper, "4 cells per basic block");
  cmd->add_flag("--random-arch", c.random_arch, "random architecture instead of search");
}

RunConfig resolve(Common const &c)
{
  RunConfig cfg = c.config.empty() ? preset_config(c.preset) : load_run_config(c.config);
  if (c.seed >= 0) { cfg.train.seed = static_cast<std::uint64_t>(c.seed); }
  if (c.fold >= 0) { cfg.fold = c.fold; }
  if (!c.data.empty()) { cfg.data.manifest = c.data; }
  if (c.rate > 0.0) { cfg.data.rate = c.rate; }
  if (c.channels > 0) { cfg.network.channels = c.channels; }
  if (!c.homogeneous.empty()) { cfg.network.homogeneous_op = parse_op(c.homogeneous); }
  if (c.bn) { cfg.network.use_bn = true; }
  if (c.no_rir) { cfg.network.use_rir = false; }
  if (c.deeper) { cfg.network.cells_per_block = 4; }
  if (c.random_arch) { cfg.random_arch = true; }
  cfg.validate();
  return cfg;
}

Genotype audit_genotype(NetworkConfig const &net)
{
  if (net.homogeneous_op) { return homogeneous_genotype(net, *net.homogeneous_op); }
  auto const cardiac = cardiac_genotype();
  if (cardiac.components == net.components && cardiac.cells_per_block == net.cells_per_block) { return cardiac; }
  return homogeneous_genotype(net, 8);
}

} // namespace

int main(int argc, char **argv)
{
  CLI::App app{"Cascaded MRI reconstruction with differentiable architecture search"};
  app.require_subcommand(1);
  app.fallthrough();
  Common c;
  app.add_option("--config", c.config, "run configuration JSON");
  app.add_option("--seed", c.seed, "global seed");
  app.add_option("--out", c.out, "output directory or file");

  auto *mask = app.add_subcommand("mask", "generate a random Cartesian mask as JSON");
  Index mask_h = 256, mask_w = 256;
  double mask_rate = 0.15;
  mask->add_option("--H", mask_h);
  mask->add_option("--W", mask_w);
  mask->add_option("--rate", mask_rate);

  auto *phantom = app.add_subcommand("phantom", "render a Shepp-Logan phantom or a phantom cohort dataset");
  Index ph_size = 256;
  int   cohort = 0, cohort_slices = 1;
  phantom->add_option("--size", ph_size);
  phantom->add_option("--cohort", cohort, "write a dataset of this many perturbed subjects");
  phantom->add_option("--slices", cohort_slices, "slices per cohort subject");

  auto *search_cmd = app.add_subcommand("search", "warmup + architecture search on one fold");
  add_run_options(search_cmd, c);

  auto *ens = app.add_subcommand("ensemble", "sum fold probabilities and discretize");
  std::vector<std::string> runs;
  ens->add_option("runs", runs, "three search run directories")->expected(3)->required();

  auto *retrain_cmd = app.add_subcommand("retrain", "retrain a genotype on train+val and evaluate the test fold");
  add_run_options(retrain_cmd, c);
  std::string genotype_path;
  bool        emit = false;
  retrain_cmd->add_option("--genotype", genotype_path, "genotype.json")->required();
  retrain_cmd->add_flag("--emit-images", emit);

  auto *eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test fold");
  add_run_options(eval_cmd, c);
  std::string weights;
  eval_cmd->add_option("--weights", weights, "checkpoint.bin")->required();
  eval_cmd->add_flag("--emit-images", emit);

  auto *audit = app.add_subcommand("audit-params", "count trainable parameters of a configuration");
  add_run_options(audit, c);
  std::string audit_genotype_text;
  audit->add_option("--genotype", audit_genotype_text, "genotype string, e.g. \"O5 O8 O8|...\"");

  auto *report = app.add_subcommand("report", "aggregate metrics.json across fold runs");
  std::vector<std::string> report_runs;
  report->add_option("runs", report_runs)->required();

  try {
    app.parse(argc, argv);
  } catch (CLI::ParseError const &e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    fs::path const out = c.out;
    if (mask->parsed()) {
      auto const m = make_cartesian_mask(mask_h, mask_w, mask_rate, c.seed < 0 ? 0 : static_cast<std::uint64_t>(c.seed));
      auto const path = fs::is_directory(out) ? out / "mask.json" : out;
      write_json(path, mask_to_json(m));
      fmt::print("{} lines of {} sampled -> {}\n", m.lines.size(), m.h, path.string());
    } else if (phantom->parsed()) {
      fs::create_directories(out);
      if (cohort > 0) {
        auto const ds = phantom_dataset(ph_size, ph_size, cohort, cohort_slices, c.seed < 0 ? 0 : static_cast<std::uint64_t>(c.seed));
        fmt::print("wrote {}\n", export_dataset(ds, out).string());
      } else {
        auto const img = c.seed < 0 ? shepp_logan(ph_size, ph_size) : phantom_variant(ph_size, ph_size, static_cast<std::uint64_t>(c.seed));
        write_png(out / "phantom.png", img, 0.0, 1.0);
        std::vector<float> f(img.v.begin(), img.v.end());
        std::ofstream(out / "phantom.f32", std::ios::binary)
          .write(reinterpret_cast<char const *>(f.data()), static_cast<std::streamsize>(f.size() * 4));
        fmt::print("wrote {} and phantom.f32\n", (out / "phantom.png").string());
      }
    } else if (search_cmd->parsed()) {
      auto const cfg = resolve(c);
      auto const res = run_search(cfg, out);
      fmt::print("fold {} genotype: {}\n", cfg.fold, res.genotype.pretty());
    } else if (ens->parsed()) {
      std::vector<fs::path> dirs(runs.begin(), runs.end());
      auto const            g = run_ensemble(dirs, out);
      fmt::print("ensemble genotype: {}\n", g.pretty());
    } else if (retrain_cmd->parsed()) {
      auto const cfg = resolve(c);
      auto const g = genotype_from_json(read_json(genotype_path));
      auto const res = run_retrain(cfg, g, out, emit);
      auto const s = summarize_folds({res.report});
      auto const metrics = read_json(out / "metrics.json");
      fmt::print("fold {} PSNR {:.4f}±{:.4f}  SSIM {:.4f}±{:.4f}\n", cfg.fold, s.psnr.mean, s.psnr.std, s.ssim.mean, s.ssim.std);
      fmt::print("train {:.3f} s/epoch, inference {:.4f} s/frame\n", metrics["timing"]["train_seconds_per_epoch"].get<double>(),
                 res.seconds_per_frame);
    } else if (eval_cmd->parsed()) {
      auto const cfg = resolve(c);
      auto const res = run_eval(cfg, weights, out, emit);
      auto const s = summarize_folds({res.report});
      fmt::print("fold {} PSNR {:.4f}  SSIM {:.6f}  ({:.4f} s/frame)\n", cfg.fold, s.psnr.mean, s.ssim.mean, res.seconds_per_frame);
    } else if (audit->parsed()) {
      auto const cfg = resolve(c);
      auto const g = audit_genotype_text.empty() ? audit_genotype(cfg.network) : parse_genotype(audit_genotype_text);
      auto const total = param_count(cfg.network, g);
      fmt::print("genotype   {}\n", g.pretty());
      fmt::print("c          {}\n", cfg.network.channels);
      fmt::print("total      {} ({:.3f}M)\n", total, static_cast<double>(total) / 1e6);
      fmt::print("c for 0.33M budget: {}\n", calibrate_channels(cfg.network, g, 330000));
    } else if (report->parsed()) {
      std::vector<fs::path> dirs(report_runs.begin(), report_runs.end());
      auto const            j = run_report(dirs);
      if (c.out != ".") { write_json(out, j); }
      fmt::print("PSNR {:.4f} ± {:.4f}\nSSIM {:.4f} ± {:.4f}\n", j["psnr"]["mean"].get<double>(), j["psnr"]["std"].get<double>(),
                 j["ssim"]["mean"].get<double>(), j["ssim"]["std"].get<double>());
      for (auto const &t : j["reference_targets"]) {
        fmt::print("reference ({}): PSNR {} ± {}, SSIM {} ± {}\n", t["dataset"].get<std::string>(), t["psnr"]["mean"].get<double>(),
                   t["psnr"]["std"].get<double>(), t["ssim"]["mean"].get<double>(), t["ssim"]["std"].get<double>());
      }
    }
  } catch (InvalidArgument const &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (IngestError const &e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (TrainingFailure const &e) {
    std::cerr << "training failed: " << e.what() << "\n";
    return kTraining;
  } catch (NumericalError const &e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kTraining;
  } catch (std::exception const &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kOk;
}

#pragma once

#include "emr/nas.hpp"

#include <filesystem>
#include <string>

namespace emr {

namespace fs = std::filesystem;

struct DataConfig
{
  std::string manifest; // empty: synthetic phantoms
  Index       phantom_size = 32;
  int         phantom_subjects = 12;
  int         phantom_slices = 2;
  double      rate = 0.15;
};

struct RunConfig
{
  std::string   preset = "custom";
  NetworkConfig network;
  TrainConfig   train;
  DataConfig    data;
  int           fold = 0;
  bool          random_arch = false; // architecture drawn at random instead of searched

  void validate() const;
};

RunConfig      preset_config(std::string const &name);
nlohmann::json to_json(RunConfig const &cfg);
/// Strict: unknown keys raise InvalidArgument. Missing sections keep the preset's values.
RunConfig      run_config_from_json(nlohmann::json const &j);
RunConfig      load_run_config(fs::path const &path);
std::string    config_hash(RunConfig const &cfg);

/// Exclusive marker file guarding a run directory against concurrent writers.
class RunLock
{
public:
  explicit RunLock(fs::path dir);
  ~RunLock();
  RunLock(RunLock const &) = delete;
  RunLock &operator=(RunLock const &) = delete;

private:
  fs::path path_;
};

Dataset   load_run_dataset(RunConfig const &cfg);
FoldSplit run_split(RunConfig const &cfg, Dataset const &ds);

struct SearchOutcome
{
  Genotype           genotype;
  std::vector<OpRow> probs;
};

/// Split, warmup and search for cfg.fold. Writes config.json, folds.json,
/// search.log.jsonl, alpha.json and genotype.json into `out`.
SearchOutcome run_search(RunConfig const &cfg, fs::path const &out);

/// Sums alpha.json probabilities of the given runs; writes genotype.json with provenance.
Genotype run_ensemble(std::vector<fs::path> const &runs, fs::path const &out);

struct EvalOutcome
{
  MetricReport report;
  double       seconds_per_frame = 0.0;
};

/// Retrains `g` on the fold's train+val subjects, writes checkpoint.bin and metrics.json.
EvalOutcome run_retrain(RunConfig const &cfg, Genotype const &g, fs::path const &out, bool emit_images);
/// Evaluates a checkpoint on the fold's test subjects, writes metrics.json.
EvalOutcome run_eval(RunConfig const &cfg, fs::path const &checkpoint, fs::path const &out, bool emit_images);

/// Aggregates metrics.json of per-fold runs into mean and std across folds.
nlohmann::json run_report(std::vector<fs::path> const &runs);

/// 8-bit grayscale PNG; values mapped linearly from [lo, hi] and clipped.
void write_png(fs::path const &path, RealImage const &img, double lo, double hi);

void           write_json(fs::path const &path, nlohmann::json const &j);
nlohmann::json read_json(fs::path const &path);

} // namespace emr

#pragma once

#include "emr/data.hpp"
#include "emr/metrics.hpp"
#include "emr/network.hpp"

#include <map>
#include <nlohmann/json.hpp>

namespace emr {

struct TrainConfig
{
  double        lr_w = 1e-3;
  double        momentum_w = 0.9; // Adam beta1
  double        beta2_w = 0.999;
  double        wd_w = 1e-7;
  double        lr_alpha = 1e-3;
  double        wd_alpha = 1e-6;
  int           batch_size = 8;
  int           warmup_epochs = 50; // M
  int           search_epochs = 50;
  int           retrain_epochs = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(TrainConfig const &cfg);
TrainConfig    train_config_from_json(nlohmann::json const &j);

/// Adam with loss-coupled L2 weight decay. Moments are kept per parameter array.
class Adam
{
public:
  Adam(double beta1, double beta2, double weight_decay, double eps = 1e-8);
  void step(std::vector<NamedParam> const &params, double lr);

private:
  struct Moments
  {
    std::vector<double> m, v;
    long                t = 0;
  };
  double                     beta1_, beta2_, wd_, eps_;
  std::map<Param *, Moments> state_;
};

/// Throws TrainingFailure if any parameter value is non-finite.
void require_finite(std::vector<NamedParam> const &params, int epoch);

/// Cosine annealing from `base` at step 0 to exactly 0 at step total-1.
double cosine_lr(double base, long step, long total);

struct Batch
{
  Tensor                    x, y;
  std::vector<KSpaceGrid>   k0;
  std::vector<SamplingMask> masks;
};

/// Forward pass that reports overflowing activations as a TrainingFailure at `epoch`.
Tensor training_forward(Model &model, Batch const &b, bool training, int epoch);
Batch make_batch(std::vector<Sample> const &samples, std::span<std::size_t const> indices);
/// Shuffled mini-batches covering the set once; the last batch may be short.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, int batch_size, Rng &rng);

struct FoldSplit
{
  int                      fold = 0;
  std::vector<std::string> train, val, test;

  std::vector<std::string> trainval() const;
};

/// Subject-level 3-fold split; the non-test subjects divide train:val nearest 9:2.
FoldSplit      split_folds(std::vector<std::string> const &subject_ids, int fold, std::uint64_t seed);
nlohmann::json to_json(FoldSplit const &f);

/// Running state of a fixed-architecture training phase.
struct WeightTrainer
{
  Model        &model;
  TrainConfig   cfg;
  Adam          adam;
  long          step = 0;
  long          total_steps = 1;
  Rng           rng;

  WeightTrainer(Model &model, TrainConfig const &cfg, long total_steps, std::uint64_t seed);
  double lr() const { return cosine_lr(cfg.lr_w, step, total_steps); }
};

/// One pass over `train`; returns the mean per-batch loss.
double train_weights_epoch(WeightTrainer &trainer, std::vector<Sample> const &train, int epoch);

struct RetrainResult
{
  Model               model;
  std::vector<double> epoch_loss;
};

/// Trains a fresh fixed-genotype network on train+val for cfg.retrain_epochs.
RetrainResult retrain(Genotype const &g, std::vector<Sample> const &trainval, NetworkConfig const &net, TrainConfig const &cfg);

/// Reconstructs every sample; returns the reconstructions alongside per-image scores.
MetricReport evaluate(Model &model, std::vector<Sample> const &test, int batch_size = 8,
                      std::vector<ComplexImage> *reconstructions = nullptr);

/// Documented full-scale results of the searched network (3-fold mean and std).
struct ReferenceTarget
{
  char const *dataset;
  Stat        psnr, ssim;
};
std::array<ReferenceTarget, 2> const &reference_targets();

} // namespace emr

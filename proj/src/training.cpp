#include "emr/training.hpp"
#include "emr/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace emr {

void TrainConfig::validate() const
{
  if (!(lr_w >= 0.0) || !(lr_alpha >= 0.0) || !(wd_w >= 0.0) || !(wd_alpha >= 0.0)) {
    throw InvalidArgument("train config: rates must be non-negative");
  }
  if (!(momentum_w >= 0.0 && momentum_w < 1.0) || !(beta2_w >= 0.0 && beta2_w < 1.0)) {
    throw InvalidArgument("train config: Adam betas must lie in [0, 1)");
  }
  if (batch_size < 1) { throw InvalidArgument("train config: batch_size must be >= 1"); }
  if (warmup_epochs < 0 || search_epochs < 0 || retrain_epochs < 0) {
    throw InvalidArgument("train config: epoch counts must be >= 0");
  }
}

nlohmann::json to_json(TrainConfig const &cfg)
{
  return {{"lr_w", cfg.lr_w},
          {"momentum_w", cfg.momentum_w},
          {"beta2_w", cfg.beta2_w},
          {"wd_w", cfg.wd_w},
          {"lr_alpha", cfg.lr_alpha},
          {"wd_alpha", cfg.wd_alpha},
          {"batch_size", cfg.batch_size},
          {"warmup_epochs", cfg.warmup_epochs},
          {"search_epochs", cfg.search_epochs},
          {"retrain_epochs", cfg.retrain_epochs},
          {"seed", cfg.seed}};
}

TrainConfig train_config_from_json(nlohmann::json const &j)
{
  TrainConfig cfg;
  for (auto const &[key, value] : j.items()) {
    if (key == "lr_w") {
      cfg.lr_w = value.get<double>();
    } else if (key == "momentum_w") {
      cfg.momentum_w = value.get<double>();
    } else if (key == "beta2_w") {
      cfg.beta2_w = value.get<double>();
    } else if (key == "wd_w") {
      cfg.wd_w = value.get<double>();
    } else if (key == "lr_alpha") {
      cfg.lr_alpha = value.get<double>();
    } else if (key == "wd_alpha") {
      cfg.wd_alpha = value.get<double>();
    } else if (key == "batch_size") {
      cfg.batch_size = value.get<int>();
    } else if (key == "warmup_epochs") {
      cfg.warmup_epochs = value.get<int>();
    } else if (key == "search_epochs") {
      cfg.search_epochs = value.get<int>();
    } else if (key == "retrain_epochs") {
      cfg.retrain_epochs = value.get<int>();
    } else if (key == "seed") {
      cfg.seed = value.get<std::uint64_t>();
    } else {
      throw InvalidArgument("train config: unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

Adam::Adam(double beta1, double beta2, double weight_decay, double eps)
  : beta1_{beta1}
  , beta2_{beta2}
  , wd_{weight_decay}
  , eps_{eps}
{
}

void Adam::step(std::vector<NamedParam> const &params, double lr)
{
  for (auto const &np : params) {
    Param &p = *np.param;
    auto  &s = state_[np.param];
    if (s.m.empty()) {
      s.m.assign(p.size(), 0.0);
      s.v.assign(p.size(), 0.0);
    }
    s.t++;
    double const bc1 = 1.0 - std::pow(beta1_, static_cast<double>(s.t));
    double const bc2 = 1.0 - std::pow(beta2_, static_cast<double>(s.t));
    for (std::size_t i = 0; i < p.size(); i++) {
      double const g = p.grad[i] + wd_ * p.value[i];
      s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * g;
      s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * g * g;
      p.value[i] -= lr * (s.m[i] / bc1) / (std::sqrt(s.v[i] / bc2) + eps_);
    }
  }
}

Tensor training_forward(Model &model, Batch const &b, bool training, int epoch)
{
  try {
    return model.forward(b.x, b.k0, b.masks, training);
  } catch (NumericalError const &e) {
    throw TrainingFailure(e.what(), epoch);
  }
}

void require_finite(std::vector<NamedParam> const &params, int epoch)
{
  for (auto const &p : params) {
    if (!all_finite(p.param->value)) { throw TrainingFailure("non-finite values in " + p.name + " after update", epoch); }
  }
}

double cosine_lr(double base, long step, long total)
{
  if (total <= 1) { return base; }
  double const t = static_cast<double>(std::clamp(step, 0L, total - 1)) / static_cast<double>(total - 1);
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * t));
}

Batch make_batch(std::vector<Sample> const &samples, std::span<std::size_t const> indices)
{
  if (indices.empty()) { throw InvalidArgument("make_batch: empty batch"); }
  auto const &first = samples.at(indices[0]);
  Index const n = static_cast<Index>(indices.size());
  Batch       b{Tensor(n, 2, first.y.h(), first.y.w()), Tensor(n, 2, first.y.h(), first.y.w()), {}, {}};
  for (Index i = 0; i < n; i++) {
    auto const &s = samples.at(indices[i]);
    store_image(s.x, b.x, i);
    store_image(s.y, b.y, i);
    b.k0.push_back(s.k0);
    b.masks.push_back(s.mask);
  }
  return b;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, int batch_size, Rng &rng)
{
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < count; i += static_cast<std::size_t>(batch_size)) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(count, i + static_cast<std::size_t>(batch_size))));
  }
  return batches;
}

std::vector<std::string> FoldSplit::trainval() const
{
  auto all = train;
  all.insert(all.end(), val.begin(), val.end());
  return all;
}

FoldSplit split_folds(std::vector<std::string> const &subject_ids, int fold, std::uint64_t seed)
{
  if (fold < 0 || fold > 2) { throw InvalidArgument("split_folds: fold must be 0, 1 or 2"); }
  if (subject_ids.size() < 3) { throw InvalidArgument("split_folds: need at least 3 subjects"); }
  auto ids = subject_ids;
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) { throw InvalidArgument("split_folds: duplicate subject id"); }
  Rng rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);

  std::size_t const n = ids.size();
  std::size_t       begin = 0;
  for (int f = 0; f < fold; f++) { begin += n / 3 + (static_cast<std::size_t>(f) < n % 3 ? 1 : 0); }
  std::size_t const size = n / 3 + (static_cast<std::size_t>(fold) < n % 3 ? 1 : 0);

  FoldSplit                split{fold, {}, {}, {}};
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < n; i++) { (i >= begin && i < begin + size ? split.test : rest).push_back(ids[i]); }

  // Validation count whose train:val ratio is closest to 9:2; ties favour the larger train set.
  std::size_t best_val = 1;
  double      best_gap = std::numeric_limits<double>::infinity();
  for (std::size_t v = 1; v < rest.size(); v++) {
    double const gap = std::abs(static_cast<double>(rest.size() - v) / static_cast<double>(v) - 4.5);
    if (gap < best_gap) {
      best_gap = gap;
      best_val = v;
    }
  }
  split.train.assign(rest.begin(), rest.end() - static_cast<std::ptrdiff_t>(best_val));
  split.val.assign(rest.end() - static_cast<std::ptrdiff_t>(best_val), rest.end());
  return split;
}

nlohmann::json to_json(FoldSplit const &f)
{
  return {{"fold", f.fold}, {"train", f.train}, {"val", f.val}, {"test", f.test}};
}

WeightTrainer::WeightTrainer(Model &model, TrainConfig const &cfg, long total_steps, std::uint64_t seed)
  : model{model}
  , cfg{cfg}
  , adam(cfg.momentum_w, cfg.beta2_w, cfg.wd_w)
  , total_steps{std::max(total_steps, 1L)}
  , rng(seed)
{
}

double train_weights_epoch(WeightTrainer &trainer, std::vector<Sample> const &train, int epoch)
{
  if (train.empty()) { throw InvalidArgument("train_weights_epoch: empty training set"); }
  double total = 0.0;
  auto   batches = epoch_batches(train.size(), trainer.cfg.batch_size, trainer.rng);
  for (auto const &idx : batches) {
    Batch const b = make_batch(train, idx);
    trainer.model.zero_grad();
    Tensor const pred = training_forward(trainer.model, b, true, epoch);
    double const loss = l2_loss(pred, b.y);
    if (!std::isfinite(loss)) { throw TrainingFailure("non-finite training loss", epoch); }
    trainer.model.backward(l2_loss_grad(pred, b.y));
    auto const params = trainer.model.parameters(true);
    trainer.adam.step(params, trainer.lr());
    require_finite(params, epoch);
    trainer.step++;
    total += loss;
  }
  trainer.model.clear_cache();
  return total / static_cast<double>(batches.size());
}

RetrainResult retrain(Genotype const &g, std::vector<Sample> const &trainval, NetworkConfig const &net, TrainConfig const &cfg)
{
  check_genotype(g, net);
  cfg.validate();
  if (trainval.empty()) { throw InvalidArgument("retrain: empty training set"); }
  RetrainResult res{Model::fixed(net, g, derive_seed(cfg.seed, 3)), {}};
  long const    per_epoch = static_cast<long>((trainval.size() + cfg.batch_size - 1) / cfg.batch_size);
  WeightTrainer trainer(res.model, cfg, per_epoch * cfg.retrain_epochs, derive_seed(cfg.seed, 4));
  for (int e = 0; e < cfg.retrain_epochs; e++) { res.epoch_loss.push_back(train_weights_epoch(trainer, trainval, e)); }
  return res;
}

MetricReport evaluate(Model &model, std::vector<Sample> const &test, int batch_size, std::vector<ComplexImage> *reconstructions)
{
  if (test.empty()) { throw InvalidArgument("evaluate: empty test set"); }
  MetricReport report;
  for (std::size_t i = 0; i < test.size(); i += static_cast<std::size_t>(batch_size)) {
    std::vector<std::size_t> idx;
    for (std::size_t k = i; k < std::min(test.size(), i + static_cast<std::size_t>(batch_size)); k++) { idx.push_back(k); }
    Batch const  b = make_batch(test, idx);
    Tensor const pred = model.forward(b.x, b.k0, b.masks, false);
    for (std::size_t k = 0; k < idx.size(); k++) {
      ComplexImage rec = to_image(pred, static_cast<Index>(k));
      auto const   scores = score_reconstruction(test[idx[k]].y, rec);
      report.psnr.push_back(scores.psnr);
      report.ssim.push_back(scores.ssim);
      if (reconstructions) { reconstructions->push_back(std::move(rec)); }
    }
  }
  model.clear_cache();
  return report;
}

std::array<ReferenceTarget, 2> const &reference_targets()
{
  static std::array<ReferenceTarget, 2> const targets{{
    {"cardiac", {34.8653, 0.9126}, {0.9342, 0.0028}},
    {"brain", {31.7616, 0.0774}, {0.8882, 0.0011}},
  }};
  return targets;
}

} // namespace emr

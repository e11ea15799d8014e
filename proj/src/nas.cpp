#include "emr/nas.hpp"
#include "emr/error.hpp"

#include <algorithm>
#include <cmath>

namespace emr {

OpRow softmax_probs(OpRow const &alpha)
{
  if (!all_finite(alpha)) { throw InvalidArgument("softmax_probs: non-finite logits"); }
  double const top = *std::max_element(alpha.begin(), alpha.end());
  OpRow        p{};
  double       sum = 0.0;
  for (int i = 0; i < kNumOps; i++) {
    p[i] = std::exp(alpha[i] - top);
    sum += p[i];
  }
  for (auto &v : p) { v /= sum; }
  return p;
}

int argmax_op(OpRow const &row) { return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()) + 1; }

OpRow binarize(OpRow const &p)
{
  OpRow g{};
  g[argmax_op(p) - 1] = 1.0;
  return g;
}

std::vector<OpRow> warmup_gates(int cells, Rng &rng)
{
  if (cells < 1) { throw InvalidArgument("warmup_gates: need at least one cell"); }
  std::uniform_int_distribution<int> pick(0, kNumOps - 1);
  std::vector<OpRow>                 gates(static_cast<std::size_t>(cells), OpRow{});
  for (auto &g : gates) { g[pick(rng)] = 1.0; }
  return gates;
}

std::vector<int> gate_ops(std::vector<OpRow> const &gates)
{
  std::vector<int> ops;
  for (auto const &g : gates) {
    int ones = 0;
    for (double v : g) {
      if (v == 1.0) {
        ones++;
      } else if (v != 0.0) {
        ones = -1;
        break;
      }
    }
    if (ones != 1) { throw InvalidArgument("gate row is not one-hot"); }
    ops.push_back(argmax_op(g));
  }
  return ops;
}

OpRow alpha_gradient(OpRow const &dL_dg, OpRow const &p)
{
  OpRow grad{};
  for (int i = 0; i < kNumOps; i++) {
    double s = 0.0;
    for (int j = 0; j < kNumOps; j++) { s += dL_dg[j] * p[j] * ((i == j ? 1.0 : 0.0) - p[i]); }
    grad[i] = s;
  }
  return grad;
}

ArchParams::ArchParams(int cells)
  : alpha(static_cast<std::size_t>(cells * kNumOps))
{
  if (cells < 1) { throw InvalidArgument("ArchParams: need at least one cell"); }
}

OpRow ArchParams::row(int l) const
{
  OpRow r{};
  std::copy_n(alpha.value.begin() + l * kNumOps, kNumOps, r.begin());
  return r;
}

void ArchParams::set_row(int l, OpRow const &r) { std::copy(r.begin(), r.end(), alpha.value.begin() + l * kNumOps); }

std::vector<OpRow> ArchParams::probs() const
{
  std::vector<OpRow> out;
  for (int l = 0; l < cells(); l++) { out.push_back(softmax_probs(row(l))); }
  return out;
}

std::vector<OpRow> ArchParams::gates() const
{
  std::vector<OpRow> out;
  for (auto const &p : probs()) { out.push_back(binarize(p)); }
  return out;
}

std::vector<int> ArchParams::active_ops() const { return gate_ops(gates()); }

Genotype discretize(ArchParams const &arch, int components, int cells_per_block)
{
  Genotype g{components, cells_per_block, {}};
  for (int l = 0; l < arch.cells(); l++) { g.ops.push_back(argmax_op(arch.row(l))); }
  g.validate();
  return g;
}

Genotype ensemble(std::vector<std::vector<OpRow>> const &prob_sets, int components, int cells_per_block)
{
  if (prob_sets.size() != 3) { throw InvalidArgument("ensemble: expected 3 fold probability sets, got " + std::to_string(prob_sets.size())); }
  std::size_t const cells = prob_sets.front().size();
  std::vector<OpRow> sum(cells, OpRow{});
  for (auto const &set : prob_sets) {
    if (set.size() != cells) { throw InvalidArgument("ensemble: probability sets disagree on the number of cells"); }
    for (std::size_t l = 0; l < cells; l++) {
      for (int i = 0; i < kNumOps; i++) { sum[l][i] += set[l][i]; }
    }
  }
  Genotype g{components, cells_per_block, {}};
  for (auto const &row : sum) { g.ops.push_back(argmax_op(row)); }
  g.validate();
  return g;
}

nlohmann::json to_json(std::vector<OpRow> const &rows)
{
  nlohmann::json j = nlohmann::json::array();
  for (auto const &r : rows) { j.push_back(r); }
  return j;
}

std::vector<OpRow> rows_from_json(nlohmann::json const &j)
{
  std::vector<OpRow> rows;
  try {
    for (auto const &r : j) { rows.push_back(r.get<OpRow>()); }
  } catch (nlohmann::json::exception const &e) {
    throw InvalidArgument(std::string("probability rows: ") + e.what());
  }
  return rows;
}

nlohmann::json to_json(EpochLog const &e)
{
  return {{"epoch", e.epoch},
          {"phase", e.warmup ? "warmup" : "search"},
          {"train_loss", e.train_loss},
          {"val_loss", e.val_loss},
          {"probs", to_json(e.probs)}};
}

namespace {

double forward_loss(Model &model, Batch const &b, int epoch, char const *what)
{
  Tensor const pred = training_forward(model, b, true, epoch);
  double const loss = l2_loss(pred, b.y);
  if (!std::isfinite(loss)) { throw TrainingFailure(std::string("non-finite ") + what + " loss", epoch); }
  model.backward(l2_loss_grad(pred, b.y));
  return loss;
}

double mean_loss(Model &model, std::vector<Sample> const &set, int batch_size, int epoch)
{
  double      total = 0.0;
  std::size_t batches = 0;
  for (std::size_t i = 0; i < set.size(); i += static_cast<std::size_t>(batch_size)) {
    std::vector<std::size_t> idx;
    for (std::size_t k = i; k < std::min(set.size(), i + static_cast<std::size_t>(batch_size)); k++) { idx.push_back(k); }
    Batch const b = make_batch(set, idx);
    total += l2_loss(training_forward(model, b, false, epoch), b.y);
    batches++;
  }
  model.clear_cache();
  return total / static_cast<double>(batches);
}

} // namespace

SearchResult search(std::vector<Sample> const &train, std::vector<Sample> const &val, NetworkConfig const &net,
                    TrainConfig const &cfg, SearchObserver const *observer)
{
  if (train.empty() || val.empty()) { throw InvalidArgument("search: empty train or validation split"); }
  cfg.validate();
  int const    T = net.cells();
  SearchResult res{Model::supernet(net, derive_seed(cfg.seed, 1)), ArchParams(T), {}, {}, 0};
  Model       &model = res.model;
  ArchParams  &arch = res.arch;

  long const    per_epoch = static_cast<long>((train.size() + cfg.batch_size - 1) / cfg.batch_size);
  int const     epochs = cfg.warmup_epochs + cfg.search_epochs;
  Adam          adam_w(cfg.momentum_w, cfg.beta2_w, cfg.wd_w);
  Adam          adam_alpha(cfg.momentum_w, cfg.beta2_w, cfg.wd_alpha);
  long          step = 0;
  Rng           rng(derive_seed(cfg.seed, 2));
  std::vector<NamedParam> const alpha_param{{"alpha", &arch.alpha}};

  auto notify = [&](auto const &hook, StepKind kind) {
    if (observer && hook) { hook(kind, model, arch); }
  };

  for (int epoch = 0; epoch < epochs; epoch++) {
    bool const warmup = epoch < cfg.warmup_epochs;
    EpochLog   log{epoch, warmup, 0.0, 0.0, {}};
    auto const batches = epoch_batches(train.size(), cfg.batch_size, rng);
    std::size_t val_cursor = 0;
    for (auto const &idx : batches) {
      Batch const b = make_batch(train, idx);
      double const lr = cosine_lr(cfg.lr_w, step++, per_epoch * epochs);

      // weight step on the training batch
      model.set_active(warmup ? gate_ops(warmup_gates(T, rng)) : arch.active_ops());
      notify(observer ? observer->before : nullptr, StepKind::Weights);
      model.zero_grad();
      log.train_loss += forward_loss(model, b, epoch, "training");
      res.peak_cached_values = std::max(res.peak_cached_values, model.cached_values());
      auto const path_params = model.parameters(true);
      adam_w.step(path_params, lr);
      require_finite(path_params, epoch);
      notify(observer ? observer->after : nullptr, StepKind::Weights);
      if (warmup) { continue; }

      // architecture step on the next validation batch
      std::vector<std::size_t> vidx;
      for (int k = 0; k < cfg.batch_size; k++) { vidx.push_back((val_cursor++) % val.size()); }
      vidx.resize(std::min<std::size_t>(vidx.size(), val.size()));
      Batch const vb = make_batch(val, vidx);
      model.set_active(arch.active_ops());
      notify(observer ? observer->before : nullptr, StepKind::Arch);
      model.zero_grad();
      arch.alpha.zero_grad();
      double const vloss = forward_loss(model, vb, epoch, "validation");
      res.val_trace.push_back(vloss);
      log.val_loss += vloss;
      auto const probs = arch.probs();
      auto const gg = model.gate_gradients();
      auto const active = arch.active_ops();
      for (int l = 0; l < T; l++) {
        OpRow dg{};
        dg[active[l] - 1] = gg[l];
        auto const grad = alpha_gradient(dg, probs[l]);
        std::copy(grad.begin(), grad.end(), arch.alpha.grad.begin() + l * kNumOps);
      }
      adam_alpha.step(alpha_param, cfg.lr_alpha);
      require_finite(alpha_param, epoch);
      model.zero_grad();
      notify(observer ? observer->after : nullptr, StepKind::Arch);
    }
    model.clear_cache();
    log.train_loss /= static_cast<double>(batches.size());
    if (warmup) {
      model.set_active(arch.active_ops());
      log.val_loss = mean_loss(model, val, cfg.batch_size, epoch);
    } else {
      log.val_loss /= static_cast<double>(batches.size());
    }
    if (!std::isfinite(log.val_loss)) { throw TrainingFailure("non-finite validation loss", epoch); }
    log.probs = arch.probs();
    if (observer && observer->epoch_end) { observer->epoch_end(log); }
    res.log.push_back(std::move(log));
  }
  model.set_active(arch.active_ops());
  return res;
}

} // namespace emr

#pragma once

#include "emr/training.hpp"

#include <array>
#include <functional>

namespace emr {

using OpRow = std::array<double, kNumOps>;

OpRow softmax_probs(OpRow const &alpha);
/// One-hot at the argmax; ties go to the lowest index.
OpRow binarize(OpRow const &p);
/// 1-based operation index of the row's maximum, lowest index on ties.
int   argmax_op(OpRow const &row);
/// Independent uniform one-hot gate per cell.
std::vector<OpRow> warmup_gates(int cells, Rng &rng);
std::vector<int>   gate_ops(std::vector<OpRow> const &gates);

/*
 * Straight-through gradient of the architecture logits from the gate
 * gradient: dL/dalpha_i = sum_j dL/dg_j * p_j * (delta_ij - p_i). Only the
 * active gate carries a nonzero dL/dg.
 */
OpRow alpha_gradient(OpRow const &dL_dg, OpRow const &p);

/// Architecture logits, one row of eight per cell.
class ArchParams
{
public:
  ArchParams() = default;
  explicit ArchParams(int cells);

  int                cells() const { return static_cast<int>(alpha.size() / kNumOps); }
  OpRow              row(int l) const;
  void               set_row(int l, OpRow const &r);
  std::vector<OpRow> probs() const;
  std::vector<OpRow> gates() const;
  std::vector<int>   active_ops() const;

  Param alpha; // row-major cells x 8; gradients flow through Param::grad
};

Genotype discretize(ArchParams const &arch, int components, int cells_per_block);
/// Sums the per-fold probabilities and takes the per-cell argmax.
Genotype ensemble(std::vector<std::vector<OpRow>> const &prob_sets, int components, int cells_per_block);

nlohmann::json to_json(std::vector<OpRow> const &rows);
std::vector<OpRow> rows_from_json(nlohmann::json const &j);

struct EpochLog
{
  int                epoch = 0;
  bool               warmup = false;
  double             train_loss = 0.0;
  double             val_loss = 0.0;
  std::vector<OpRow> probs;
};
nlohmann::json to_json(EpochLog const &e);

enum class StepKind
{
  Weights,
  Arch
};

/// Hooks fired around every optimizer step of the search loop.
struct SearchObserver
{
  std::function<void(StepKind, Model &, ArchParams const &)> before;
  std::function<void(StepKind, Model &, ArchParams const &)> after;
  std::function<void(EpochLog const &)>                      epoch_end;
};

struct SearchResult
{
  Model               model;
  ArchParams          arch;
  std::vector<EpochLog> log;
  std::vector<double> val_trace; // validation loss at each alternation
  Index               peak_cached_values = 0;
};

/// Warmup on sampled paths, then alternate weight steps on train and logit steps on val.
SearchResult search(std::vector<Sample> const &train, std::vector<Sample> const &val, NetworkConfig const &net,
                    TrainConfig const &cfg, SearchObserver const *observer = nullptr);

} // namespace emr

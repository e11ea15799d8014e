#pragma once

#include "emr/kspace.hpp"
#include "emr/searchspace.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace emr {

struct NetworkConfig
{
  int                components = 5; // N
  int                cells_per_block = 3;
  Index              channels = 19; // c
  bool               use_bn = false;
  bool               use_rir = true;
  double             beta = 0.2;
  double             leaky_slope = 0.2;
  std::optional<int> homogeneous_op;

  int  cells() const { return components * cells_per_block; } // T
  void validate() const;
};

nlohmann::json to_json(NetworkConfig const &cfg);
NetworkConfig  network_config_from_json(nlohmann::json const &j);

/// Discrete operation assignment for all T cells, grouped by basic block.
struct Genotype
{
  int              components = 0;
  int              cells_per_block = 3;
  std::vector<int> ops;

  int         cells() const { return static_cast<int>(ops.size()); }
  void        validate() const;
  std::string pretty() const; // "O5 O8 O8|O8 O8 O8|..."
  bool        operator==(Genotype const &) const = default;
};

/// Parses the pretty form; block size is taken from the '|' grouping.
Genotype       parse_genotype(std::string const &text);
Genotype       homogeneous_genotype(NetworkConfig const &cfg, int op);
/// Checks the genotype matches the config's N and cells-per-block.
void           check_genotype(Genotype const &g, NetworkConfig const &cfg);
nlohmann::json to_json(Genotype const &g);
Genotype       genotype_from_json(nlohmann::json const &j);

/// Reference genotypes reported for the two evaluation datasets.
Genotype cardiac_genotype();
Genotype brain_genotype();

/// Trainable scalars of a fixed-genotype network: kernels, biases and BN affine terms.
Index param_count(NetworkConfig const &cfg, Genotype const &g);
/// Width whose param_count is closest to `target`.
Index calibrate_channels(NetworkConfig cfg, Genotype const &g, Index target);

/// l2 loss: per-sample sum of squares over both channels, averaged over the batch.
double l2_loss(Tensor const &pred, Tensor const &target);
Tensor l2_loss_grad(Tensor const &pred, Tensor const &target);

/// Nested residual over a chain of cells: x + beta * (chain(x) - x), or the bare chain without RIR.
Tensor rir_block_forward(Tensor const &x, std::span<Cell> cells, NetworkConfig const &cfg);

/*
 * The N-component cascade Conv -> RIR block -> Conv -> (+input) -> TDC.
 *
 * In fixed mode each cell position owns a single operation. In search mode
 * every position owns all eight candidates and only the gate-activated one
 * runs; inactive candidates hold no activations.
 */
class Model
{
public:
  enum class Mode
  {
    Fixed,
    Search
  };

  static Model fixed(NetworkConfig const &cfg, Genotype const &g, std::uint64_t seed);
  static Model supernet(NetworkConfig const &cfg, std::uint64_t seed);

  Mode                 mode() const { return mode_; }
  NetworkConfig const &config() const { return cfg_; }
  Genotype             genotype() const; // active op per cell

  /// Search mode only: select one op (1..8) per cell.
  void set_active(std::vector<int> const &ops);

  Tensor forward(Tensor const &x, std::span<KSpaceGrid const> k0, std::span<SamplingMask const> masks, bool training = true);
  /// Backpropagates dL/d(output); accumulates parameter gradients and gate gradients.
  Tensor backward(Tensor const &dy);

  /// dL/dg at the active gate of each cell from the last backward pass.
  std::vector<double> const &gate_gradients() const { return gate_grad_; }

  std::vector<NamedParam> parameters(bool active_only = false);
  /// Non-trainable state (BN running statistics) keyed like parameters.
  std::vector<std::pair<std::string, std::vector<double> *>> buffers();
  void                                                      zero_grad();
  void                                                      clear_cache();
  Index                                                     cached_values() const;
  Index                                                     num_parameters() const;

private:
  struct Slot
  {
    std::vector<int>  ops;
    std::vector<Cell> candidates;
    std::size_t       active = 0;
    Tensor            out;
  };
  struct Component
  {
    Conv2d                    head, tail;
    std::vector<Slot>         slots;
    std::vector<ComplexImage> tdc_mid;
    std::vector<SamplingMask> masks;
  };

  Model(NetworkConfig cfg, Mode mode);
  Tensor forward_component(Component &comp, Tensor const &x, std::span<KSpaceGrid const> k0,
                           std::span<SamplingMask const> masks, bool training);
  Tensor backward_component(Component &comp, Tensor const &dy, std::size_t first_cell);

  NetworkConfig          cfg_;
  Mode                   mode_;
  std::vector<Component> comps_;
  std::vector<double>    gate_grad_;
};

} // namespace emr

#pragma once

#include "emr/layers.hpp"

#include <array>
#include <span>
#include <string>
#include <vector>

namespace emr {

constexpr int kNumOps = 8;

/// One candidate cell operation: four 3x3 convs with per-layer dilation and
/// optional skips. Skip j feeds the cell input into conv j+1 by concatenation.
struct OperationSpec
{
  int                index = 1; // 1..8
  std::array<int, 4> dilations{};
  std::array<bool, 3> skips{}; // skips[j-1] <=> connection j present

  bool has_skip(int j) const { return skips[j - 1]; }
  int  skip_count() const { return int(skips[0]) + int(skips[1]) + int(skips[2]); }
  bool operator==(OperationSpec const &) const = default;
};

/// The fixed eight-entry table, in order O1..O8.
std::array<OperationSpec, kNumOps> const &op_table();
OperationSpec const                      &op_spec(int index);

std::string op_name(int index);
/// Accepts "O5", "o5" or "5".
int         parse_op(std::string const &token);

int receptive_field(std::span<int const> dilations);
int receptive_field(OperationSpec const &spec);

/// Input width of conv k (1-based) for a cell of this spec.
Index conv_input_width(OperationSpec const &spec, int k, Index c);

struct CellWeights
{
  std::array<ConvWeights, 4> conv;

  CellWeights() = default;
  CellWeights(OperationSpec const &spec, Index c);
};

struct CellOptions
{
  double beta = 0.2;
  double slope = 0.2;
  bool   residual = true;
  bool   batch_norm = false;
};

/// A trainable cell with cached activations for backpropagation.
class Cell
{
public:
  Cell() = default;
  Cell(OperationSpec spec, CellWeights weights, CellOptions opts);
  Cell(OperationSpec spec, Index c, CellOptions opts, Rng &rng);

  Tensor forward(Tensor const &x, bool training = true);
  Tensor backward(Tensor const &dy);

  void  clear_cache();
  Index cached_values() const;
  void  collect(std::vector<NamedParam> &out, std::string const &prefix);

  OperationSpec const &spec() const { return spec_; }
  Index                channels() const { return c_; }
  Conv2d              &conv(int k) { return conv_[k - 1]; }
  std::array<BatchNorm2d, 3> &batch_norms() { return bn_; }
  Index                       num_parameters() const;

private:
  OperationSpec              spec_;
  CellOptions                opts_;
  Index                      c_ = 0;
  std::array<Conv2d, 4>      conv_;
  std::array<BatchNorm2d, 3> bn_;
  std::array<Tensor, 3>      pre_; // pre-activations of convs 1..3
};

/// Pure forward pass of one cell; output = x + beta * conv4(...).
Tensor cell_forward(Tensor const &x, OperationSpec const &spec, CellWeights const &wts, double beta, double slope = 0.2);

} // namespace emr

#pragma once

#include "emr/tensor.hpp"

#include <random>
#include <string>
#include <vector>

namespace emr {

using Rng = std::mt19937_64;

/// A trainable array and its accumulated gradient.
struct Param
{
  std::vector<double> value;
  std::vector<double> grad;

  explicit Param(std::size_t n = 0)
    : value(n, 0.0)
    , grad(n, 0.0)
  {
  }
  std::size_t size() const { return value.size(); }
  void        zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

struct NamedParam
{
  std::string name;
  Param      *param;
};

/// Kernel (out, in, 3, 3) and bias (out) of one 3x3 convolution.
struct ConvWeights
{
  Index in = 0;
  Index out = 0;
  Param kernel;
  Param bias;

  ConvWeights() = default;
  ConvWeights(Index in, Index out);

  /// He-normal kernel scaled by `scale`, zero bias.
  void init(Rng &rng, double scale);
  void zero();
};

// Stateless dilated 3x3 convolution with zero padding equal to the dilation.
Tensor conv3x3_forward(Tensor const &x, ConvWeights const &w, Index dilation);
// Returns dL/dx and accumulates dL/dkernel, dL/dbias into w's grads.
Tensor conv3x3_backward(Tensor const &x, ConvWeights &w, Index dilation, Tensor const &dy);

class Conv2d
{
public:
  Conv2d() = default;
  Conv2d(ConvWeights w, Index dilation);

  Tensor forward(Tensor const &x);
  Tensor backward(Tensor const &dy);
  void   clear_cache() { x_ = Tensor(); }
  Index  cached_values() const { return x_.size(); }

  ConvWeights       &weights() { return w_; }
  ConvWeights const &weights() const { return w_; }
  Index              dilation() const { return dilation_; }

private:
  ConvWeights w_;
  Index       dilation_ = 1;
  Tensor      x_;
};

/// Per-channel batch normalization; batch statistics in training, running statistics otherwise.
class BatchNorm2d
{
public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(Index channels);

  Tensor forward(Tensor const &x, bool training);
  Tensor backward(Tensor const &dy);
  void   clear_cache();
  Index  cached_values() const { return xhat_.size(); }

  Param               gamma, beta;
  std::vector<double> running_mean, running_var;

private:
  Tensor              xhat_;
  std::vector<double> inv_std_;
  bool                batch_stats_ = false;
};

Tensor leaky_relu(Tensor x, double slope);
Tensor leaky_relu_backward(Tensor const &pre, Tensor dy, double slope);

} // namespace emr

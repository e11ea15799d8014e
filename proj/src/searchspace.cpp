#include "emr/searchspace.hpp"
#include "emr/error.hpp"

#include <cctype>
#include <numeric>

namespace emr {

std::array<OperationSpec, kNumOps> const &op_table()
{
  constexpr std::array<int, 4> dilated{1, 2, 4, 1};
  constexpr std::array<int, 4> plain{1, 1, 1, 1};
  static std::array<OperationSpec, kNumOps> const table{{
    {1, dilated, {true, true, true}},
    {2, dilated, {false, true, true}},
    {3, dilated, {true, false, true}},
    {4, dilated, {true, true, false}},
    {5, dilated, {true, false, false}},
    {6, dilated, {false, true, false}},
    {7, dilated, {false, false, true}},
    {8, plain, {true, true, true}},
  }};
  return table;
}

OperationSpec const &op_spec(int index)
{
  if (index < 1 || index > kNumOps) { throw InvalidArgument("operation index must be in 1..8, got " + std::to_string(index)); }
  return op_table()[index - 1];
}

std::string op_name(int index) { return "O" + std::to_string(op_spec(index).index); }

int parse_op(std::string const &token)
{
  std::string digits = token;
  if (!digits.empty() && (digits[0] == 'O' || digits[0] == 'o')) { digits.erase(0, 1); }
  if (digits.size() != 1 || !std::isdigit(static_cast<unsigned char>(digits[0]))) {
    throw InvalidArgument("unrecognized operation '" + token + "'");
  }
  return op_spec(digits[0] - '0').index;
}

int receptive_field(std::span<int const> dilations) { return 1 + 2 * std::accumulate(dilations.begin(), dilations.end(), 0); }

int receptive_field(OperationSpec const &spec) { return receptive_field(std::span<int const>(spec.dilations)); }

Index conv_input_width(OperationSpec const &spec, int k, Index c)
{
  if (k == 1) { return c; }
  return spec.has_skip(k - 1) ? 2 * c : c;
}

CellWeights::CellWeights(OperationSpec const &spec, Index c)
{
  for (int k = 1; k <= 4; k++) { conv[k - 1] = ConvWeights(conv_input_width(spec, k, c), c); }
}

Cell::Cell(OperationSpec spec, CellWeights weights, CellOptions opts)
  : spec_{spec}
  , opts_{opts}
  , c_{weights.conv[0].in}
{
  for (int k = 1; k <= 4; k++) {
    auto &w = weights.conv[k - 1];
    if (w.in != conv_input_width(spec, k, c_) || w.out != c_) {
      throw InvalidArgument("Cell: conv" + std::to_string(k) + " weights inconsistent with " + op_name(spec.index));
    }
    conv_[k - 1] = Conv2d(std::move(w), spec.dilations[k - 1]);
  }
  if (opts_.batch_norm) {
    for (auto &b : bn_) { b = BatchNorm2d(c_); }
  }
}

Cell::Cell(OperationSpec spec, Index c, CellOptions opts, Rng &rng)
  : Cell(spec,
         [&] {
           CellWeights w(spec, c);
           for (auto &cw : w.conv) { cw.init(rng, 0.1); }
           return w;
         }(),
         opts)
{
}

Tensor Cell::forward(Tensor const &x, bool training)
{
  if (x.c() != c_) { throw InvalidArgument("Cell::forward: input width " + std::to_string(x.c()) + " != " + std::to_string(c_)); }
  Tensor h = x;
  for (int k = 1; k <= 3; k++) {
    Tensor in = (k > 1 && spec_.has_skip(k - 1)) ? concat_channels(h, x) : h;
    Tensor a = conv_[k - 1].forward(in);
    if (opts_.batch_norm) { a = bn_[k - 1].forward(a, training); }
    pre_[k - 1] = a;
    h = leaky_relu(std::move(a), opts_.slope);
  }
  Tensor in4 = spec_.has_skip(3) ? concat_channels(h, x) : h;
  Tensor out = conv_[3].forward(in4);
  if (!opts_.residual) { return out; }
  out *= opts_.beta;
  out += x;
  return out;
}

Tensor Cell::backward(Tensor const &dy)
{
  Tensor dx(dy.n(), c_, dy.h(), dy.w());
  Tensor g = dy;
  if (opts_.residual) {
    dx += dy;
    g *= opts_.beta;
  }
  for (int k = 4; k >= 1; k--) {
    Tensor din = conv_[k - 1].backward(g);
    if (k > 1 && spec_.has_skip(k - 1)) {
      auto [dh, dskip] = split_channels(din, c_);
      dx += dskip;
      din = std::move(dh);
    }
    if (k == 1) {
      dx += din;
      break;
    }
    // din is the gradient w.r.t. the activation of conv k-1
    g = leaky_relu_backward(pre_[k - 2], std::move(din), opts_.slope);
    if (opts_.batch_norm) { g = bn_[k - 2].backward(g); }
  }
  return dx;
}

void Cell::clear_cache()
{
  for (auto &c : conv_) { c.clear_cache(); }
  for (auto &b : bn_) { b.clear_cache(); }
  for (auto &p : pre_) { p = Tensor(); }
}

Index Cell::cached_values() const
{
  Index n = 0;
  for (auto const &c : conv_) { n += c.cached_values(); }
  for (auto const &b : bn_) { n += b.cached_values(); }
  for (auto const &p : pre_) { n += p.size(); }
  return n;
}

Index Cell::num_parameters() const
{
  Index n = 0;
  for (auto const &c : conv_) { n += static_cast<Index>(c.weights().kernel.size() + c.weights().bias.size()); }
  if (opts_.batch_norm) { n += 3 * 2 * c_; }
  return n;
}

void Cell::collect(std::vector<NamedParam> &out, std::string const &prefix)
{
  for (int k = 1; k <= 4; k++) {
    auto &w = conv_[k - 1].weights();
    out.push_back({prefix + ".conv" + std::to_string(k) + ".weight", &w.kernel});
    out.push_back({prefix + ".conv" + std::to_string(k) + ".bias", &w.bias});
  }
  if (opts_.batch_norm) {
    for (int k = 1; k <= 3; k++) {
      out.push_back({prefix + ".bn" + std::to_string(k) + ".gamma", &bn_[k - 1].gamma});
      out.push_back({prefix + ".bn" + std::to_string(k) + ".beta", &bn_[k - 1].beta});
    }
  }
}

Tensor cell_forward(Tensor const &x, OperationSpec const &spec, CellWeights const &wts, double beta, double slope)
{
  Cell cell(spec, wts, CellOptions{.beta = beta, .slope = slope});
  return cell.forward(x);
}

} // namespace emr

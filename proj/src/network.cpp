#include "emr/network.hpp"
#include "emr/error.hpp"

#include <cmath>
#include <sstream>

namespace emr {

void NetworkConfig::validate() const
{
  if (components < 1) { throw InvalidArgument("network: N must be >= 1"); }
  if (cells_per_block != 3 && cells_per_block != 4) { throw InvalidArgument("network: cells_per_block must be 3 or 4"); }
  if (channels < 1) { throw InvalidArgument("network: channel width must be >= 1"); }
  if (!std::isfinite(beta) || !std::isfinite(leaky_slope)) { throw InvalidArgument("network: non-finite beta/slope"); }
  if (homogeneous_op) { op_spec(*homogeneous_op); }
}

nlohmann::json to_json(NetworkConfig const &cfg)
{
  nlohmann::json j{{"N", cfg.components},         {"cells_per_block", cfg.cells_per_block},
                   {"c", cfg.channels},           {"use_bn", cfg.use_bn},
                   {"use_rir", cfg.use_rir},      {"beta", cfg.beta},
                   {"leaky_slope", cfg.leaky_slope}, {"homogeneous_op", nullptr}};
  if (cfg.homogeneous_op) { j["homogeneous_op"] = op_name(*cfg.homogeneous_op); }
  return j;
}

NetworkConfig network_config_from_json(nlohmann::json const &j)
{
  NetworkConfig cfg;
  for (auto const &[key, value] : j.items()) {
    if (key == "N") {
      cfg.components = value.get<int>();
    } else if (key == "cells_per_block") {
      cfg.cells_per_block = value.get<int>();
    } else if (key == "c") {
      cfg.channels = value.get<Index>();
    } else if (key == "use_bn") {
      cfg.use_bn = value.get<bool>();
    } else if (key == "use_rir") {
      cfg.use_rir = value.get<bool>();
    } else if (key == "beta") {
      cfg.beta = value.get<double>();
    } else if (key == "leaky_slope") {
      cfg.leaky_slope = value.get<double>();
    } else if (key == "homogeneous_op") {
      if (value.is_null()) {
        cfg.homogeneous_op.reset();
      } else {
        cfg.homogeneous_op = value.is_string() ? parse_op(value.get<std::string>()) : op_spec(value.get<int>()).index;
      }
    } else {
      throw InvalidArgument("network config: unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

void Genotype::validate() const
{
  if (cells_per_block != 3 && cells_per_block != 4) { throw InvalidArgument("genotype: cells_per_block must be 3 or 4"); }
  if (components < 1 || cells() != components * cells_per_block) {
    throw InvalidArgument("genotype: expected " + std::to_string(components * cells_per_block) + " ops, got " +
                          std::to_string(cells()));
  }
  for (int op : ops) { op_spec(op); }
}

std::string Genotype::pretty() const
{
  std::string s;
  for (std::size_t i = 0; i < ops.size(); i++) {
    if (i > 0) { s += (i % static_cast<std::size_t>(cells_per_block) == 0) ? "|" : " "; }
    s += op_name(ops[i]);
  }
  return s;
}

Genotype parse_genotype(std::string const &text)
{
  Genotype          g;
  std::stringstream blocks(text);
  std::string       block;
  int               width = -1;
  while (std::getline(blocks, block, '|')) {
    std::stringstream cells(block);
    std::string       token;
    int               n = 0;
    while (cells >> token) {
      g.ops.push_back(parse_op(token));
      n++;
    }
    if (width >= 0 && n != width) { throw InvalidArgument("genotype: blocks of unequal size in '" + text + "'"); }
    width = n;
    g.components++;
  }
  if (width < 1) { throw InvalidArgument("genotype: empty '" + text + "'"); }
  g.cells_per_block = width;
  g.validate();
  return g;
}

Genotype homogeneous_genotype(NetworkConfig const &cfg, int op)
{
  return Genotype{cfg.components, cfg.cells_per_block, std::vector<int>(cfg.cells(), op_spec(op).index)};
}

void check_genotype(Genotype const &g, NetworkConfig const &cfg)
{
  g.validate();
  if (g.components != cfg.components || g.cells_per_block != cfg.cells_per_block) {
    throw InvalidArgument("genotype " + g.pretty() + " does not match N=" + std::to_string(cfg.components) +
                          ", cells_per_block=" + std::to_string(cfg.cells_per_block));
  }
}

nlohmann::json to_json(Genotype const &g)
{
  std::vector<std::string> names;
  for (int op : g.ops) { names.push_back(op_name(op)); }
  return {{"cells_per_block", g.cells_per_block}, {"N", g.components}, {"ops", names}, {"pretty", g.pretty()}};
}

Genotype genotype_from_json(nlohmann::json const &j)
{
  Genotype g;
  try {
    g.cells_per_block = j.at("cells_per_block").get<int>();
    g.components = j.at("N").get<int>();
    for (auto const &op : j.at("ops")) { g.ops.push_back(op.is_string() ? parse_op(op.get<std::string>()) : op.get<int>()); }
  } catch (nlohmann::json::exception const &e) {
    throw InvalidArgument(std::string("genotype json: ") + e.what());
  }
  g.validate();
  if (j.contains("pretty") && j["pretty"].get<std::string>() != g.pretty()) {
    throw InvalidArgument("genotype json: 'pretty' disagrees with 'ops'");
  }
  return g;
}

Genotype cardiac_genotype() { return parse_genotype("O5 O8 O8|O8 O8 O8|O4 O1 O2|O8 O8 O8|O6 O8 O8"); }
Genotype brain_genotype() { return parse_genotype("O6 O6 O2|O4 O1 O2|O3 O8 O1|O3 O6 O3|O3 O1 O3"); }

Index param_count(NetworkConfig const &cfg, Genotype const &g)
{
  check_genotype(g, cfg);
  Index const c = cfg.channels;
  Index       total = 0;
  for (int comp = 0; comp < cfg.components; comp++) {
    total += 9 * 2 * c + c; // 2 -> c
    total += 9 * c * 2 + 2; // c -> 2
  }
  for (int op : g.ops) {
    auto const &spec = op_spec(op);
    for (int k = 1; k <= 4; k++) { total += 9 * conv_input_width(spec, k, c) * c + c; }
    if (cfg.use_bn) { total += 3 * 2 * c; }
  }
  return total;
}

Index calibrate_channels(NetworkConfig cfg, Genotype const &g, Index target)
{
  Index best = 1, best_gap = -1;
  for (Index c = 1; c <= 512; c++) {
    cfg.channels = c;
    Index const gap = std::abs(param_count(cfg, g) - target);
    if (best_gap < 0 || gap < best_gap) {
      best = c;
      best_gap = gap;
    }
  }
  return best;
}

double l2_loss(Tensor const &pred, Tensor const &target)
{
  if (!pred.same_shape(target)) { throw InvalidArgument("l2_loss: shape mismatch"); }
  double     s = 0.0;
  auto const p = pred.values(), t = target.values();
  for (std::size_t i = 0; i < p.size(); i++) { s += (p[i] - t[i]) * (p[i] - t[i]); }
  return pred.n() > 0 ? s / static_cast<double>(pred.n()) : 0.0;
}

Tensor l2_loss_grad(Tensor const &pred, Tensor const &target)
{
  Tensor g = pred - target;
  g *= 2.0 / static_cast<double>(pred.n());
  return g;
}

Tensor rir_block_forward(Tensor const &x, std::span<Cell> cells, NetworkConfig const &cfg)
{
  if (static_cast<int>(cells.size()) != cfg.cells_per_block) {
    throw InvalidArgument("rir_block_forward: expected " + std::to_string(cfg.cells_per_block) + " cells");
  }
  Tensor z = x;
  for (auto &cell : cells) { z = cell.forward(z); }
  if (!cfg.use_rir) { return z; }
  return x + cfg.beta * (z - x);
}

Model::Model(NetworkConfig cfg, Mode mode)
  : cfg_{std::move(cfg)}
  , mode_{mode}
{
  cfg_.validate();
}

Model Model::fixed(NetworkConfig const &cfg, Genotype const &g, std::uint64_t seed)
{
  check_genotype(g, cfg);
  Model       m(cfg, Mode::Fixed);
  Rng         rng(seed);
  CellOptions opts{.beta = cfg.beta, .slope = cfg.leaky_slope, .residual = cfg.use_rir, .batch_norm = cfg.use_bn};
  for (int n = 0; n < cfg.components; n++) {
    Component   comp;
    ConvWeights head(2, cfg.channels), tail(cfg.channels, 2);
    head.init(rng, 1.0);
    tail.init(rng, 0.1);
    comp.head = Conv2d(std::move(head), 1);
    comp.tail = Conv2d(std::move(tail), 1);
    for (int l = 0; l < cfg.cells_per_block; l++) {
      int const op = g.ops[n * cfg.cells_per_block + l];
      Slot      slot;
      slot.ops = {op};
      slot.candidates.emplace_back(op_spec(op), cfg.channels, opts, rng);
      comp.slots.push_back(std::move(slot));
    }
    m.comps_.push_back(std::move(comp));
  }
  m.gate_grad_.assign(cfg.cells(), 0.0);
  return m;
}

Model Model::supernet(NetworkConfig const &cfg, std::uint64_t seed)
{
  Model       m(cfg, Mode::Search);
  Rng         rng(seed);
  CellOptions opts{.beta = cfg.beta, .slope = cfg.leaky_slope, .residual = cfg.use_rir, .batch_norm = cfg.use_bn};
  for (int n = 0; n < cfg.components; n++) {
    Component   comp;
    ConvWeights head(2, cfg.channels), tail(cfg.channels, 2);
    head.init(rng, 1.0);
    tail.init(rng, 0.1);
    comp.head = Conv2d(std::move(head), 1);
    comp.tail = Conv2d(std::move(tail), 1);
    for (int l = 0; l < cfg.cells_per_block; l++) {
      Slot slot;
      for (auto const &spec : op_table()) {
        slot.ops.push_back(spec.index);
        slot.candidates.emplace_back(spec, cfg.channels, opts, rng);
      }
      comp.slots.push_back(std::move(slot));
    }
    m.comps_.push_back(std::move(comp));
  }
  m.gate_grad_.assign(cfg.cells(), 0.0);
  return m;
}

Genotype Model::genotype() const
{
  Genotype g{cfg_.components, cfg_.cells_per_block, {}};
  for (auto const &comp : comps_) {
    for (auto const &slot : comp.slots) { g.ops.push_back(slot.ops[slot.active]); }
  }
  return g;
}

void Model::set_active(std::vector<int> const &ops)
{
  if (mode_ != Mode::Search) { throw InvalidArgument("set_active: model is not a supernet"); }
  if (static_cast<int>(ops.size()) != cfg_.cells()) {
    throw InvalidArgument("set_active: expected " + std::to_string(cfg_.cells()) + " gates");
  }
  std::size_t l = 0;
  for (auto &comp : comps_) {
    for (auto &slot : comp.slots) {
      op_spec(ops[l]);
      slot.active = static_cast<std::size_t>(ops[l] - 1);
      l++;
    }
  }
}

Tensor Model::forward(Tensor const &x, std::span<KSpaceGrid const> k0, std::span<SamplingMask const> masks, bool training)
{
  if (x.c() != 2) { throw InvalidArgument("network_forward: input must have 2 channels"); }
  if (static_cast<Index>(k0.size()) != x.n() || static_cast<Index>(masks.size()) != x.n()) {
    throw InvalidArgument("network_forward: need one k-space grid and mask per sample");
  }
  clear_cache();
  Tensor h = x;
  for (auto &comp : comps_) { h = forward_component(comp, h, k0, masks, training); }
  return h;
}

Tensor Model::forward_component(Component &comp, Tensor const &x, std::span<KSpaceGrid const> k0,
                                std::span<SamplingMask const> masks, bool training)
{
  Tensor const f = comp.head.forward(x);
  Tensor       z = f;
  for (auto &slot : comp.slots) {
    z = slot.candidates[slot.active].forward(z, training);
    slot.out = z;
  }
  Tensor const b = cfg_.use_rir ? f + cfg_.beta * (z - f) : z;
  Tensor       s = comp.tail.forward(b);
  s += x;
  if (!all_finite(s.values())) { throw NumericalError("non-finite activations before data consistency"); }
  Tensor out(x.n(), 2, x.h(), x.w());
  comp.tdc_mid.resize(static_cast<std::size_t>(x.n()));
  comp.masks.assign(masks.begin(), masks.end());
  for (Index n = 0; n < x.n(); n++) {
    store_image(tdc(to_image(s, n), k0[n], masks[n], &comp.tdc_mid[n]), out, n);
  }
  return out;
}

Tensor Model::backward(Tensor const &dy)
{
  Tensor      g = dy;
  std::size_t first = gate_grad_.size();
  for (auto it = comps_.rbegin(); it != comps_.rend(); ++it) {
    first -= it->slots.size();
    g = backward_component(*it, g, first);
  }
  return g;
}

Tensor Model::backward_component(Component &comp, Tensor const &dy, std::size_t first_cell)
{
  if (comp.tdc_mid.size() != static_cast<std::size_t>(dy.n())) { throw InvalidArgument("Model::backward without forward"); }
  Tensor ds(dy.n(), 2, dy.h(), dy.w());
  for (Index n = 0; n < dy.n(); n++) {
    store_image(tdc_backward(comp.tdc_mid[n], comp.masks[n], to_image(dy, n)), ds, n);
  }
  Tensor const db = comp.tail.backward(ds);
  Tensor       dz = db;
  Tensor       df(db.n(), db.c(), db.h(), db.w());
  if (cfg_.use_rir) {
    dz *= cfg_.beta;
    df = (1.0 - cfg_.beta) * db;
  }
  for (std::size_t l = comp.slots.size(); l-- > 0;) {
    auto &slot = comp.slots[l];
    gate_grad_[first_cell + l] = dot(dz, slot.out);
    dz = slot.candidates[slot.active].backward(dz);
  }
  df += dz;
  Tensor dx = comp.head.backward(df);
  dx += ds;
  return dx;
}

std::vector<NamedParam> Model::parameters(bool active_only)
{
  std::vector<NamedParam> out;
  for (std::size_t n = 0; n < comps_.size(); n++) {
    auto             &comp = comps_[n];
    std::string const p = "c" + std::to_string(n);
    out.push_back({p + ".head.weight", &comp.head.weights().kernel});
    out.push_back({p + ".head.bias", &comp.head.weights().bias});
    for (std::size_t l = 0; l < comp.slots.size(); l++) {
      auto &slot = comp.slots[l];
      for (std::size_t i = 0; i < slot.candidates.size(); i++) {
        if (active_only && i != slot.active) { continue; }
        slot.candidates[i].collect(out, p + ".cell" + std::to_string(l) + "." + op_name(slot.ops[i]));
      }
    }
    out.push_back({p + ".tail.weight", &comp.tail.weights().kernel});
    out.push_back({p + ".tail.bias", &comp.tail.weights().bias});
  }
  return out;
}

std::vector<std::pair<std::string, std::vector<double> *>> Model::buffers()
{
  std::vector<std::pair<std::string, std::vector<double> *>> out;
  if (!cfg_.use_bn) { return out; }
  // BN layers are only reachable through named parameters; running stats sit beside gamma.
  for (std::size_t n = 0; n < comps_.size(); n++) {
    for (std::size_t l = 0; l < comps_[n].slots.size(); l++) {
      auto &slot = comps_[n].slots[l];
      for (std::size_t i = 0; i < slot.candidates.size(); i++) {
        std::string const p = "c" + std::to_string(n) + ".cell" + std::to_string(l) + "." + op_name(slot.ops[i]);
        auto             &bns = slot.candidates[i].batch_norms();
        for (int k = 1; k <= 3; k++) {
          out.emplace_back(p + ".bn" + std::to_string(k) + ".running_mean", &bns[k - 1].running_mean);
          out.emplace_back(p + ".bn" + std::to_string(k) + ".running_var", &bns[k - 1].running_var);
        }
      }
    }
  }
  return out;
}

void Model::zero_grad()
{
  for (auto &p : parameters()) { p.param->zero_grad(); }
  std::fill(gate_grad_.begin(), gate_grad_.end(), 0.0);
}

void Model::clear_cache()
{
  for (auto &comp : comps_) {
    comp.head.clear_cache();
    comp.tail.clear_cache();
    comp.tdc_mid.clear();
    for (auto &slot : comp.slots) {
      slot.out = Tensor();
      for (auto &cell : slot.candidates) { cell.clear_cache(); }
    }
  }
}

Index Model::cached_values() const
{
  Index n = 0;
  for (auto const &comp : comps_) {
    n += comp.head.cached_values() + comp.tail.cached_values();
    for (auto const &m : comp.tdc_mid) { n += static_cast<Index>(m.values().size()); }
    for (auto const &slot : comp.slots) {
      n += slot.out.size();
      for (auto const &cell : slot.candidates) { n += cell.cached_values(); }
    }
  }
  return n;
}

Index Model::num_parameters() const
{
  Index n = 0;
  for (auto const &comp : comps_) {
    for (auto const *conv : {&comp.head, &comp.tail}) {
      n += static_cast<Index>(conv->weights().kernel.size() + conv->weights().bias.size());
    }
    for (auto const &slot : comp.slots) {
      for (auto const &cell : slot.candidates) { n += cell.num_parameters(); }
    }
  }
  return n;
}

} // namespace emr

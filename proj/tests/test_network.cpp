#include "emr/checkpoint.hpp"
#include "emr/error.hpp"
#include "emr/network.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace emr;

namespace {

struct Inputs
{
  Tensor                    x, y;
  std::vector<KSpaceGrid>   k0;
  std::vector<SamplingMask> masks;
};

Inputs make_inputs(Index n, Index h, Index w, double rate, std::uint64_t seed)
{
  Inputs in{Tensor(n, 2, h, w), Tensor(n, 2, h, w), {}, {}};
  for (Index i = 0; i < n; i++) {
    auto gt = oracle::random_grid<ComplexImage>(h, w, seed + static_cast<std::uint64_t>(i));
    for (Index r = 0; r < h; r++) {
      for (Index c = 0; c < w; c++) {
        gt.re(r, c) = std::abs(gt.re(r, c));
        gt.im(r, c) = 0.0;
      }
    }
    auto const m = rate >= 1.0 ? full_mask(h, w) : make_cartesian_mask(h, w, rate, seed + 50 + static_cast<std::uint64_t>(i));
    auto const k0 = undersample(fft2c(gt), m);
    store_image(ifft2c(k0), in.x, i);
    store_image(gt, in.y, i);
    in.k0.push_back(k0);
    in.masks.push_back(m);
  }
  return in;
}

void zero_weights(Model &m)
{
  for (auto &p : m.parameters()) { std::fill(p.param->value.begin(), p.param->value.end(), 0.0); }
}

// Independent shape enumeration: one entry per conv layer (in, out) plus BN widths.
Index walk_shapes(NetworkConfig const &cfg, Genotype const &g)
{
  Index total = 0;
  auto  conv = [&](Index in, Index out) { total += in * out * 3 * 3 + out; };
  Index const c = cfg.channels;
  for (int n = 0; n < cfg.components; n++) {
    conv(2, c);
    for (int l = 0; l < cfg.cells_per_block; l++) {
      auto const &spec = op_spec(g.ops[static_cast<std::size_t>(n * cfg.cells_per_block + l)]);
      conv(c, c);
      for (int j = 1; j <= 3; j++) { conv(spec.has_skip(j) ? c + c : c, c); }
      if (cfg.use_bn) { total += 3 * 2 * c; }
    }
    conv(c, 2);
  }
  return total;
}

Index sum_sizes(std::vector<NamedParam> const &ps)
{
  Index s = 0;
  for (auto const &p : ps) { s += static_cast<Index>(p.param->size()); }
  return s;
}

} // namespace

TEST_CASE("network config validation and json")
{
  NetworkConfig cfg;
  CHECK(cfg.cells() == 15);
  cfg.cells_per_block = 5;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg.cells_per_block = 4;
  cfg.components = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg.components = 2;
  cfg.use_bn = true;
  cfg.homogeneous_op = 3;
  auto const back = network_config_from_json(to_json(cfg));
  CHECK(back.components == 2);
  CHECK(back.cells_per_block == 4);
  CHECK(back.use_bn);
  CHECK(back.homogeneous_op == 3);
  auto j = to_json(cfg);
  j["bogus"] = 1;
  CHECK_THROWS_AS(network_config_from_json(j), InvalidArgument);
}

TEST_CASE("genotypes")
{
  auto const g = cardiac_genotype();
  CHECK(g.pretty() == "O5 O8 O8|O8 O8 O8|O4 O1 O2|O8 O8 O8|O6 O8 O8");
  CHECK(g.cells() == 15);
  CHECK(g.components == 5);
  CHECK(brain_genotype().pretty() == "O6 O6 O2|O4 O1 O2|O3 O8 O1|O3 O6 O3|O3 O1 O3");
  CHECK(parse_genotype(g.pretty()) == g);
  CHECK(genotype_from_json(nlohmann::json::parse(to_json(g).dump())) == g);
  CHECK(parse_genotype("o1 2 O3|O4 O5 O6").ops == std::vector<int>{1, 2, 3, 4, 5, 6});
  CHECK_THROWS_AS(parse_genotype("O1 O2|O3 O4"), InvalidArgument);
  CHECK_THROWS_AS(parse_genotype("O1 O2 O3|O4 O5"), InvalidArgument);
  CHECK_THROWS_AS(parse_genotype("O1 O2 O9"), InvalidArgument);

  NetworkConfig cfg;
  CHECK_NOTHROW(check_genotype(g, cfg));
  cfg.components = 2;
  CHECK_THROWS_AS(check_genotype(g, cfg), InvalidArgument);
  cfg.components = 5;
  auto const model = Model::fixed(cfg, g, 1);
  CHECK(model.genotype() == g);

  auto const hg = homogeneous_genotype(cfg, 4);
  CHECK(hg.ops == std::vector<int>(15, 4));
}

TEST_CASE("param count")
{
  NetworkConfig one;
  one.components = 1;
  one.channels = 1;
  // single 1->1 3x3 conv with bias
  Index ten = 0;
  {
    ConvWeights w(1, 1);
    ten = static_cast<Index>(w.kernel.size() + w.bias.size());
  }
  CHECK(ten == 10);

  for (bool bn : {false, true}) {
    for (int cpb : {3, 4}) {
      for (Index c : {3, 8}) {
        NetworkConfig cfg;
        cfg.components = 2;
        cfg.cells_per_block = cpb;
        cfg.channels = c;
        cfg.use_bn = bn;
        for (int op = 1; op <= kNumOps; op++) {
          auto const g = homogeneous_genotype(cfg, op);
          CHECK(param_count(cfg, g) == walk_shapes(cfg, g));
          auto model = Model::fixed(cfg, g, 1);
          CHECK(sum_sizes(model.parameters()) == param_count(cfg, g));
          CHECK(model.num_parameters() == param_count(cfg, g));
        }
      }
    }
  }

  NetworkConfig paper;
  paper.channels = calibrate_channels(paper, cardiac_genotype(), 330000);
  CHECK(paper.channels == 19);
  Index const total = param_count(paper, cardiac_genotype());
  CHECK(total == walk_shapes(paper, cardiac_genotype()));
  CHECK(total == 326316);
  CHECK(total >= 300000);
  CHECK(total <= 360000);
}

TEST_CASE("l2 loss")
{
  Tensor a = oracle::random_tensor(3, 2, 4, 4, 1);
  CHECK(l2_loss(a, a) == 0.0);

  Tensor p(1, 2, 4, 4), t(1, 2, 4, 4);
  for (Index i = 0; i < 4; i++) {
    for (Index j = 0; j < 4; j++) { p(0, 0, i, j) = 1.0; }
  }
  CHECK(l2_loss(p, t) == 16.0);

  Tensor const b = oracle::random_tensor(3, 2, 4, 4, 2);
  double       direct = 0.0;
  for (Index n = 0; n < 3; n++) {
    for (Index c = 0; c < 2; c++) {
      for (Index i = 0; i < 4; i++) {
        for (Index j = 0; j < 4; j++) { direct += (a(n, c, i, j) - b(n, c, i, j)) * (a(n, c, i, j) - b(n, c, i, j)); }
      }
    }
  }
  CHECK(l2_loss(a, b) == doctest::Approx(direct / 3.0).epsilon(1e-13));
  CHECK_THROWS_AS(l2_loss(a, Tensor(3, 2, 4, 5)), InvalidArgument);
}

TEST_CASE("rir block")
{
  NetworkConfig cfg;
  cfg.channels = 4;
  auto const x = oracle::random_tensor(2, 4, 8, 8, 3);
  Rng        rng(4);

  std::vector<Cell> zero_cells;
  for (int op : {1, 5, 8}) {
    CellWeights w(op_spec(op), 4);
    for (auto &cw : w.conv) { cw.zero(); }
    zero_cells.emplace_back(op_spec(op), w, CellOptions{});
  }
  CHECK(oracle::max_abs_diff(rir_block_forward(x, zero_cells, cfg).values(), x.values()) == 0.0);

  NetworkConfig plain = cfg;
  plain.use_rir = false;
  std::vector<Cell> zero_plain;
  for (int op : {1, 5, 8}) {
    CellWeights w(op_spec(op), 4);
    for (auto &cw : w.conv) { cw.zero(); }
    CellOptions o;
    o.residual = false;
    zero_plain.emplace_back(op_spec(op), w, o);
  }
  auto const zero_out = rir_block_forward(x, zero_plain, plain);
  for (double v : zero_out.values()) { CHECK(v == 0.0); }

  std::vector<Cell>        cells;
  std::vector<CellWeights> weights;
  for (int op : {2, 6, 3}) {
    CellWeights w(op_spec(op), 4);
    for (auto &cw : w.conv) { cw.init(rng, 0.5); }
    weights.push_back(w);
    cells.emplace_back(op_spec(op), w, CellOptions{});
  }
  Tensor chain = x;
  for (std::size_t i = 0; i < 3; i++) { chain = cell_forward(chain, cells[i].spec(), weights[i], cfg.beta); }
  Tensor expect = x;
  for (std::size_t i = 0; i < expect.values().size(); i++) {
    expect.values()[i] += cfg.beta * (chain.values()[i] - x.values()[i]);
  }
  CHECK(oracle::max_abs_diff(rir_block_forward(x, cells, cfg).values(), expect.values()) < 1e-12);

  CHECK_THROWS_AS(rir_block_forward(oracle::random_tensor(1, 5, 8, 8, 1), cells, cfg), InvalidArgument);
}

TEST_CASE("zero weights and a full mask reproduce the ground truth")
{
  NetworkConfig cfg;
  cfg.components = 1;
  cfg.channels = 4;
  auto model = Model::fixed(cfg, homogeneous_genotype(cfg, 8), 3);
  zero_weights(model);
  auto const in = make_inputs(2, 16, 16, 1.0, 5);
  auto const out = model.forward(in.x, in.k0, in.masks, false);
  CHECK(oracle::max_abs_diff(out.values(), in.y.values()) < 1e-6);
}

TEST_CASE("shape invariance and end-to-end data consistency")
{
  for (int n = 1; n <= 5; n++) {
    for (int cpb : {3, 4}) {
      for (Index c : {4, 8, 16}) {
        if (c == 16 && n > 2) { continue; }
        NetworkConfig cfg;
        cfg.components = n;
        cfg.cells_per_block = cpb;
        cfg.channels = c;
        Genotype g{n, cpb, {}};
        for (int i = 0; i < n * cpb; i++) { g.ops.push_back(1 + (i * 5 + n) % kNumOps); }
        auto       model = Model::fixed(cfg, g, static_cast<std::uint64_t>(n * 10 + cpb));
        auto const in = make_inputs(1, 12, 10, 0.3, static_cast<std::uint64_t>(c));
        auto const out = model.forward(in.x, in.k0, in.masks, false);
        CHECK(out.same_shape(in.x));
        auto const k = fft2c(to_image(out, 0));
        double     err = 0.0;
        for (Index row : in.masks[0].lines) {
          for (Index col = 0; col < 10; col++) {
            err = std::max({err, std::abs(k.re(row, col) - in.k0[0].re(row, col)), std::abs(k.im(row, col) - in.k0[0].im(row, col))});
          }
        }
        CHECK(err < 1e-6);
      }
    }
  }
}

TEST_CASE("forward is deterministic")
{
  NetworkConfig cfg;
  cfg.components = 2;
  cfg.channels = 4;
  auto const in = make_inputs(2, 16, 16, 0.15, 9);
  auto       a = Model::fixed(cfg, homogeneous_genotype(cfg, 3), 11);
  auto       b = Model::fixed(cfg, homogeneous_genotype(cfg, 3), 11);
  auto const ya = a.forward(in.x, in.k0, in.masks, false);
  auto const yb = b.forward(in.x, in.k0, in.masks, false);
  auto const ya2 = a.forward(in.x, in.k0, in.masks, false);
  CHECK(oracle::max_abs_diff(ya.values(), yb.values()) == 0.0);
  CHECK(oracle::max_abs_diff(ya.values(), ya2.values()) == 0.0);
}

TEST_CASE("forward rejects mismatched inputs")
{
  NetworkConfig cfg;
  cfg.components = 1;
  cfg.channels = 2;
  auto       model = Model::fixed(cfg, homogeneous_genotype(cfg, 8), 1);
  auto const in = make_inputs(2, 8, 8, 0.3, 1);
  CHECK_THROWS_AS(model.forward(in.x, std::span(in.k0).first(1), in.masks), InvalidArgument);
  Tensor bad(2, 3, 8, 8);
  CHECK_THROWS_AS(model.forward(bad, in.k0, in.masks), InvalidArgument);
}

TEST_CASE("network gradients match finite differences")
{
  NetworkConfig cfg;
  cfg.components = 1;
  cfg.channels = 2;
  auto       model = Model::fixed(cfg, parse_genotype("O1 O3 O8"), 21);
  auto const in = make_inputs(2, 8, 8, 0.3, 17);
  Rng        rng(2);
  std::normal_distribution<double> nd(0.0, 0.3);
  for (auto &p : model.parameters()) {
    for (auto &v : p.param->value) { v += nd(rng); }
  }

  auto loss = [&] { return l2_loss(model.forward(in.x, in.k0, in.masks, false), in.y); };
  model.zero_grad();
  auto const out = model.forward(in.x, in.k0, in.masks, true);
  model.backward(l2_loss_grad(out, in.y));

  double       worst = 0.0;
  double const h = 1e-6;
  bool         first_nonzero = false;
  for (auto &np : model.parameters()) {
    if (np.name == "c0.head.weight") {
      for (double g : np.param->grad) { first_nonzero = first_nonzero || g != 0.0; }
    }
    std::size_t const stride = std::max<std::size_t>(1, np.param->size() / 6);
    for (std::size_t i = 0; i < np.param->size(); i += stride) {
      double const orig = np.param->value[i];
      np.param->value[i] = orig + h;
      double const fp = loss();
      np.param->value[i] = orig - h;
      double const fm = loss();
      np.param->value[i] = orig;
      double const fd = (fp - fm) / (2 * h);
      double const rel = std::abs(fd - np.param->grad[i]) / std::max(1e-4, std::max(std::abs(fd), std::abs(np.param->grad[i])));
      worst = std::max(worst, rel);
    }
  }
  CHECK(first_nonzero);
  CHECK(worst < 1e-4);
}

TEST_CASE("gate gradient equals the derivative of a cell output scale")
{
  // Without residuals the block output is the last cell's output, so scaling
  // it by (1 + e) is the same as scaling the tail kernel.
  NetworkConfig cfg;
  cfg.components = 2;
  cfg.channels = 3;
  cfg.use_rir = false;
  auto model = Model::supernet(cfg, 5);
  model.set_active({2, 7, 4, 8, 1, 6});
  auto const in = make_inputs(2, 8, 8, 0.3, 3);
  auto       loss = [&] { return l2_loss(model.forward(in.x, in.k0, in.masks, false), in.y); };

  model.zero_grad();
  auto const out = model.forward(in.x, in.k0, in.masks, true);
  model.backward(l2_loss_grad(out, in.y));
  auto const gates = model.gate_gradients();
  REQUIRE(gates.size() == 6);

  for (int comp = 0; comp < 2; comp++) {
    Param *tail = nullptr;
    for (auto &np : model.parameters()) {
      if (np.name == "c" + std::to_string(comp) + ".tail.weight") { tail = np.param; }
    }
    REQUIRE(tail != nullptr);
    auto const   orig = tail->value;
    double const e = 1e-6;
    for (std::size_t i = 0; i < orig.size(); i++) { tail->value[i] = orig[i] * (1 + e); }
    double const fp = loss();
    for (std::size_t i = 0; i < orig.size(); i++) { tail->value[i] = orig[i] * (1 - e); }
    double const fm = loss();
    tail->value = orig;
    double const fd = (fp - fm) / (2 * e);
    CHECK(gates[static_cast<std::size_t>(comp * 3 + 2)] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("search mode")
{
  NetworkConfig cfg;
  cfg.components = 1;
  cfg.channels = 2;
  auto model = Model::supernet(cfg, 1);
  CHECK(model.mode() == Model::Mode::Search);
  CHECK(model.parameters().size() == 4 + 3 * 8 * 8);
  model.set_active({3, 1, 8});
  CHECK(model.genotype().ops == std::vector<int>{3, 1, 8});
  CHECK(model.parameters(true).size() == 4 + 3 * 8);
  CHECK_THROWS_AS(model.set_active({3, 1}), InvalidArgument);
  CHECK_THROWS_AS(model.set_active({3, 1, 9}), InvalidArgument);

  // the active path computes exactly what a fixed model with the same weights computes
  auto fixed = Model::fixed(cfg, parse_genotype("O3 O1 O8"), 2);
  auto src = model.parameters(true);
  auto dst = fixed.parameters();
  REQUIRE(src.size() == dst.size());
  for (std::size_t i = 0; i < src.size(); i++) { dst[i].param->value = src[i].param->value; }
  auto const in = make_inputs(1, 8, 8, 0.3, 2);
  CHECK(oracle::max_abs_diff(model.forward(in.x, in.k0, in.masks, false).values(),
                             fixed.forward(in.x, in.k0, in.masks, false).values()) == 0.0);

  // cached activations scale with the active path only
  model.forward(in.x, in.k0, in.masks, true);
  Index const cached = model.cached_values();
  fixed.forward(in.x, in.k0, in.masks, true);
  CHECK(cached == fixed.cached_values());
  model.clear_cache();
  CHECK(model.cached_values() == 0);
}

TEST_CASE("checkpoint round trip")
{
  NetworkConfig cfg;
  cfg.components = 2;
  cfg.channels = 3;
  cfg.use_bn = true;
  auto const g = parse_genotype("O1 O2 O3|O6 O7 O8");
  auto       model = Model::fixed(cfg, g, 4);
  auto const in = make_inputs(2, 8, 8, 0.3, 6);
  model.forward(in.x, in.k0, in.masks, true); // moves BN running stats

  auto const dir = std::filesystem::temp_directory_path() / "emr_ckpt_test";
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "a.bin", model, 4, 7, {{"note", "x"}});
  save_checkpoint(dir / "b.bin", model, 4, 7, {{"note", "x"}});
  auto read = [](std::filesystem::path const &p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
  };
  CHECK(read(dir / "a.bin") == read(dir / "b.bin"));
  CHECK(read(dir / "a.bin").substr(0, 8) == "EMRCKPT1");

  auto loaded = load_checkpoint(dir / "a.bin");
  CHECK(loaded.info.genotype == g);
  CHECK(loaded.info.seed == 4);
  CHECK(loaded.info.epoch == 7);
  CHECK(loaded.info.extra["note"] == "x");
  CHECK(loaded.info.config.use_bn);
  auto const ya = model.forward(in.x, in.k0, in.masks, false);
  auto const yb = loaded.model.forward(in.x, in.k0, in.masks, false);
  CHECK(oracle::max_abs_diff(ya.values(), yb.values()) < 1e-5);

  auto bytes = read(dir / "a.bin");
  {
    std::ofstream f(dir / "trunc.bin", std::ios::binary);
    f << bytes.substr(0, bytes.size() - 10);
  }
  CHECK_THROWS(load_checkpoint(dir / "trunc.bin"));
  {
    std::ofstream f(dir / "magic.bin", std::ios::binary);
    f << "NOTCKPT!" << bytes.substr(8);
  }
  CHECK_THROWS(load_checkpoint(dir / "magic.bin"));
  CHECK_THROWS(load_checkpoint(dir / "missing.bin"));
  std::filesystem::remove_all(dir);
}

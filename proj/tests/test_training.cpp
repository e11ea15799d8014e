#include "emr/checkpoint.hpp"
#include "emr/data.hpp"
#include "emr/error.hpp"
#include "emr/training.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

using namespace emr;

namespace {

std::vector<std::string> ids(int n)
{
  std::vector<std::string> out;
  for (int i = 0; i < n; i++) {
    auto const num = std::to_string(i);
    out.push_back("s" + std::string(3 - num.size(), '0') + num);
  }
  return out;
}

std::vector<Sample> phantoms(Index size, int count, std::uint64_t seed)
{
  auto const ds = phantom_dataset(size, size, count, 1, seed);
  return make_samples(ds, ds.subject_ids(), 0.15, seed + 1);
}

std::string file_bytes(std::filesystem::path const &p)
{
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

} // namespace

TEST_CASE("train config json")
{
  TrainConfig cfg;
  CHECK(cfg.lr_w == 1e-3);
  CHECK(cfg.momentum_w == 0.9);
  CHECK(cfg.wd_w == 1e-7);
  CHECK(cfg.lr_alpha == 1e-3);
  CHECK(cfg.wd_alpha == 1e-6);
  CHECK(cfg.batch_size == 8);
  CHECK(cfg.warmup_epochs == 50);
  CHECK(cfg.search_epochs == 50);
  cfg.seed = 99;
  cfg.retrain_epochs = 12;
  auto const back = train_config_from_json(to_json(cfg));
  CHECK(back.seed == 99);
  CHECK(back.retrain_epochs == 12);
  auto j = to_json(cfg);
  j["lr"] = 1.0;
  CHECK_THROWS_AS(train_config_from_json(j), InvalidArgument);
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

TEST_CASE("adam matches a scalar reference")
{
  double const b1 = 0.9, b2 = 0.999, wd = 0.01, eps = 1e-8, lr = 0.05;
  Param        p(3);
  p.value = {0.5, -1.0, 2.0};
  Adam                    adam(b1, b2, wd, eps);
  std::vector<NamedParam> params{{"p", &p}};

  std::vector<double> w = p.value, m(3, 0.0), v(3, 0.0);
  for (int t = 1; t <= 25; t++) {
    for (std::size_t i = 0; i < 3; i++) { p.grad[i] = std::sin(t * 0.7 + static_cast<double>(i)) + 0.1 * w[i]; }
    for (std::size_t i = 0; i < 3; i++) {
      double const g = p.grad[i] + wd * w[i];
      m[i] = b1 * m[i] + (1 - b1) * g;
      v[i] = b2 * v[i] + (1 - b2) * g * g;
      double const mh = m[i] / (1 - std::pow(b1, t)), vh = v[i] / (1 - std::pow(b2, t));
      w[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
    adam.step(params, lr);
    for (std::size_t i = 0; i < 3; i++) { CHECK(p.value[i] == doctest::Approx(w[i]).epsilon(1e-12)); }
  }

  Param q(2);
  q.value = {1.0, 2.0};
  q.grad = {0.3, -0.4};
  Adam zero(b1, b2, wd);
  zero.step({{"q", &q}}, 0.0);
  CHECK(q.value == std::vector<double>{1.0, 2.0});
}

TEST_CASE("cosine schedule")
{
  CHECK(cosine_lr(1e-3, 0, 100) == 1e-3);
  CHECK(cosine_lr(1e-3, 99, 100) <= 1e-9);
  CHECK(cosine_lr(1e-3, 99, 100) >= 0.0);
  CHECK(cosine_lr(1e-3, 49, 99) == doctest::Approx(5e-4));
  double prev = cosine_lr(2.0, 0, 500);
  for (long s = 1; s < 500; s++) {
    double const cur = cosine_lr(2.0, s, 500);
    CHECK(cur <= prev);
    prev = cur;
  }
}

TEST_CASE("epoch batches")
{
  Rng  rng(3);
  auto b = epoch_batches(10, 4, rng);
  REQUIRE(b.size() == 3);
  CHECK(b[0].size() == 4);
  CHECK(b[2].size() == 2);
  std::multiset<std::size_t> all;
  for (auto const &x : b) { all.insert(x.begin(), x.end()); }
  CHECK(all == std::multiset<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  Rng a(7), c(7);
  CHECK(epoch_batches(20, 3, a) == epoch_batches(20, 3, c));
}

TEST_CASE("fold split sizes")
{
  for (int f = 0; f < 3; f++) {
    auto const s = split_folds(ids(33), f, 1);
    CHECK(s.test.size() == 11);
    CHECK(s.train.size() == 18);
    CHECK(s.val.size() == 4);
  }
  std::array<std::size_t, 3> brain_test{12, 12, 11};
  for (int f = 0; f < 3; f++) {
    auto const s = split_folds(ids(35), f, 1);
    CHECK(s.test.size() == brain_test[f]);
    if (s.test.size() == 12) {
      CHECK(s.train.size() == 19);
      CHECK(s.val.size() == 4);
    }
  }
}

TEST_CASE("fold split ratio follows the closest-ratio rule")
{
  for (int n = 6; n <= 60; n++) {
    for (int f = 0; f < 3; f++) {
      auto const  s = split_folds(ids(n), f, 5);
      std::size_t rest = s.train.size() + s.val.size();
      // brute force over every integer split of the remainder
      std::size_t best = 1;
      double      gap = 1e300;
      for (std::size_t v = 1; v < rest; v++) {
        double const g = std::abs(static_cast<double>(rest - v) / static_cast<double>(v) - 4.5);
        if (g < gap - 1e-12) {
          gap = g;
          best = v;
        }
      }
      CHECK(s.val.size() == best);
    }
  }
}

TEST_CASE("fold split partitions and leakage")
{
  auto const all = ids(35);
  std::multiset<std::string> tests;
  for (int f = 0; f < 3; f++) {
    auto const s = split_folds(all, f, 42);
    std::set<std::string> seen;
    for (auto const *part : {&s.train, &s.val, &s.test}) {
      for (auto const &id : *part) { CHECK(seen.insert(id).second); }
    }
    CHECK(seen.size() == all.size());
    tests.insert(s.test.begin(), s.test.end());
    CHECK(s.trainval().size() == s.train.size() + s.val.size());
  }
  CHECK(tests.size() == 35);
  CHECK(std::set<std::string>(tests.begin(), tests.end()).size() == 35);

  auto shuffled = all;
  std::reverse(shuffled.begin(), shuffled.end());
  CHECK(split_folds(shuffled, 1, 42).test == split_folds(all, 1, 42).test);
  CHECK(split_folds(all, 1, 42).test != split_folds(all, 1, 43).test);
  CHECK_THROWS_AS(split_folds(all, 3, 1), InvalidArgument);
  CHECK_THROWS_AS(split_folds(all, -1, 1), InvalidArgument);
  CHECK_THROWS_AS(split_folds(ids(2), 0, 1), InvalidArgument);
  CHECK_THROWS_AS(split_folds({"a", "a", "b"}, 0, 1), InvalidArgument);
}

TEST_CASE("zero learning rate leaves weights unchanged")
{
  auto const    s = phantoms(16, 3, 2);
  NetworkConfig net;
  net.components = 1;
  net.channels = 3;
  auto model = Model::fixed(net, homogeneous_genotype(net, 2), 5);
  std::vector<std::vector<double>> before;
  for (auto &p : model.parameters()) { before.push_back(p.param->value); }
  TrainConfig cfg;
  cfg.lr_w = 0.0;
  cfg.batch_size = 2;
  WeightTrainer trainer(model, cfg, 10, 1);
  double const loss = train_weights_epoch(trainer, s, 0);
  CHECK(std::isfinite(loss));
  std::size_t i = 0;
  for (auto &p : model.parameters()) { CHECK(p.param->value == before[i++]); }
  CHECK_THROWS_AS(train_weights_epoch(trainer, {}, 0), InvalidArgument);
}

TEST_CASE("training lowers the loss")
{
  auto const    s = phantoms(16, 4, 6);
  NetworkConfig net;
  net.components = 1;
  net.channels = 4;
  TrainConfig cfg;
  cfg.lr_w = 5e-3;
  cfg.batch_size = 1;
  cfg.retrain_epochs = 50;
  auto const res = retrain(homogeneous_genotype(net, 8), s, net, cfg);
  REQUIRE(res.epoch_loss.size() == 50);
  CHECK(res.epoch_loss.back() < 0.75 * res.epoch_loss.front());
}

TEST_CASE("retrain is deterministic and validates the genotype")
{
  auto const    s = phantoms(16, 3, 8);
  NetworkConfig net;
  net.components = 2;
  net.channels = 3;
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.retrain_epochs = 3;
  cfg.seed = 17;
  auto const g = parse_genotype("O1 O5 O8|O2 O3 O4");
  auto       a = retrain(g, s, net, cfg);
  auto       b = retrain(g, s, net, cfg);
  CHECK(a.epoch_loss == b.epoch_loss);

  auto const dir = std::filesystem::temp_directory_path() / "emr_retrain_test";
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "a.bin", a.model, 17, 3);
  save_checkpoint(dir / "b.bin", b.model, 17, 3);
  CHECK(file_bytes(dir / "a.bin") == file_bytes(dir / "b.bin"));
  std::filesystem::remove_all(dir);

  CHECK_THROWS_AS(retrain(parse_genotype("O1 O5 O8"), s, net, cfg), InvalidArgument);
  CHECK_THROWS_AS(retrain(g, {}, net, cfg), InvalidArgument);
}

TEST_CASE("evaluate")
{
  auto const    s = phantoms(16, 3, 9);
  NetworkConfig net;
  net.components = 1;
  net.channels = 2;
  auto                      model = Model::fixed(net, homogeneous_genotype(net, 8), 1);
  std::vector<ComplexImage> recs;
  auto const                rep = evaluate(model, s, 2, &recs);
  CHECK(rep.psnr.size() == 3);
  CHECK(rep.ssim.size() == 3);
  CHECK(recs.size() == 3);
  for (std::size_t i = 0; i < 3; i++) {
    auto const sc = score_reconstruction(s[i].y, recs[i]);
    CHECK(sc.psnr == rep.psnr[i]);
    CHECK(sc.ssim == rep.ssim[i]);
  }
  CHECK_THROWS_AS(evaluate(model, {}), InvalidArgument);
}

TEST_CASE("reference targets")
{
  auto const &t = reference_targets();
  CHECK(std::string(t[0].dataset) == "cardiac");
  CHECK(t[0].psnr.mean == 34.8653);
  CHECK(t[0].psnr.std == 0.9126);
  CHECK(t[0].ssim.mean == 0.9342);
  CHECK(t[0].ssim.std == 0.0028);
  CHECK(std::string(t[1].dataset) == "brain");
  CHECK(t[1].psnr.mean == 31.7616);
  CHECK(t[1].psnr.std == 0.0774);
  CHECK(t[1].ssim.mean == 0.8882);
  CHECK(t[1].ssim.std == 0.0011);
}

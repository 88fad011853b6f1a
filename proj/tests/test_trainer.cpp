#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "fmnet/data.hpp"
#include "fmnet/trainer.hpp"
#include "helpers.hpp"

using namespace fmnet;
namespace fs = std::filesystem;

namespace {

MainNetConfig tiny_net() {
  MainNetConfig cfg;
  cfg.block_widths = {3, 4};
  cfg.depth = 1;
  cfg.clip_len = 4;
  cfg.lstm_hidden = 4;
  cfg.input_h = 16;
  cfg.input_w = 16;
  cfg.fc_dim = 4;
  cfg.stem_pool = 2;
  cfg.tap_points = {{"low", 0}, {"middle", 0}, {"high", 1}};
  return cfg;
}

ScenarioParams tiny_scene() {
  ScenarioParams p;
  p.frame_h = 16;
  p.frame_w = 16;
  p.clip_len = 4;
  return p;
}

// desk-sized paths matching tiny_net taps (low 4x4x3, high 2x2x4)
std::vector<MimicPath> tiny_paths() {
  return {{"pspnet", "low", 4, 4, 3, 0.2}, {"flownet", "high", 2, 2, 2, 0.2}};
}

}  // namespace

TEST_CASE("lr schedule: published values") {
  TrainConfig c;
  CHECK(lr_at(c, 1) == 1e-4);
  CHECK(lr_at(c, 30) == 1e-4);
  CHECK(lr_at(c, 31) == 1e-6);
  CHECK(lr_at(c, 1000) == 1e-6);
  CHECK_THROWS_AS(lr_at(c, 0), UsageError);
}

TEST_CASE("optimizer: momentum recurrence and finite-gradient guard") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParamStore<double> ps;
    ps.add("p", Tensor<double>({1}, std::vector<double>{5.0}));
    GradientMap<double> g{{"p", Tensor<double>({1})}};
    std::map<std::string, Tensor<double>> vel;
    CHECK(optimizer_step(ps, g, vel, 0.1, 0.9));
    CHECK(ps.at("p")[0] == 5.0);
  }
  SUBCASE("momentum 0: plain descent") {
    ParamStore<double> ps;
    ps.add("p", Tensor<double>({1}, std::vector<double>{1.0}));
    GradientMap<double> g{{"p", Tensor<double>({1}, std::vector<double>{1.0})}};
    std::map<std::string, Tensor<double>> vel;
    optimizer_step(ps, g, vel, 0.1, 0.0);
    CHECK(ps.at("p")[0] == doctest::Approx(0.9));
  }
  SUBCASE("two steps, momentum 0.9, grad 1, lr 0.1 -> cumulative change 0.29") {
    ParamStore<double> ps;
    ps.add("p", Tensor<double>({1}, std::vector<double>{0.0}));
    GradientMap<double> g{{"p", Tensor<double>({1}, std::vector<double>{1.0})}};
    std::map<std::string, Tensor<double>> vel;
    optimizer_step(ps, g, vel, 0.1, 0.9);
    optimizer_step(ps, g, vel, 0.1, 0.9);
    CHECK(ps.at("p")[0] == doctest::Approx(-0.29).epsilon(1e-12));
  }
  SUBCASE("non-finite gradient aborts the whole step") {
    ParamStore<double> ps;
    ps.add("a", Tensor<double>({1}, std::vector<double>{1.0}));
    ps.add("b", Tensor<double>({1}, std::vector<double>{1.0}));
    GradientMap<double> g{{"a", Tensor<double>({1}, std::vector<double>{1.0})},
                          {"b", Tensor<double>({1}, std::vector<double>{std::nan("")})}};
    std::map<std::string, Tensor<double>> vel;
    CHECK_FALSE(optimizer_step(ps, g, vel, 0.1, 0.9));
    CHECK(ps.at("a")[0] == 1.0);  // untouched
    CHECK(ps.at("b")[0] == 1.0);
  }
}

TEST_CASE("training: determinism, stage gating, descent, checkpoints") {
  auto netcfg = tiny_net();
  auto scene = tiny_scene();
  auto paths = tiny_paths();
  auto clips = generate_dataset(500, scene, 12, paths);
  FixtureProvider provider;

  TrainConfig tcfg;
  tcfg.batch_size = 4;
  tcfg.episodes = 6;
  tcfg.stage1_episodes = 3;
  tcfg.lr_initial = 0.01;
  tcfg.lr_reduced = 0.005;
  tcfg.lr_drop_after = 4;
  tcfg.paths = paths;
  tcfg.seed = 2;

  const fs::path out1 = fs::temp_directory_path() / "fmnet_train_a";
  const fs::path out2 = fs::temp_directory_path() / "fmnet_train_b";
  fs::remove_all(out1);
  fs::remove_all(out2);
  auto r1 = train<float>(netcfg, tcfg, clips, &provider, &out1);
  auto r2 = train<float>(netcfg, tcfg, clips, &provider, &out2);

  SUBCASE("same seed: per-step totals within 1e-6, identical params") {
    REQUIRE(r1.log.size() == r2.log.size());
    for (std::size_t i = 0; i < r1.log.size(); ++i)
      CHECK(std::abs(r1.log[i].loss.total - r2.log[i].loss.total) <= 1e-6);
    for (const auto& [n, t] : r1.params.params)
      for (std::size_t i = 0; i < t.numel(); ++i) CHECK(t[i] == r2.params.at(n)[i]);
  }

  SUBCASE("stage gating: mimic exactly zero in stage 1, nonzero in stage 2") {
    for (const auto& row : r1.log) {
      double mim = 0;
      for (double m : row.loss.mimic) mim += m;
      if (row.stage == 1) {
        CHECK(mim == 0.0);
      } else {
        CHECK(mim > 0.0);
      }
      CHECK(row.stage == (row.episode <= tcfg.stage1_episodes ? 1 : 2));
      CHECK(row.lr == lr_at(tcfg, row.episode));
    }
  }

  SUBCASE("stage-1 checkpoint has no Phi parameters; final does") {
    auto ck1 = load_checkpoint<float>(out1 / "checkpoint_stage1");
    auto ckf = load_checkpoint<float>(out1 / "checkpoint_final");
    for (const auto& [n, t] : ck1.params.params) CHECK(n.rfind("phi.", 0) != 0);
    for (const auto& p : paths) {
      CHECK_FALSE(ck1.params.has(phi_param_name(p)));
      CHECK(ckf.params.has(phi_param_name(p)));
    }
    CHECK(ck1.net_config.block_widths == netcfg.block_widths);
    CHECK(ckf.train_config.seed == tcfg.seed);
  }

  SUBCASE("metrics log exists with the declared columns") {
    std::ifstream f(out1 / "metrics.csv");
    REQUIRE(f.good());
    std::string header;
    std::getline(f, header);
    CHECK(header ==
          "step,episode,stage,lr,steer,multi_speed,multi_torque,mimic_pspnet_low,"
          "mimic_flownet_high,total");
  }

  fs::remove_all(out1);
  fs::remove_all(out2);
}

TEST_CASE("training loss descends on a 50-clip fixture set") {
  auto netcfg = tiny_net();
  auto scene = tiny_scene();
  auto clips = generate_dataset(900, scene, 50, {});
  FixtureProvider provider;
  TrainConfig tcfg;
  tcfg.batch_size = 16;
  tcfg.episodes = 5;
  tcfg.stage1_episodes = 5;
  tcfg.lr_initial = 0.02;
  tcfg.lr_reduced = 0.02;
  tcfg.seed = 3;
  auto r = train<float>(netcfg, tcfg, clips, &provider);
  REQUIRE(r.log.size() >= 10);
  // average the first and last episodes to smooth batch noise
  double first = 0, last = 0;
  std::size_t per_ep = r.log.size() / 5;
  for (std::size_t i = 0; i < per_ep; ++i) {
    first += r.log[i].loss.total;
    last += r.log[r.log.size() - 1 - i].loss.total;
  }
  CHECK(last < first);
  CHECK(r.skipped_steps == 0);
}

TEST_CASE("missing aux targets for an enabled path fail before step 1") {
  auto netcfg = tiny_net();
  auto clips = generate_dataset(40, tiny_scene(), 4, {});  // no sidecars
  FixtureProvider provider;
  TrainConfig tcfg;
  tcfg.episodes = 1;
  tcfg.stage1_episodes = 0;
  tcfg.paths = tiny_paths();
  CHECK_THROWS_AS(train<float>(netcfg, tcfg, clips, &provider), DataError);
  CHECK_THROWS_AS(train<float>(netcfg, tcfg, clips, nullptr), ConfigError);
}

TEST_CASE("empty-path training equals the baseline trajectory bit for bit") {
  auto netcfg = tiny_net();
  auto clips = generate_dataset(41, tiny_scene(), 6, tiny_paths());
  FixtureProvider provider;
  TrainConfig a;
  a.batch_size = 3;
  a.episodes = 3;
  a.stage1_episodes = 1;
  a.lr_initial = 0.01;
  a.seed = 5;
  TrainConfig b = a;
  b.paths = tiny_paths();
  for (auto& p : b.paths) p.beta = 0.0;
  auto ra = train<float>(netcfg, a, clips, &provider);
  auto rb = train<float>(netcfg, b, clips, &provider);
  REQUIRE(ra.log.size() == rb.log.size());
  // identical steering/multi losses at every step (beta=0 paths do not
  // perturb the shared parameters)
  for (std::size_t i = 0; i < ra.log.size(); ++i) {
    CHECK(ra.log[i].loss.steer == rb.log[i].loss.steer);
    CHECK(ra.log[i].loss.multi == rb.log[i].loss.multi);
  }
  for (const auto& [n, t] : ra.params.params)
    for (std::size_t i = 0; i < t.numel(); ++i) CHECK(t[i] == rb.params.at(n)[i]);
}

TEST_CASE("checkpoint round trip preserves everything") {
  auto netcfg = tiny_net();
  auto ps = MainNet<float>::build(netcfg, 11);
  NormStats stats;
  stats.mean = {0.1, 18.0, 0.01};
  stats.stdev = {0.02, 1.5, 0.3};
  TrainConfig tcfg;
  tcfg.seed = 11;
  const fs::path dir = fs::temp_directory_path() / "fmnet_ckpt_test";
  fs::remove_all(dir);
  save_checkpoint(dir, ps, netcfg, stats, tcfg);
  auto ck = load_checkpoint<float>(dir);
  REQUIRE(ck.params.size() == ps.size());
  for (const auto& [n, t] : ps.params)
    for (std::size_t i = 0; i < t.numel(); ++i) CHECK(t[i] == ck.params.at(n)[i]);
  CHECK(ck.stats.mean == stats.mean);
  CHECK(ck.stats.stdev == stats.stdev);
  CHECK(ck.net_config.lstm_hidden == netcfg.lstm_hidden);
  CHECK(ck.train_config.seed == 11);
  fs::remove_all(dir);
  CHECK_THROWS_AS(load_checkpoint<float>(dir), DataError);
}

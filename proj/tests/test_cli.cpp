#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fmnet/config.hpp"
#include "fmnet/data.hpp"

using namespace fmnet;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(FMNET_BIN) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string run_capture(const std::string& args) {
  const fs::path tmp = fs::temp_directory_path() / "fmnet_cli_capture.txt";
  const std::string cmd =
      std::string(FMNET_BIN) + " " + args + " > " + tmp.string() + " 2>&1";
  std::system(cmd.c_str());
  std::ifstream f(tmp);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path write_config(const std::string& name, const std::string& body) {
  const fs::path p = fs::temp_directory_path() / name;
  std::ofstream f(p);
  f << body;
  return p;
}

const char* kSmallCfg = R"({
  "scenario": {"frame_h": 16, "frame_w": 16, "clip_len": 4},
  "mainnet": {"block_widths": [3, 4], "depth": 1, "clip_len": 4, "lstm_hidden": 4,
              "input_h": 16, "input_w": 16, "fc_dim": 4, "stem_pool": 2,
              "tap_points": {"low": 0, "middle": 0, "high": 1}},
  "train": {"batch_size": 4, "episodes": 2, "stage1_episodes": 1,
            "lr_initial": 0.01, "lr_reduced": 0.001, "lr_drop_after": 1, "seed": 1},
  "paths_preset": "none",
  "provider": "oracle",
  "gen_count": 6
})";

std::vector<std::pair<std::string, std::string>> dir_digest(const fs::path& root) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    // the config snapshot embeds the resolved out_dir, so it differs across
    // output locations by construction
    if (e.path().filename() == "run_config.json") continue;
    std::ifstream f(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    out.emplace_back(fs::relative(e.path(), root).string(), ss.str());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("config parsing: strict keys, categorized errors") {
  SUBCASE("unknown top-level key named in the error") {
    auto p = write_config("bad1.json", R"({"bogus_key": 1})");
    CHECK_THROWS_WITH_AS(load_run_config(p.string()), doctest::Contains("bogus_key"),
                         UsageError);
  }
  SUBCASE("unknown nested key") {
    auto p = write_config("bad2.json", R"({"train": {"learning_rate": 0.1}})");
    CHECK_THROWS_WITH_AS(load_run_config(p.string()), doctest::Contains("learning_rate"),
                         UsageError);
  }
  SUBCASE("malformed JSON") {
    auto p = write_config("bad3.json", "{nope");
    CHECK_THROWS_AS(load_run_config(p.string()), UsageError);
  }
  SUBCASE("semantic violations are config errors") {
    auto p = write_config("bad4.json", R"({"train": {"stage1_episodes": 50, "episodes": 10}})");
    CHECK_THROWS_AS(load_run_config(p.string()), ConfigError);
  }
  SUBCASE("valid config round-trips defaults") {
    auto p = write_config("ok.json", kSmallCfg);
    auto cfg = load_run_config(p.string());
    CHECK(cfg.train.batch_size == 4);
    CHECK(cfg.mainnet.block_widths == std::vector<std::size_t>{3, 4});
    CHECK(cfg.provider == "oracle");
    CHECK(cfg.resolved_paths().empty());
  }
}

TEST_CASE("CLI: exit codes per error category") {
  CHECK(run("--help") == 0);
  CHECK(run("bogus-subcommand") == 2);
  CHECK(run("train --no-such-flag") == 2);
  CHECK(run("gen-data --config /does/not/exist.json") == 2);
  auto bad = write_config("cli_bad.json", R"({"mystery": true})");
  CHECK(run("gen-data --config " + bad.string()) == 2);
  // train with a dataset dir that does not exist -> data error
  auto cfg = write_config("cli_ok.json", kSmallCfg);
  const fs::path missing = fs::temp_directory_path() / "fmnet_cli_missing_ds";
  fs::remove_all(missing);
  CHECK(run("train --config " + cfg.string() + " --out " +
            (fs::temp_directory_path() / "fmnet_cli_t0").string()) == 2);  // no dataset_dir set
  auto cfg2 = write_config("cli_ds.json", std::string(kSmallCfg).replace(
                                              std::string(kSmallCfg).find("\"gen_count\": 6"),
                                              14,
                                              "\"gen_count\": 6, \"dataset_dir\": \"" +
                                                  missing.string() + "\""));
  CHECK(run("train --config " + cfg2.string() + " --out " +
            (fs::temp_directory_path() / "fmnet_cli_t1").string()) == 4);
}

TEST_CASE("CLI: gen-data twice with the same seed is byte-identical") {
  auto cfg = write_config("cli_gen.json", kSmallCfg);
  const fs::path d1 = fs::temp_directory_path() / "fmnet_cli_gen1";
  const fs::path d2 = fs::temp_directory_path() / "fmnet_cli_gen2";
  fs::remove_all(d1);
  fs::remove_all(d2);
  REQUIRE(run("gen-data --config " + cfg.string() + " --seed 7 --out " + d1.string()) == 0);
  REQUIRE(run("gen-data --config " + cfg.string() + " --seed 7 --out " + d2.string()) == 0);
  auto a = dir_digest(d1), b = dir_digest(d2);
  REQUIRE(a.size() == b.size());
  REQUIRE(!a.empty());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(a[i].second == b[i].second);
  }
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("CLI: full pipeline gen -> train -> eval -> export on a tiny config") {
  const fs::path root = fs::temp_directory_path() / "fmnet_cli_pipe";
  fs::remove_all(root);
  fs::create_directories(root);
  std::string body(kSmallCfg);
  body.insert(body.rfind('}'), ", \"dataset_dir\": \"" + (root / "ds").string() +
                                   "\", \"val_dir\": \"" + (root / "ds").string() +
                                   "\", \"out_dir\": \"" + (root / "out").string() + "\"");
  auto cfg = write_config("cli_pipe.json", body);
  REQUIRE(run("gen-data --config " + cfg.string() + " --out " + (root / "ds").string()) == 0);
  REQUIRE(run("train --config " + cfg.string()) == 0);
  CHECK(fs::exists(root / "out" / "checkpoint_final" / "manifest.json"));
  CHECK(fs::exists(root / "out" / "checkpoint_stage1" / "manifest.json"));
  CHECK(fs::exists(root / "out" / "metrics.csv"));
  CHECK(fs::exists(root / "out" / "run_config.json"));  // config copied into out
  CHECK(fs::exists(root / "out" / "seed.txt"));
  REQUIRE(run("eval --config " + cfg.string()) == 0);
  CHECK(fs::exists(root / "out" / "eval.json"));
  REQUIRE(run("export-embeddings --config " + cfg.string()) == 0);
  CHECK(fs::exists(root / "out" / "embeddings_high_features"));
  CHECK(fs::exists(root / "out" / "embeddings_high_angles.csv"));
  fs::remove_all(root);
}

TEST_CASE("CLI: check-inflate reports PASS with max_err <= 1e-5") {
  auto out = run_capture("check-inflate");
  CHECK(out.find("PASS, max_err <= 1e-5") != std::string::npos);
}

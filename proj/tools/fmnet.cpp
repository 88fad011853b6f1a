#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fmnet/config.hpp"
#include "fmnet/data.hpp"
#include "fmnet/evaluator.hpp"
#include "fmnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace fmnet;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;
constexpr int kExitData = 4;

struct CommonOpts {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  std::string preset = "table2";
};

RunConfig resolve_config(const CommonOpts& o) {
  RunConfig cfg;
  if (!o.config_path.empty()) cfg = load_run_config(o.config_path);
  if (o.seed) cfg.train.seed = *o.seed;
  if (!o.out.empty()) cfg.out_dir = o.out;
  return cfg;
}

// Every run is reproducible from (config, seed); copy both into the
// output directory.
void snapshot_config(const fs::path& out, const RunConfig& cfg) {
  fs::create_directories(out);
  nlohmann::json j = cfg;
  std::ofstream f(out / "run_config.json");
  f << j.dump(2) << "\n";
  std::ofstream s(out / "seed.txt");
  s << cfg.train.seed << "\n";
}

std::unique_ptr<AuxProvider> make_provider(const RunConfig& cfg) {
  if (cfg.provider == "fixture") return std::make_unique<FixtureProvider>();
  if (cfg.provider == "oracle") return std::make_unique<OracleProvider>(cfg.scenario);
  if (cfg.provider == "frozen-random") return std::make_unique<FrozenRandomProvider>();
  throw UsageError("unknown provider kind: " + cfg.provider);
}

std::vector<Clip> load_required_dataset(const std::string& dir, const char* what) {
  if (dir.empty()) throw UsageError(std::string("config: ") + what + " must be set");
  return load_dataset(dir);
}

int cmd_gen_data(const CommonOpts& o) {
  RunConfig cfg = resolve_config(o);
  const fs::path out = cfg.out_dir;
  snapshot_config(out, cfg);
  const auto paths = cfg.resolved_paths();
  auto clips = generate_dataset(cfg.train.seed, cfg.scenario, cfg.gen_count, paths);
  save_dataset(out, clips, cfg.scenario);
  std::cout << "wrote " << clips.size() << " clips to " << out.string() << "\n";
  return 0;
}

int cmd_train(const CommonOpts& o) {
  RunConfig cfg = resolve_config(o);
  const fs::path out = cfg.out_dir;
  snapshot_config(out, cfg);
  auto train_set = load_required_dataset(cfg.dataset_dir, "dataset_dir");
  auto provider = make_provider(cfg);
  TrainConfig tcfg = cfg.train;
  tcfg.paths = cfg.resolved_paths();
  auto result = train<float>(cfg.mainnet, tcfg, train_set, provider.get(), &out);
  std::cout << "trained " << tcfg.episodes << " episodes, " << result.log.size() << " steps, "
            << result.skipped_steps << " skipped; final total loss "
            << (result.log.empty() ? 0.0 : result.log.back().loss.total) << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& o) {
  RunConfig cfg = resolve_config(o);
  const fs::path out = cfg.out_dir;
  const fs::path ckpt =
      o.checkpoint.empty() ? out / "checkpoint_final" : fs::path(o.checkpoint);
  auto c = load_checkpoint<float>(ckpt);
  auto val_set = load_required_dataset(cfg.val_dir.empty() ? cfg.dataset_dir : cfg.val_dir,
                                       "val_dir or dataset_dir");
  auto rep = evaluate(c.net_config, c.params, c.stats, val_set);
  snapshot_config(out, cfg);
  nlohmann::json j{{"mae", rep.mae},
                   {"rmse", rep.rmse},
                   {"frames", rep.frames},
                   {"config_fingerprint", rep.config_fingerprint}};
  std::ofstream f(out / "eval.json");
  f << j.dump(2) << "\n";
  std::cout << "MAE " << rep.mae << " RMSE " << rep.rmse << " over " << rep.frames
            << " frames\n";
  return 0;
}

int cmd_ablate(const CommonOpts& o) {
  RunConfig cfg = resolve_config(o);
  if (o.preset != "table2") throw UsageError("unknown ablation preset: " + o.preset);
  const fs::path out = cfg.out_dir;
  snapshot_config(out, cfg);
  auto train_set = load_required_dataset(cfg.dataset_dir, "dataset_dir");
  auto val_set = load_required_dataset(cfg.val_dir, "val_dir");
  auto provider = make_provider(cfg);
  const auto all_paths = cfg.resolved_paths();
  // Stream per-run results so long ablations are observable mid-flight.
  std::ofstream progress(out / "ablation_progress.csv");
  progress << "row_name,seed,mae,rmse\n";
  auto results = ablate<float>(
      cfg.mainnet, cfg.train, all_paths, table2_rows(), cfg.ablate_seeds, train_set, val_set,
      provider.get(), [&](const AblationResult& r) {
        progress << '"' << r.row << "\"," << r.seed << "," << r.mae << "," << r.rmse
                 << std::endl;
        std::cout << r.row << " seed " << r.seed << ": MAE " << r.mae << " RMSE " << r.rmse
                  << std::endl;
      });
  write_ablation_csvs(out, results);
  std::cout << "wrote " << (out / "ablation.csv").string() << "\n";
  return 0;
}

int cmd_check_inflate(const CommonOpts& o) {
  RunConfig cfg = resolve_config(o);
  MainNetConfig netcfg = cfg.mainnet;
  ParamStore<float> ps2;
  if (!o.checkpoint.empty()) {
    // A checkpoint stores inflated kernels; rebuild the 2D set from the
    // central temporal slice (replication makes all slices proportional).
    auto c = load_checkpoint<float>(o.checkpoint);
    netcfg = c.net_config;
    for (const auto& [name, t] : c.params.params) {
      if (name.rfind("trunk.", 0) != 0) {
        ps2.add(name, t);
        continue;
      }
      const std::size_t wt = t.shape[0];
      const std::size_t n = t.numel() / wt;
      Tensor<float> k2d({t.shape[1], t.shape[2], t.shape[3], t.shape[4]});
      for (std::size_t i = 0; i < n; ++i) k2d[i] = t[(wt / 2) * n + i] * static_cast<float>(wt);
      ps2.add(name, std::move(k2d));
    }
  } else {
    ps2 = MainNet<float>::build2d(netcfg, cfg.train.seed);
  }
  const double max_err = inflation_max_err(netcfg, ps2, cfg.train.seed + 1);
  const bool ok = max_err <= 1e-5;
  std::cout << (ok ? "PASS" : "FAIL") << ", max_err " << (ok ? "<=" : ">") << " 1e-5"
            << " (max_err=" << max_err << ")\n";
  return ok ? 0 : 1;
}

int cmd_export_embeddings(const CommonOpts& o) {
  RunConfig cfg = resolve_config(o);
  const fs::path out = cfg.out_dir;
  const fs::path ckpt =
      o.checkpoint.empty() ? out / "checkpoint_final" : fs::path(o.checkpoint);
  auto c = load_checkpoint<float>(ckpt);
  auto clips = load_required_dataset(cfg.val_dir.empty() ? cfg.dataset_dir : cfg.val_dir,
                                     "val_dir or dataset_dir");
  snapshot_config(out, cfg);
  const fs::path prefix = out / ("embeddings_" + cfg.export_level);
  export_embeddings(c.net_config, c.params, clips, cfg.export_level, prefix);
  std::cout << "wrote " << prefix.string() << "_features (+_angles.csv), " << clips.size()
            << " rows\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fmnet: feature-mimicking steering network toolkit"};
  app.require_subcommand(1);
  CommonOpts o;

  auto add_common = [&](CLI::App* sub, bool with_checkpoint = false) {
    sub->add_option("--config", o.config_path, "run config JSON");
    sub->add_option("--seed", o.seed, "override train/generation seed");
    sub->add_option("--out", o.out, "override output directory");
    if (with_checkpoint) sub->add_option("--checkpoint", o.checkpoint, "checkpoint directory");
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_common(gen);
  auto* tr = app.add_subcommand("train", "train on a dataset directory");
  add_common(tr);
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(ev, true);
  auto* ab = app.add_subcommand("ablate", "run the ablation table");
  add_common(ab);
  ab->add_option("--preset", o.preset, "ablation preset (table2)");
  auto* ci = app.add_subcommand("check-inflate", "verify 2D->3D inflation equivalence");
  add_common(ci, true);
  auto* ex = app.add_subcommand("export-embeddings", "export tap features per clip");
  add_common(ex, true);

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return cmd_gen_data(o);
    if (tr->parsed()) return cmd_train(o);
    if (ev->parsed()) return cmd_eval(o);
    if (ab->parsed()) return cmd_ablate(o);
    if (ci->parsed()) return cmd_check_inflate(o);
    if (ex->parsed()) return cmd_export_embeddings(o);
    return kExitUsage;
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
}

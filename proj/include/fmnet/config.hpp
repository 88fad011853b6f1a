#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fmnet/auxnet.hpp"
#include "fmnet/clip.hpp"
#include "fmnet/data.hpp"
#include "fmnet/errors.hpp"
#include "fmnet/losses.hpp"
#include "fmnet/mainnet.hpp"

namespace fmnet {

inline void check_keys(const nlohmann::json& j, const std::vector<std::string>& known,
                       const std::string& prefix) {
  if (!j.is_object()) throw UsageError("config: " + prefix + " must be an object");
  for (const auto& [key, v] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw UsageError("config: unknown key '" + (prefix.empty() ? key : prefix + "." + key) + "'");
}

// --- JSON glue ---------------------------------------------------------

inline void to_json(nlohmann::json& j, const MimicPath& p) {
  j = {{"aux", p.aux_id}, {"level", p.level}, {"dims", {p.target_h, p.target_w, p.target_c}},
       {"beta", p.beta}};
}

inline void from_json(const nlohmann::json& j, MimicPath& p) {
  check_keys(j, {"aux", "level", "dims", "beta"}, "path");
  p.aux_id = j.at("aux").get<std::string>();
  p.level = j.at("level").get<std::string>();
  const auto dims = j.at("dims");
  if (!dims.is_array() || dims.size() != 3) throw UsageError("config: path.dims must be [h, w, c]");
  p.target_h = dims[0].get<std::size_t>();
  p.target_w = dims[1].get<std::size_t>();
  p.target_c = dims[2].get<std::size_t>();
  p.beta = j.value("beta", 0.2);
  p.validate();
}

inline void to_json(nlohmann::json& j, const MainNetConfig& c) {
  j = {{"block_widths", c.block_widths}, {"depth", c.depth},       {"clip_len", c.clip_len},
       {"lstm_hidden", c.lstm_hidden},   {"input_h", c.input_h},   {"input_w", c.input_w},
       {"fc_dim", c.fc_dim},             {"temporal_kernel", c.temporal_kernel},
       {"stem_pool", c.stem_pool},       {"tap_points", c.tap_points}};
}

inline void from_json(const nlohmann::json& j, MainNetConfig& c) {
  check_keys(j,
             {"block_widths", "depth", "clip_len", "lstm_hidden", "input_h", "input_w", "fc_dim",
              "temporal_kernel", "stem_pool", "tap_points"},
             "mainnet");
  MainNetConfig d;
  c.block_widths = j.value("block_widths", d.block_widths);
  c.depth = j.value("depth", d.depth);
  c.clip_len = j.value("clip_len", d.clip_len);
  c.lstm_hidden = j.value("lstm_hidden", d.lstm_hidden);
  c.input_h = j.value("input_h", d.input_h);
  c.input_w = j.value("input_w", d.input_w);
  c.fc_dim = j.value("fc_dim", d.fc_dim);
  c.temporal_kernel = j.value("temporal_kernel", d.temporal_kernel);
  c.stem_pool = j.value("stem_pool", d.stem_pool);
  c.tap_points = j.value("tap_points", d.tap_points);
  c.validate();
}

inline void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"alpha", w.alpha}, {"beta", w.beta}};
}

inline void from_json(const nlohmann::json& j, LossWeights& w) {
  check_keys(j, {"alpha", "beta"}, "train.weights");
  LossWeights d;
  w.alpha = j.value("alpha", d.alpha);
  w.beta = j.value("beta", d.beta);
  w.validate();
}

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t episodes = 40;
  std::size_t stage1_episodes = 30;
  double lr_initial = 1e-4;
  double lr_reduced = 1e-6;
  std::size_t lr_drop_after = 30;
  double momentum = 0.9;
  LossWeights weights;
  std::vector<MimicPath> paths;
  std::uint64_t seed = 1;

  void validate() const {
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (stage1_episodes > episodes)
      throw ConfigError("train: stage1_episodes must be <= episodes");
    if (lr_initial <= 0 || lr_reduced <= 0) throw ConfigError("train: learning rates must be > 0");
    if (momentum < 0 || momentum >= 1) throw ConfigError("train: momentum must be in [0, 1)");
    weights.validate();
    for (const auto& p : paths) p.validate();
  }
};

// Piecewise-constant schedule: lr_initial through episode lr_drop_after,
// lr_reduced thereafter.
inline double lr_at(const TrainConfig& c, std::size_t episode) {
  if (episode < 1) throw UsageError("lr_at: episodes are 1-based");
  return episode <= c.lr_drop_after ? c.lr_initial : c.lr_reduced;
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"episodes", c.episodes},
       {"stage1_episodes", c.stage1_episodes},
       {"lr_initial", c.lr_initial},
       {"lr_reduced", c.lr_reduced},
       {"lr_drop_after", c.lr_drop_after},
       {"momentum", c.momentum},
       {"weights", c.weights},
       {"paths", c.paths},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  check_keys(j,
             {"batch_size", "episodes", "stage1_episodes", "lr_initial", "lr_reduced",
              "lr_drop_after", "momentum", "weights", "paths", "seed"},
             "train");
  TrainConfig d;
  c.batch_size = j.value("batch_size", d.batch_size);
  c.episodes = j.value("episodes", d.episodes);
  c.stage1_episodes = j.value("stage1_episodes", d.stage1_episodes);
  c.lr_initial = j.value("lr_initial", d.lr_initial);
  c.lr_reduced = j.value("lr_reduced", d.lr_reduced);
  c.lr_drop_after = j.value("lr_drop_after", d.lr_drop_after);
  c.momentum = j.value("momentum", d.momentum);
  if (j.contains("weights")) c.weights = j.at("weights").get<LossWeights>();
  if (j.contains("paths")) c.paths = j.at("paths").get<std::vector<MimicPath>>();
  c.seed = j.value("seed", d.seed);
  c.validate();
}

inline void to_json(nlohmann::json& j, const NormStats& s) {
  j = {{"mean", s.mean}, {"stdev", s.stdev}};
}

inline void from_json(const nlohmann::json& j, NormStats& s) {
  check_keys(j, {"mean", "stdev"}, "norm_stats");
  s.mean = j.at("mean").get<std::array<double, 3>>();
  s.stdev = j.at("stdev").get<std::array<double, 3>>();
}

// Full run configuration; the single structured config file consumed by
// every CLI subcommand.
struct RunConfig {
  ScenarioParams scenario;
  MainNetConfig mainnet;
  TrainConfig train;
  std::string paths_preset = "desk";  // used when train.paths is empty
  std::string provider = "fixture";   // fixture | oracle | frozen-random
  std::string dataset_dir;
  std::string val_dir;
  std::string out_dir = "out";
  std::size_t gen_count = 64;
  std::size_t val_count = 16;
  std::vector<std::uint64_t> ablate_seeds{1, 2, 3, 4, 5};
  std::string export_level = "high";

  // Enabled paths: explicit list wins, otherwise the named preset.
  std::vector<MimicPath> resolved_paths() const {
    if (!train.paths.empty()) return train.paths;
    return paths_preset == "none" ? std::vector<MimicPath>{} : paths_preset_checked();
  }
  std::vector<MimicPath> paths_preset_checked() const { return paths_preset_list(paths_preset); }

  static std::vector<MimicPath> paths_preset_list(const std::string& name) {
    return ::fmnet::paths_preset(name);
  }

  void validate() const {
    scenario.validate();
    mainnet.validate();
    train.validate();
    if (provider != "fixture" && provider != "oracle" && provider != "frozen-random")
      throw UsageError("config: unknown provider kind '" + provider + "'");
    if (paths_preset != "none") paths_preset_list(paths_preset);  // throws on bad name
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"scenario", c.scenario},       {"mainnet", c.mainnet},
       {"train", c.train},             {"paths_preset", c.paths_preset},
       {"provider", c.provider},       {"dataset_dir", c.dataset_dir},
       {"val_dir", c.val_dir},         {"out_dir", c.out_dir},
       {"gen_count", c.gen_count},     {"val_count", c.val_count},
       {"ablate_seeds", c.ablate_seeds}, {"export_level", c.export_level}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  check_keys(j,
             {"scenario", "mainnet", "train", "paths_preset", "provider", "dataset_dir",
              "val_dir", "out_dir", "gen_count", "val_count", "ablate_seeds", "export_level"},
             "");
  if (j.contains("scenario")) {
    check_keys(j.at("scenario"),
               {"frame_h", "frame_w", "clip_len", "dt", "base_speed", "speed_jitter", "min_speed",
                "max_curvature", "lane_width", "marking_width", "dash_period", "lighting_min",
                "lighting_max", "noise_amp", "cam_height", "wheelbase", "torque_scale",
                "view_dist", "flow_clamp", "mirror"},
               "scenario");
    c.scenario = j.at("scenario").get<ScenarioParams>();
  }
  if (j.contains("mainnet")) c.mainnet = j.at("mainnet").get<MainNetConfig>();
  if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
  RunConfig d;
  c.paths_preset = j.value("paths_preset", d.paths_preset);
  c.provider = j.value("provider", d.provider);
  c.dataset_dir = j.value("dataset_dir", d.dataset_dir);
  c.val_dir = j.value("val_dir", d.val_dir);
  c.out_dir = j.value("out_dir", d.out_dir);
  c.gen_count = j.value("gen_count", d.gen_count);
  c.val_count = j.value("val_count", d.val_count);
  c.ablate_seeds = j.value("ablate_seeds", d.ablate_seeds);
  c.export_level = j.value("export_level", d.export_level);
  c.validate();
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError("malformed config " + path + ": " + e.what());
  }
  try {
    return j.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("malformed config " + path + ": " + e.what());
  }
}

}  // namespace fmnet

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "fmnet/auxnet.hpp"
#include "fmnet/clip.hpp"
#include "fmnet/config.hpp"
#include "fmnet/errors.hpp"
#include "fmnet/io.hpp"
#include "fmnet/mainnet.hpp"
#include "fmnet/trainer.hpp"

namespace fmnet {

inline double mae(const std::vector<double>& pred, const std::vector<double>& gt) {
  if (pred.empty() || pred.size() != gt.size())
    throw UsageError("mae: inputs must be nonempty and of equal length");
  double acc = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - gt[i]);
  return acc / static_cast<double>(pred.size());
}

inline double rmse(const std::vector<double>& pred, const std::vector<double>& gt) {
  if (pred.empty() || pred.size() != gt.size())
    throw UsageError("rmse: inputs must be nonempty and of equal length");
  double acc = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - gt[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(pred.size()));
}

struct EvalReport {
  double mae = 0;
  double rmse = 0;
  std::size_t frames = 0;
  // per clip: (mean abs residual, max abs residual)
  std::vector<std::array<double, 2>> per_clip;
  std::string config_fingerprint;
};

inline std::string config_fingerprint(const MainNetConfig& cfg) {
  nlohmann::json j = cfg;
  const std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Steering-angle metrics over every frame of the set, in raw units (rad).
template <class T>
EvalReport evaluate(const MainNetConfig& netcfg, const ParamStore<T>& params,
                    const NormStats& stats, const std::vector<Clip>& clips) {
  if (clips.empty()) throw UsageError("evaluate: empty dataset");
  MainNet<T> net(netcfg);
  std::vector<double> pred, gt;
  EvalReport rep;
  for (const auto& clip : clips) {
    auto out = net.forward(params, clip.frames.template cast<T>(), VehicleState{});
    double sum = 0, mx = 0;
    for (std::size_t t = 0; t < clip.states.size(); ++t) {
      const double p = stats.denorm(0, out.per_frame[t][0]);
      const double g = clip.states[t].angle;
      pred.push_back(p);
      gt.push_back(g);
      const double r = std::abs(p - g);
      sum += r;
      mx = std::max(mx, r);
    }
    rep.per_clip.push_back({sum / static_cast<double>(clip.states.size()), mx});
  }
  rep.mae = mae(pred, gt);
  rep.rmse = rmse(pred, gt);
  rep.frames = pred.size();
  rep.config_fingerprint = config_fingerprint(netcfg);
  return rep;
}

// --- ablation ------------------------------------------------------------

// The published ablation rows: short codes select from the six paths
// (P = pspnet, F = flownet; L/M/H = low/middle/high).
inline std::vector<std::pair<std::string, std::vector<std::string>>> table2_rows() {
  return {{"Without feat. mimick", {}},
          {"PH + FH", {"PH", "FH"}},
          {"PM + FM", {"PM", "FM"}},
          {"PL + FL", {"PL", "FL"}},
          {"PH + PM + PL", {"PH", "PM", "PL"}},
          {"FH + FM + FL", {"FH", "FM", "FL"}},
          {"With full feat. mimick", {"PH", "PM", "PL", "FH", "FM", "FL"}}};
}

inline std::vector<MimicPath> select_paths(const std::vector<MimicPath>& all,
                                           const std::vector<std::string>& codes) {
  std::vector<MimicPath> out;
  for (const auto& code : codes) {
    bool found = false;
    for (const auto& p : all)
      if (p.short_code() == code) {
        out.push_back(p);
        found = true;
        break;
      }
    if (!found) throw ConfigError("ablation: no configured path with code " + code);
  }
  return out;
}

struct AblationResult {
  std::string row;
  std::uint64_t seed;
  double mae = 0;
  double rmse = 0;
};

// One seeded train+eval per (row, combination); seeds are shared across
// rows so comparisons are paired.
template <class T>
std::vector<AblationResult> ablate(
    const MainNetConfig& netcfg, const TrainConfig& base, const std::vector<MimicPath>& all_paths,
    const std::vector<std::pair<std::string, std::vector<std::string>>>& rows,
    const std::vector<std::uint64_t>& seeds, const std::vector<Clip>& train_set,
    const std::vector<Clip>& val_set, const AuxProvider* provider,
    const std::function<void(const AblationResult&)>& on_result = nullptr) {
  std::vector<AblationResult> results;
  for (const auto& [name, codes] : rows) {
    const auto paths = select_paths(all_paths, codes);
    for (std::uint64_t seed : seeds) {
      TrainConfig tcfg = base;
      tcfg.paths = paths;
      tcfg.seed = seed;
      auto trained = train<T>(netcfg, tcfg, train_set, provider);
      auto rep = evaluate(netcfg, trained.params, trained.stats, val_set);
      AblationResult r{name, seed, rep.mae, rep.rmse};
      if (on_result) on_result(r);
      results.push_back(std::move(r));
    }
  }
  return results;
}

inline void write_ablation_csvs(const std::filesystem::path& dir,
                                const std::vector<AblationResult>& results) {
  std::filesystem::create_directories(dir);
  std::ofstream detail(dir / "ablation_seeds.csv");
  detail << "row_name,seed,mae,rmse\n";
  std::vector<std::string> row_order;
  std::map<std::string, std::vector<const AblationResult*>> by_row;
  for (const auto& r : results) {
    detail << '"' << r.row << "\"," << r.seed << "," << r.mae << "," << r.rmse << "\n";
    if (!by_row.count(r.row)) row_order.push_back(r.row);
    by_row[r.row].push_back(&r);
  }
  std::ofstream agg(dir / "ablation.csv");
  agg << "row_name,mean_mae,mean_rmse,std\n";
  for (const auto& name : row_order) {
    const auto& rs = by_row[name];
    double m = 0, q = 0, rm = 0;
    for (const auto* r : rs) {
      m += r->mae;
      rm += r->rmse;
    }
    m /= static_cast<double>(rs.size());
    rm /= static_cast<double>(rs.size());
    for (const auto* r : rs) q += (r->mae - m) * (r->mae - m);
    const double sd = rs.size() > 1 ? std::sqrt(q / static_cast<double>(rs.size() - 1)) : 0.0;
    agg << '"' << name << "\"," << m << "," << rm << "," << sd << "\n";
  }
}

// --- embedding export -----------------------------------------------------

// Flattened tap features at one level, one row per clip, plus the clips'
// ground-truth steering angles (last frame) as a CSV column.
template <class T>
void export_embeddings(const MainNetConfig& netcfg, const ParamStore<T>& params,
                       const std::vector<Clip>& clips, const std::string& level,
                       const std::filesystem::path& out_prefix) {
  if (level != "low" && level != "middle" && level != "high")
    throw ConfigError("export_embeddings: unknown level " + level);
  if (clips.empty()) throw UsageError("export_embeddings: empty dataset");
  MainNet<T> net(netcfg);
  Tensor<T> matrix;
  std::vector<double> angles;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    auto out = net.forward(params, clips[i].frames.template cast<T>(), VehicleState{});
    const Tensor<T>& tap = out.taps.at(level);
    if (i == 0) matrix = Tensor<T>({clips.size(), tap.numel()});
    std::copy(tap.data.begin(), tap.data.end(), matrix.data.begin() + i * tap.numel());
    angles.push_back(clips[i].states.back().angle);
  }
  write_tensor(out_prefix.string() + "_features", matrix);
  std::ofstream csv(out_prefix.string() + "_angles.csv");
  csv << "clip,angle\n";
  csv.precision(17);
  for (std::size_t i = 0; i < angles.size(); ++i) csv << i << "," << angles[i] << "\n";
}

}  // namespace fmnet

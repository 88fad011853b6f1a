#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "fmnet/auxnet.hpp"
#include "fmnet/clip.hpp"
#include "fmnet/config.hpp"
#include "fmnet/data.hpp"
#include "fmnet/errors.hpp"
#include "fmnet/io.hpp"
#include "fmnet/losses.hpp"
#include "fmnet/mainnet.hpp"
#include "fmnet/tape.hpp"

namespace fmnet {

// --- checkpointing ------------------------------------------------------

template <class T>
void save_checkpoint(const std::filesystem::path& dir, const ParamStore<T>& params,
                     const MainNetConfig& netcfg, const NormStats& stats,
                     const TrainConfig& tcfg) {
  std::filesystem::create_directories(dir / "params");
  nlohmann::json shapes = nlohmann::json::object();
  for (const auto& [name, t] : params.params) {
    write_tensor(dir / "params" / name, t);
    shapes[name] = t.shape;
  }
  nlohmann::json m{{"net_config", netcfg},
                   {"norm_stats", stats},
                   {"train_config", tcfg},
                   {"optimizer", "sgd-momentum"},
                   {"params", shapes}};
  std::ofstream f(dir / "manifest.json");
  f << m.dump(2) << "\n";
}

template <class T>
struct Checkpoint {
  ParamStore<T> params;
  MainNetConfig net_config;
  NormStats stats;
  TrainConfig train_config;
};

template <class T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.json");
  if (!f) throw DataError("missing checkpoint manifest: " + (dir / "manifest.json").string());
  nlohmann::json m = nlohmann::json::parse(f);
  Checkpoint<T> ck;
  ck.net_config = m.at("net_config").get<MainNetConfig>();
  ck.stats = m.at("norm_stats").get<NormStats>();
  if (m.contains("train_config")) ck.train_config = m.at("train_config").get<TrainConfig>();
  for (const auto& [name, shape] : m.at("params").items()) {
    Tensor<T> t = read_tensor<T>(dir / "params" / name);
    if (t.shape != shape.template get<Shape>())
      throw DataError("checkpoint param " + name + " shape mismatch");
    ck.params.add(name, std::move(t));
  }
  return ck;
}

// --- optimizer ----------------------------------------------------------

// SGD with momentum: v = mu*v + g; p -= lr*v. Applied in the canonical
// (name-ordered) parameter order. Returns false when any gradient is
// non-finite; the step is then aborted with parameters untouched.
template <class T>
bool optimizer_step(ParamStore<T>& params, const GradientMap<T>& grads,
                    std::map<std::string, Tensor<T>>& velocity, double lr, double momentum) {
  for (const auto& [name, g] : grads)
    if (!g.all_finite()) return false;
  for (const auto& [name, g] : grads) {
    Tensor<T>& p = params.at(name);
    auto [it, inserted] = velocity.try_emplace(name, Tensor<T>(g.shape));
    Tensor<T>& v = it->second;
    const T mu = static_cast<T>(momentum), step = static_cast<T>(lr);
    for (std::size_t i = 0; i < p.numel(); ++i) {
      v[i] = mu * v[i] + g[i];
      p[i] -= step * v[i];
    }
  }
  return true;
}

// --- training -----------------------------------------------------------

struct TrainLogRow {
  std::size_t step = 0;
  std::size_t episode = 0;
  int stage = 1;
  double lr = 0;
  LossBreakdown loss;
};

template <class T>
struct TrainOutput {
  ParamStore<T> params;
  NormStats stats;
  std::vector<TrainLogRow> log;
  std::size_t skipped_steps = 0;
};

namespace detail {

template <class T>
typename Tape<T>::Ref pack_scalars(Tape<T>& tape, const std::vector<typename Tape<T>::Ref>& xs) {
  auto acc = xs.front();
  for (std::size_t i = 1; i < xs.size(); ++i) acc = tape.concat(acc, xs[i]);
  return acc;
}

inline void write_metrics_header(std::ofstream& f, const std::vector<MimicPath>& paths) {
  f << "step,episode,stage,lr,steer,multi_speed,multi_torque";
  for (const auto& p : paths) f << ",mimic_" << p.key();
  f << ",total\n";
}

inline void write_metrics_row(std::ofstream& f, const TrainLogRow& r, std::size_t n_paths) {
  f << r.step << "," << r.episode << "," << r.stage << "," << r.lr << "," << r.loss.steer;
  for (std::size_t i = 0; i < 2; ++i)
    f << "," << (i < r.loss.multi.size() ? r.loss.multi[i] : 0.0);
  for (std::size_t i = 0; i < n_paths; ++i)
    f << "," << (i < r.loss.mimic.size() ? r.loss.mimic[i] : 0.0);
  f << "," << r.loss.total << "\n";
}

}  // namespace detail

// Two-stage optimization of the three-term objective. Stage 1 (episodes
// 1..stage1_episodes) trains on steering + multi-task losses only; stage 2
// creates the Phi adapters and adds the mimicking term. Deterministic in
// (config, seed): batch order, initialization, and Phi creation all derive
// from the seed.
template <class T>
TrainOutput<T> train(const MainNetConfig& netcfg, const TrainConfig& tcfg,
                     const std::vector<Clip>& train_set, const AuxProvider* provider,
                     const std::filesystem::path* out_dir = nullptr) {
  netcfg.validate();
  tcfg.validate();
  if (train_set.empty()) throw UsageError("train: empty dataset");
  MainNet<T> net(netcfg);
  const auto& paths = tcfg.paths;
  const bool mimicking = !paths.empty();
  if (mimicking && !provider) throw ConfigError("train: mimic paths enabled but no provider");

  // Aux targets are deterministic per clip; resolve and transform through
  // Psi once, before step 1. A missing target fails here, not mid-run.
  std::vector<std::vector<Tensor<T>>> psi_targets(train_set.size());
  if (mimicking) {
    for (std::size_t i = 0; i < train_set.size(); ++i) {
      psi_targets[i].reserve(paths.size());
      for (const auto& p : paths) {
        Tensor<float> f = provider->provide(train_set[i], p);
        psi_targets[i].push_back(psi_apply(f, p).template cast<T>());
      }
    }
  }

  TrainOutput<T> out;
  out.stats = NormStats::compute(train_set);
  out.params = MainNet<T>::build(netcfg, tcfg.seed);
  std::map<std::string, Tensor<T>> velocity;

  std::ofstream metrics;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    metrics.open(*out_dir / "metrics.csv");
    detail::write_metrics_header(metrics, paths);
  }

  std::map<std::string, std::size_t> tap_channels;
  for (const auto& lvl : kLevels) tap_channels[lvl] = netcfg.block_widths[netcfg.tap_points.at(lvl)];

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;
  bool phi_created = false;

  for (std::size_t episode = 1; episode <= tcfg.episodes; ++episode) {
    const int stage = episode <= tcfg.stage1_episodes ? 1 : 2;
    const double lr = lr_at(tcfg, episode);
    if (stage == 2 && mimicking && !phi_created) {
      // Phi adapters come to life at the stage boundary with a fresh
      // seeded init; stage-1 checkpoints therefore cannot contain them.
      add_phi_params(out.params, paths, tap_channels, tcfg.seed ^ 0x9e3779b97f4a7c15ULL);
      phi_created = true;
    }
    std::mt19937_64 shuffle_rng(tcfg.seed * 0x100000001b3ULL + episode);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    for (std::size_t start = 0; start < order.size(); start += tcfg.batch_size) {
      const std::size_t bsz = std::min(tcfg.batch_size, order.size() - start);
      Tape<T> tape;
      auto pr = MainNet<T>::register_params(tape, out.params);
      std::vector<typename Tape<T>::Ref> angle_p, speed_p, torque_p;
      std::vector<T> angle_g, speed_g, torque_g;
      std::vector<typename Tape<T>::Ref> mimic_terms(paths.size(),
                                                     typename Tape<T>::Ref{0});
      std::vector<bool> mimic_init(paths.size(), false);
      Tensor<T> zeros3({3});
      Tensor<T> zh({netcfg.lstm_hidden});
      for (std::size_t b = 0; b < bsz; ++b) {
        const std::size_t ci = order[start + b];
        const Clip& clip = train_set[ci];
        auto clip_ref = tape.constant(clip.frames.template cast<T>());
        auto g = net.build_graph(tape, pr, clip_ref, tape.constant(zeros3), tape.constant(zh),
                                 tape.constant(zh));
        for (std::size_t t = 0; t < netcfg.clip_len; ++t) {
          angle_p.push_back(g.preds[t][0]);
          speed_p.push_back(g.preds[t][1]);
          torque_p.push_back(g.preds[t][2]);
          angle_g.push_back(static_cast<T>(out.stats.norm(0, clip.states[t].angle)));
          speed_g.push_back(static_cast<T>(out.stats.norm(1, clip.states[t].speed)));
          torque_g.push_back(static_cast<T>(out.stats.norm(2, clip.states[t].torque)));
        }
        if (stage == 2 && mimicking) {
          for (std::size_t pi = 0; pi < paths.size(); ++pi) {
            auto phi_out = phi_transform(tape, g.taps.at(paths[pi].level),
                                         pr.at(phi_param_name(paths[pi])), paths[pi]);
            auto term = tape.mse(phi_out, tape.constant(psi_targets[ci][pi]));
            mimic_terms[pi] = mimic_init[pi] ? tape.add(mimic_terms[pi], term) : term;
            mimic_init[pi] = true;
          }
        }
      }
      const std::size_t nf = bsz * netcfg.clip_len;
      auto steer = steering_loss(tape, detail::pack_scalars(tape, angle_p),
                                 tape.constant(Tensor<T>({nf}, angle_g)));
      auto multi = multi_task_loss<T>(
          tape,
          {detail::pack_scalars(tape, speed_p), detail::pack_scalars(tape, torque_p)},
          {tape.constant(Tensor<T>({nf}, speed_g)), tape.constant(Tensor<T>({nf}, torque_g))},
          tcfg.weights.alpha);
      auto mimic_weighted = tape.constant(Tensor<T>({1}));
      LossBreakdown bd;
      bd.multi_names = {"speed", "torque"};
      for (auto r : multi.raw) bd.multi.push_back(static_cast<double>(tape.scalar(r)));
      if (stage == 2 && mimicking) {
        for (std::size_t pi = 0; pi < paths.size(); ++pi) {
          auto raw = tape.scale(mimic_terms[pi], T(1) / static_cast<T>(bsz));
          bd.mimic_names.push_back(paths[pi].key());
          bd.mimic.push_back(static_cast<double>(tape.scalar(raw)));
          mimic_weighted = tape.add(
              mimic_weighted, tape.scale(raw, static_cast<T>(paths[pi].beta)));
        }
      } else {
        for (const auto& p : paths) {
          bd.mimic_names.push_back(p.key());
          bd.mimic.push_back(0.0);
        }
      }
      auto total = total_loss(tape, steer, multi.weighted, mimic_weighted);
      bd.steer = static_cast<double>(tape.scalar(steer));
      bd.total = static_cast<double>(tape.scalar(total));

      GradientMap<T> grads = tape.backward(total);
      if (!optimizer_step(out.params, grads, velocity, lr, tcfg.momentum)) {
        ++out.skipped_steps;
        std::cerr << "[train] non-finite gradient at step " << step + 1 << ", step skipped\n";
      }
      ++step;
      TrainLogRow row{step, episode, stage, lr, bd};
      if (metrics.is_open()) detail::write_metrics_row(metrics, row, paths.size());
      out.log.push_back(std::move(row));
    }
    if (out_dir && episode == tcfg.stage1_episodes)
      save_checkpoint(*out_dir / "checkpoint_stage1", out.params, netcfg, out.stats, tcfg);
  }
  if (out_dir) save_checkpoint(*out_dir / "checkpoint_final", out.params, netcfg, out.stats, tcfg);
  return out;
}

}  // namespace fmnet

#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "fmnet/clip.hpp"
#include "fmnet/errors.hpp"
#include "fmnet/io.hpp"
#include "fmnet/tape.hpp"

namespace fmnet {

// One (auxiliary network, level) pairing between a main-network tap and an
// auxiliary feature layer, with its own target dimensions.
struct MimicPath {
  std::string aux_id;  // e.g. "pspnet", "flownet"
  std::string level;   // low / middle / high
  std::size_t target_h = 1, target_w = 1, target_c = 1;
  double beta = 0.2;

  void validate() const {
    if (target_h < 1 || target_w < 1 || target_c < 1)
      throw ConfigError("mimic path " + key() + ": target dims must be >= 1");
    if (beta < 0) throw ConfigError("mimic path " + key() + ": beta must be >= 0");
    if (level != "low" && level != "middle" && level != "high")
      throw ConfigError("mimic path " + key() + ": unknown level " + level);
  }

  // file-safe identifier, also the fixture name suffix: aux_<key>
  std::string key() const { return aux_id + "_" + level; }

  // Table-style short code, e.g. "PH" for pspnet/high.
  std::string short_code() const {
    const char a = aux_id.empty() ? 'A' : static_cast<char>(std::toupper(aux_id[0]));
    const char l = level == "low" ? 'L' : level == "middle" ? 'M' : 'H';
    return std::string{a, l};
  }
};

// Published transformation-layer output dimensions, per dataset.
inline std::vector<MimicPath> paths_preset(const std::string& name) {
  auto mk = [](const char* aux, const char* lvl, std::size_t h, std::size_t w, std::size_t c) {
    return MimicPath{aux, lvl, h, w, c, 0.2};
  };
  if (name == "udacity")
    return {mk("flownet", "low", 32, 40, 16),  mk("flownet", "middle", 8, 10, 32),
            mk("flownet", "high", 8, 10, 32),  mk("pspnet", "low", 30, 30, 16),
            mk("pspnet", "middle", 30, 30, 16), mk("pspnet", "high", 30, 30, 3)};
  if (name == "commaai")
    return {mk("flownet", "low", 12, 20, 32),  mk("flownet", "middle", 12, 20, 32),
            mk("flownet", "high", 3, 5, 64),   mk("pspnet", "low", 30, 30, 16),
            mk("pspnet", "middle", 30, 30, 16), mk("pspnet", "high", 30, 30, 3)};
  if (name == "desk")
    return {mk("flownet", "low", 8, 8, 2),  mk("flownet", "middle", 4, 4, 2),
            mk("flownet", "high", 2, 2, 2), mk("pspnet", "low", 8, 8, 3),
            mk("pspnet", "middle", 4, 4, 3), mk("pspnet", "high", 2, 2, 3)};
  throw ConfigError("unknown paths preset: " + name);
}

// Psi: deterministic, parameter-free auxiliary-side adapter. Channel-group
// average pooling to target_c channels, then bilinear resampling.
template <class T>
typename Tape<T>::Ref psi_transform(Tape<T>& tape, typename Tape<T>::Ref f,
                                    const MimicPath& path) {
  const Tensor<T>& fv = tape.val(f);
  if (fv.ndim() != 3) throw ConfigError("psi_transform expects HxWxC features");
  const std::size_t c = fv.shape[2];
  if (c % path.target_c != 0)
    throw ConfigError("psi_transform " + path.key() + ": channels " + std::to_string(c) +
                      " not divisible into " + std::to_string(path.target_c));
  auto pooled = tape.avg_pool_channels(f, c / path.target_c);
  return tape.resample(pooled, path.target_h, path.target_w, ResampleMode::Bilinear);
}

template <class T>
Tensor<T> psi_apply(const Tensor<T>& f, const MimicPath& path) {
  Tape<T> tape;
  return tape.val(psi_transform(tape, tape.constant(f), path));
}

// Phi: learned main-side adapter. 1x1 convolution to target_c channels,
// then bilinear resampling; parameters train jointly with the main network.
inline std::string phi_param_name(const MimicPath& path) { return "phi." + path.key() + ".w"; }

template <class T>
typename Tape<T>::Ref phi_transform(Tape<T>& tape, typename Tape<T>::Ref e,
                                    typename Tape<T>::Ref w, const MimicPath& path) {
  const Tensor<T>& ev = tape.val(e);
  const Tensor<T>& wv = tape.val(w);
  if (ev.ndim() != 3) throw ConfigError("phi_transform expects HxWxC features");
  if (wv.ndim() != 4 || wv.shape[0] != 1 || wv.shape[1] != 1 || wv.shape[2] != ev.shape[2] ||
      wv.shape[3] != path.target_c)
    throw ConfigError("phi_transform " + path.key() + ": weight dims " + shape_str(wv.shape) +
                      " do not fit features " + shape_str(ev.shape));
  auto projected = tape.conv2d(e, w, 1, 0);
  return tape.resample(projected, path.target_h, path.target_w, ResampleMode::Bilinear);
}

// Fresh Phi parameters for the enabled paths; tap_channels maps level to
// the channel count of the corresponding tap.
template <class T>
void add_phi_params(ParamStore<T>& ps, const std::vector<MimicPath>& paths,
                    const std::map<std::string, std::size_t>& tap_channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const auto& p : paths) {
    const std::size_t cin = tap_channels.at(p.level);
    Tensor<T> w({1, 1, cin, p.target_c});
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin));
    std::uniform_real_distribution<double> d(-bound, bound);
    for (T& v : w.data) v = static_cast<T>(d(rng));
    ps.add(phi_param_name(p), std::move(w));
  }
}

// --- feature providers -----------------------------------------------

// Stand-ins for the off-the-shelf auxiliary networks. Output dims are
// fixed per path; outputs never receive gradients.
class AuxProvider {
 public:
  virtual ~AuxProvider() = default;
  virtual Tensor<float> provide(const Clip& clip, const MimicPath& path) const = 0;
  virtual std::string kind() const = 0;
};

// Reads precomputed features from the clip's sidecar tensors (loaded from
// aux_<key> container files).
class FixtureProvider : public AuxProvider {
 public:
  Tensor<float> provide(const Clip& clip, const MimicPath& path) const override {
    auto it = clip.aux_targets.find(path.key());
    if (it == clip.aux_targets.end())
      throw DataError("clip " + clip.clip_id + ": missing fixture aux_" + path.key());
    return it->second;
  }
  std::string kind() const override { return "fixture"; }
};

// A small fixed-seed CNN over the time-averaged clip; its parameters are
// frozen constants and never appear in any GradientMap.
class FrozenRandomProvider : public AuxProvider {
 public:
  explicit FrozenRandomProvider(std::uint64_t seed = 0x5eedf00d) : seed_(seed) {}

  Tensor<float> provide(const Clip& clip, const MimicPath& path) const override {
    const std::size_t co = 2 * path.target_c;  // pooled by Psi with group 2
    Tape<float> tape;
    auto frames = tape.constant(clip.frames);
    auto mean_frame = tape.time_mean(frames);
    std::mt19937_64 rng(seed_ ^ std::hash<std::string>{}(path.key()));
    auto kernel = [&](std::size_t k, std::size_t ci, std::size_t cout) {
      Tensor<float> t({k, k, ci, cout});
      const double bound = 1.0 / std::sqrt(static_cast<double>(k * k * ci));
      std::uniform_real_distribution<double> d(-bound, bound);
      for (float& v : t.data) v = static_cast<float>(d(rng));
      return tape.constant(t);
    };
    auto x = tape.relu(tape.conv2d(mean_frame, kernel(3, 3, co), 2, 1));
    x = tape.conv2d(x, kernel(3, co, co), 2, 1);
    return tape.val(x);
  }
  std::string kind() const override { return "frozen-random"; }

 private:
  std::uint64_t seed_;
};

}  // namespace fmnet

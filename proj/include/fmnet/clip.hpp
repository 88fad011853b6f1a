#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fmnet/errors.hpp"
#include "fmnet/tensor.hpp"

namespace fmnet {

struct VehicleStateSample {
  double angle = 0;   // rad
  double speed = 0;   // m/s
  double torque = 0;  // N*m
};

// One training sample: N frames in [-1, 1], per-frame ground-truth vehicle
// states, and per-path auxiliary feature targets.
struct Clip {
  Tensor<float> frames;  // N x H x W x 3
  std::vector<VehicleStateSample> states;
  std::map<std::string, Tensor<float>> aux_targets;  // path key -> f_jk
  std::string clip_id;
  std::uint64_t seed = 0;
};

// z-score statistics for (angle, speed, torque); stored in checkpoints so
// losses see comparable scales across the mixed units.
struct NormStats {
  std::array<double, 3> mean{0, 0, 0};
  std::array<double, 3> stdev{1, 1, 1};

  static NormStats compute(const std::vector<Clip>& clips) {
    NormStats s;
    std::array<double, 3> sum{0, 0, 0}, sq{0, 0, 0};
    std::size_t n = 0;
    for (const auto& c : clips)
      for (const auto& st : c.states) {
        const std::array<double, 3> v{st.angle, st.speed, st.torque};
        for (int i = 0; i < 3; ++i) {
          sum[i] += v[i];
          sq[i] += v[i] * v[i];
        }
        ++n;
      }
    if (n == 0) throw UsageError("NormStats: empty dataset");
    for (int i = 0; i < 3; ++i) {
      s.mean[i] = sum[i] / static_cast<double>(n);
      const double var = sq[i] / static_cast<double>(n) - s.mean[i] * s.mean[i];
      s.stdev[i] = var > 1e-12 ? std::sqrt(var) : 1.0;
    }
    return s;
  }

  double norm(int idx, double v) const { return (v - mean[idx]) / stdev[idx]; }
  double denorm(int idx, double v) const { return v * stdev[idx] + mean[idx]; }
};

}  // namespace fmnet

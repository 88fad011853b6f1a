#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>

#include "fmnet/io.hpp"
#include "fmnet/tape.hpp"
#include "fmnet/tensor.hpp"

namespace fmtest {

using fmnet::ParamStore;
using fmnet::Shape;
using fmnet::Tape;
using fmnet::Tensor;

inline Tensor<double> rand_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                  double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (double& v : t.data) v = d(rng);
  return t;
}

inline Tensor<float> rand_tensor_f(Shape shape, std::mt19937_64& rng, float lo = -1.f,
                                   float hi = 1.f) {
  Tensor<float> t(std::move(shape));
  std::uniform_real_distribution<float> d(lo, hi);
  for (float& v : t.data) v = d(rng);
  return t;
}

using RefMap = std::map<std::string, Tape<double>::Ref>;
// Builds a scalar loss from the registered parameters.
using GraphBuilder = std::function<Tape<double>::Ref(Tape<double>&, const RefMap&)>;

inline double eval_loss(const ParamStore<double>& ps, const GraphBuilder& build) {
  Tape<double> tape;
  RefMap refs;
  for (const auto& [name, t] : ps.params) refs.emplace(name, tape.param(name, t));
  return tape.scalar(build(tape, refs));
}

// Central finite differences against reverse-mode gradients; returns the
// worst relative error over every element of every parameter.
inline double max_grad_rel_err(const ParamStore<double>& ps, const GraphBuilder& build,
                               double eps = 1e-6) {
  Tape<double> tape;
  RefMap refs;
  for (const auto& [name, t] : ps.params) refs.emplace(name, tape.param(name, t));
  auto grads = tape.backward(build(tape, refs));
  double worst = 0;
  for (const auto& [name, g] : grads) {
    ParamStore<double> probe;
    for (const auto& [n2, t2] : ps.params) probe.add(n2, t2);
    Tensor<double>& pt = probe.at(name);
    for (std::size_t i = 0; i < pt.numel(); ++i) {
      const double orig = pt[i];
      pt[i] = orig + eps;
      const double lp = eval_loss(probe, build);
      pt[i] = orig - eps;
      const double lm = eval_loss(probe, build);
      pt[i] = orig;
      const double fd = (lp - lm) / (2 * eps);
      const double err = std::abs(fd - g[i]) / std::max({1.0, std::abs(fd), std::abs(g[i])});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace fmtest

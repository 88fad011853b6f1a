#pragma once

#include <map>
#include <string>
#include <vector>

#include "fmnet/errors.hpp"
#include "fmnet/tape.hpp"

namespace fmnet {

struct LossWeights {
  std::vector<double> alpha{1.0, 1.0};        // one per extra task (speed, torque)
  std::map<std::string, double> beta;          // aux network id -> weight, default 0.2

  double beta_of(const std::string& aux_id) const {
    auto it = beta.find(aux_id);
    return it == beta.end() ? 0.2 : it->second;
  }
  void validate() const {
    for (double a : alpha)
      if (a < 0) throw ConfigError("loss weights: alpha must be >= 0");
    for (const auto& [k, b] : beta)
      if (b < 0) throw ConfigError("loss weights: beta for " + k + " must be >= 0");
  }
};

// Scalar decomposition of one batch loss. `multi` and `mimic` hold the raw
// (unweighted) per-task / per-path mean squared errors.
struct LossBreakdown {
  double steer = 0;
  std::vector<std::string> multi_names;
  std::vector<double> multi;
  std::vector<std::string> mimic_names;
  std::vector<double> mimic;
  double total = 0;

  // total = steer + sum alpha_l * multi_l + sum beta_k * mimic_jk
  double recompose(const std::vector<double>& alpha, const std::vector<double>& beta_per_path) const {
    double t = steer;
    for (std::size_t i = 0; i < multi.size(); ++i) t += alpha[i] * multi[i];
    for (std::size_t i = 0; i < mimic.size(); ++i) t += beta_per_path[i] * mimic[i];
    return t;
  }
};

// All loss terms are mean (not sum) squared errors so that the single
// per-network beta stays comparable across paths of different sizes.
template <class T>
typename Tape<T>::Ref steering_loss(Tape<T>& tape, typename Tape<T>::Ref pred,
                                    typename Tape<T>::Ref gt) {
  if (tape.val(pred).numel() == 0) throw UsageError("steering_loss: empty batch");
  return tape.mse(pred, gt);
}

template <class T>
struct WeightedTerms {
  std::vector<typename Tape<T>::Ref> raw;
  typename Tape<T>::Ref weighted;
};

template <class T>
WeightedTerms<T> multi_task_loss(Tape<T>& tape, const std::vector<typename Tape<T>::Ref>& preds,
                                 const std::vector<typename Tape<T>::Ref>& gts,
                                 const std::vector<double>& alpha) {
  if (preds.size() != gts.size() || preds.size() != alpha.size())
    throw ConfigError("multi_task_loss: task/weight count mismatch");
  WeightedTerms<T> out;
  out.weighted = tape.constant(Tensor<T>({1}));
  for (std::size_t l = 0; l < preds.size(); ++l) {
    auto raw = tape.mse(preds[l], gts[l]);
    out.raw.push_back(raw);
    out.weighted = tape.add(out.weighted, tape.scale(raw, static_cast<T>(alpha[l])));
  }
  return out;
}

template <class T>
WeightedTerms<T> mimic_loss(Tape<T>& tape, const std::vector<typename Tape<T>::Ref>& phi_outputs,
                            const std::vector<typename Tape<T>::Ref>& psi_outputs,
                            const std::vector<double>& beta_per_path) {
  if (phi_outputs.size() != psi_outputs.size() || phi_outputs.size() != beta_per_path.size())
    throw ConfigError("mimic_loss: path count mismatch");
  WeightedTerms<T> out;
  out.weighted = tape.constant(Tensor<T>({1}));
  for (std::size_t p = 0; p < phi_outputs.size(); ++p) {
    if (!tape.val(phi_outputs[p]).same_shape(tape.val(psi_outputs[p])))
      throw ConfigError("mimic_loss: path " + std::to_string(p) + " dim mismatch " +
                        shape_str(tape.val(phi_outputs[p]).shape) + " vs " +
                        shape_str(tape.val(psi_outputs[p]).shape));
    auto raw = tape.mse(phi_outputs[p], psi_outputs[p]);
    out.raw.push_back(raw);
    out.weighted = tape.add(out.weighted, tape.scale(raw, static_cast<T>(beta_per_path[p])));
  }
  return out;
}

template <class T>
typename Tape<T>::Ref total_loss(Tape<T>& tape, typename Tape<T>::Ref steer,
                                 typename Tape<T>::Ref multi_weighted,
                                 typename Tape<T>::Ref mimic_weighted) {
  return tape.add(tape.add(steer, multi_weighted), mimic_weighted);
}

}  // namespace fmnet

#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "dseb/tensor.hpp"

namespace dseb {

/// Named parameter collection. std::map keeps iteration order stable, which
/// checkpoint serialization and deterministic training rely on.
using ParamSet = std::map<std::string, Tensor>;
using GradSet = std::map<std::string, Tensor>;

/// Adam with bias correction. One state owns the moments for a whole
/// ParamSet; step_count advances once per call.
struct AdamState {
  long step_count = 0;
  std::map<std::string, Tensor> first_moment;
  std::map<std::string, Tensor> second_moment;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

inline void adam_step(ParamSet& params, const GradSet& grads,
                      AdamState& state) {
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (auto& [name, theta] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor& g = git->second;
    if (!g.same_shape(theta)) {
      throw std::invalid_argument("adam_step: gradient shape " +
                                  g.shape_string() + " does not match " +
                                  name + " " + theta.shape_string());
    }
    Tensor& m = state.first_moment.try_emplace(name, Tensor::zeros_like(theta))
                    .first->second;
    Tensor& v = state.second_moment.try_emplace(name, Tensor::zeros_like(theta))
                    .first->second;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

/// Scale all gradients so the global L2 norm is at most max_norm.
/// max_norm <= 0 disables clipping.
inline void clip_gradients(GradSet& grads, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (double x : g.raw()) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const double factor = max_norm / norm;
  for (auto& [name, g] : grads)
    for (double& x : g.raw()) x *= factor;
}

}  // namespace dseb

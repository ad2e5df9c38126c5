#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "oampsa/error.hpp"
#include "oampsa/neural/params.hpp"

namespace oampsa::neural {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::int64_t step = 0;
  std::vector<RealMatrix> m;
  std::vector<RealMatrix> v;

  bool initialized_for(const ParamList& params) const {
    if (m.size() != params.size() || v.size() != params.size()) return false;
    for (std::size_t i = 0; i < params.size(); ++i)
      if (m[i].rows() != params[i].value.rows() || m[i].cols() != params[i].value.cols()) return false;
    return true;
  }
};

/// One bias-corrected Adam update, in place.
inline void adam_step(AdamState& state, ParamList& params, const std::vector<RealMatrix>& grads, double lr,
                      const AdamConfig& cfg = {}) {
  if (grads.size() != params.size()) throw DimensionError("adam_step: gradient count != parameter count");
  if (state.step == 0 && !state.initialized_for(params)) {
    state.m.clear();
    state.v.clear();
    for (const auto& p : params) {
      state.m.push_back(RealMatrix::Zero(p.value.rows(), p.value.cols()));
      state.v.push_back(RealMatrix::Zero(p.value.rows(), p.value.cols()));
    }
  }
  if (!state.initialized_for(params)) throw DimensionError("adam_step: optimizer state does not match parameters");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(cfg.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const RealMatrix& g = grads[i];
    if (g.rows() != params[i].value.rows() || g.cols() != params[i].value.cols()) {
      throw DimensionError("adam_step: gradient shape for '" + params[i].name + "'");
    }
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    const auto m_hat = state.m[i].array() / bias1;
    const auto v_hat = state.v[i].array() / bias2;
    params[i].value.array() -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
  }
}

}  // namespace oampsa::neural

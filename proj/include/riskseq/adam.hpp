#ifndef RISKSEQ_ADAM_HPP
#define RISKSEQ_ADAM_HPP

#include <cmath>
#include <map>
#include <string>

#include "riskseq/error.hpp"
#include "riskseq/tensor.hpp"

namespace riskseq {

/// Named parameter tensors. Ordered by name so every sweep is deterministic.
using ParameterMap = std::map<std::string, Tensor>;

/// Which parameters receive the L2 penalty.
enum class L2Scope { weights_and_embeddings, all, none };

inline bool is_bias_name(const std::string& name) {
  return name.size() >= 2 && name.compare(name.size() - 2, 2, ".b") == 0;
}

inline bool l2_applies(L2Scope scope, const std::string& name) {
  switch (scope) {
    case L2Scope::all: return true;
    case L2Scope::none: return false;
    default: return !is_bias_name(name);
  }
}

struct AdamConfig {
  double lr = 0.001;
  double l2 = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  L2Scope l2_scope = L2Scope::weights_and_embeddings;
};

struct AdamState {
  ParameterMap first_moment;
  ParameterMap second_moment;
  long step = 0;
};

// Classic coupled L2: l2 * theta is added to the gradient before the moment
// updates, then the usual bias-corrected Adam step is taken.
inline void adam_step(ParameterMap& params, const ParameterMap& grads, AdamState& state,
                      const AdamConfig& cfg) {
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (auto& [name, theta] : params) {
    auto git = grads.find(name);
    const Tensor* g = git == grads.end() ? nullptr : &git->second;
    if (g && g->shape() != theta.shape()) {
      throw NumericError("adam_step: gradient shape " + shape_string(g->shape()) +
                         " does not match parameter " + name + " " + shape_string(theta.shape()));
    }
    Tensor& m = state.first_moment.try_emplace(name, theta.shape()).first->second;
    Tensor& v = state.second_moment.try_emplace(name, theta.shape()).first->second;
    const double decay = l2_applies(cfg.l2_scope, name) ? cfg.l2 : 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = (g ? (*g)[i] : 0.0) + decay * theta[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      theta[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
  }
}

}  // namespace riskseq

#endif  // RISKSEQ_ADAM_HPP

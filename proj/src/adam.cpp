#include "soar/adam.hpp"

#include <cmath>

namespace soar {

AdamState AdamState::zeros_like(const ParamSet& params) {
  return AdamState{MomentSet::zeros_like(params), MomentSet::zeros_like(params), 0};
}

void adam_step(ParamSet& params, const GradSet& grads, AdamState& state, const AdamHyper& hyper) {
  if (!params.same_layout(grads) || !params.same_layout(state.m) || !params.same_layout(state.v))
    throw ContractViolation("adam_step: parameter, gradient and moment layouts differ");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(hyper.beta1, t);
  const double correction2 = 1.0 - std::pow(hyper.beta2, t);

  auto g_it = grads.begin();
  auto m_it = state.m.begin();
  auto v_it = state.v.begin();
  for (auto p_it = params.begin(); p_it != params.end(); ++p_it, ++g_it, ++m_it, ++v_it) {
    auto& p = p_it->second.values;
    const auto& g = g_it->second.values;
    auto& m = m_it->second.values;
    auto& v = v_it->second.values;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
      v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p[i] -= hyper.lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
    }
  }
}

}  // namespace soar

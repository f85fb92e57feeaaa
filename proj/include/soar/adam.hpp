#pragma once

#include <cstdint>

#include "soar/numerics.hpp"

namespace soar {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment buffers and the number of updates applied so far.
struct AdamState {
  MomentSet m;
  MomentSet v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const ParamSet& params);
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam update. Advances state.step before use, so the
/// first call runs with step index 1.
void adam_step(ParamSet& params, const GradSet& grads, AdamState& state, const AdamHyper& hyper);

}  // namespace soar

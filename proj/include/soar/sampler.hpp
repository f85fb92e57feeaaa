#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "soar/flow.hpp"
#include "soar/model.hpp"
#include "soar/numerics.hpp"

namespace soar {

struct CfgParams {
  double scale = 1.0;
};

/// Noise scale of the stochastic one-step operator, eta in [0, 1].
struct SdeParams {
  double eta = 0.0;
};

/// (1 - w) v_uncond + w v_cond, which equals v_uncond + w (v_cond - v_uncond)
/// and collapses exactly to v_uncond at w = 0 and v_cond at w = 1.
Vector combine_cfg(const Vector& v_cond, const Vector& v_uncond, double scale);

/// Guided velocity at (z, cond, t). Callers treat the result as a constant:
/// no gradient is ever propagated through it.
Vector cfg_velocity(const VelocityField& field, const Vector& z, Condition cond, double t, const CfgParams& cfg);
std::vector<Vector> cfg_velocity_batch(const VelocityField& field, std::span<const Vector> z,
                                       std::span<const Condition> cond, std::span<const double> t,
                                       const CfgParams& cfg);

/// z + (sigma_to - sigma_from) v.
Vector euler_step(const Vector& z, const Vector& v, double sigma_from, double sigma_to);

/// Stochastic step that keeps the implied data/noise decomposition.
/// With x0 = z - sigma_from v and x1 = z + (1 - sigma_from) v, returns
///   (1 - sigma_to) x0 + sigma_to (sqrt(1 - eta^2) x1 + eta eps),  eps ~ N(0, I).
/// Evaluated as euler_step(...) + sigma_to ((sqrt(1 - eta^2) - 1) x1 + eta eps),
/// which is the same expression and makes eta = 0 reproduce the Euler step
/// bit for bit. One Gaussian vector is drawn from `rng` for every call.
Vector sde_step(const Vector& z, const Vector& v, double sigma_from, double sigma_to, const SdeParams& sde, Rng& rng,
                double sigma_min = kDefaultSigmaMin);

struct TrajectoryPoint {
  double t = 0.0;
  double sigma = 0.0;
  Vector state;
};

/// States visited by a rollout from t = 1 to t = 0, K + 1 entries.
struct Trajectory {
  std::vector<TrajectoryPoint> points;
  Condition cond;
  std::size_t steps = 0;

  [[nodiscard]] const Vector& start() const { return points.front().state; }
  [[nodiscard]] const Vector& endpoint() const { return points.back().state; }
};

/// Time of grid node k for a K-step rollout: (K - k) / K, exactly 0 at k = K.
double rollout_time(std::size_t k, std::size_t steps);

/// Integrates from z1 over K uniform time steps. When `sde` is set every step
/// uses sde_step with noise from `rng`; otherwise plain Euler.
Trajectory rollout(const VelocityField& field, const Vector& z1, Condition cond, std::size_t steps,
                   const CfgParams& cfg, const NoiseSchedule& schedule, std::optional<SdeParams> sde = std::nullopt,
                   Rng* rng = nullptr);

/// Batched rollouts; rollout j draws its SDE noise from rng.split(j), so the
/// result does not depend on batch composition.
std::vector<Trajectory> rollout_batch(const VelocityField& field, std::span<const Vector> z1,
                                      std::span<const Condition> cond, std::size_t steps, const CfgParams& cfg,
                                      const NoiseSchedule& schedule, std::optional<SdeParams> sde = std::nullopt,
                                      const Rng* rng = nullptr);

/// CSV with header step_index,t,sigma,x0,..,x{d-1}; trajectories follow each
/// other in blocks of K + 1 rows.
void write_trajectory_csv(std::ostream& out, std::span<const Trajectory> trajectories);

}  // namespace soar

#include "soar/sampler.hpp"

#include <cmath>
#include <iomanip>
#include <limits>

namespace soar {

Vector combine_cfg(const Vector& v_cond, const Vector& v_uncond, double scale) {
  require_same_dim(v_cond, v_uncond, "combine_cfg");
  Vector out(v_cond.dim());
  for (std::size_t i = 0; i < out.dim(); ++i) out[i] = (1.0 - scale) * v_uncond[i] + scale * v_cond[i];
  return out;
}

std::vector<Vector> cfg_velocity_batch(const VelocityField& field, std::span<const Vector> z,
                                       std::span<const Condition> cond, std::span<const double> t,
                                       const CfgParams& cfg) {
  if (!std::isfinite(cfg.scale)) throw ContractViolation("cfg scale must be finite");
  for (const auto& c : cond)
    if (!c) throw ContractViolation("cfg_velocity needs a real condition, got null");

  std::vector<Vector> v_cond = field.velocity_batch(z, cond, t);
  // (1 - 1) * v_uncond + v_cond == v_cond exactly, so the unconditional pass
  // can be skipped at scale 1.
  if (cfg.scale == 1.0) return v_cond;

  const std::vector<Condition> null_cond(z.size(), kNullCondition);
  const std::vector<Vector> v_uncond = field.velocity_batch(z, null_cond, t);
  for (std::size_t j = 0; j < z.size(); ++j) v_cond[j] = combine_cfg(v_cond[j], v_uncond[j], cfg.scale);
  return v_cond;
}

Vector cfg_velocity(const VelocityField& field, const Vector& z, Condition cond, double t, const CfgParams& cfg) {
  auto out = cfg_velocity_batch(field, std::span(&z, 1), std::span(&cond, 1), std::span(&t, 1), cfg);
  return std::move(out.front());
}

Vector euler_step(const Vector& z, const Vector& v, double sigma_from, double sigma_to) {
  require_same_dim(z, v, "euler_step");
  const double delta = sigma_to - sigma_from;
  Vector out(z.dim());
  for (std::size_t i = 0; i < out.dim(); ++i) out[i] = z[i] + delta * v[i];
  return out;
}

Vector sde_step(const Vector& z, const Vector& v, double sigma_from, double sigma_to, const SdeParams& sde, Rng& rng,
                double sigma_min) {
  if (!(sigma_from > sigma_min)) throw DomainError("sde_step: sigma_from must exceed sigma_min");
  if (!(sigma_to >= 0.0)) throw DomainError("sde_step: sigma_to must be nonnegative");
  if (!(sde.eta >= 0.0 && sde.eta <= 1.0)) throw DomainError("sde_step: eta must lie in [0, 1]");

  Vector out = euler_step(z, v, sigma_from, sigma_to);
  const Vector eps = gaussian(rng, z.dim());
  const double keep = std::sqrt(1.0 - sde.eta * sde.eta) - 1.0;
  for (std::size_t i = 0; i < out.dim(); ++i) {
    const double noise_endpoint = z[i] + (1.0 - sigma_from) * v[i];
    out[i] += sigma_to * (keep * noise_endpoint + sde.eta * eps[i]);
  }
  return out;
}

double rollout_time(std::size_t k, std::size_t steps) {
  if (k >= steps) return 0.0;
  return static_cast<double>(steps - k) / static_cast<double>(steps);
}

std::vector<Trajectory> rollout_batch(const VelocityField& field, std::span<const Vector> z1,
                                      std::span<const Condition> cond, std::size_t steps, const CfgParams& cfg,
                                      const NoiseSchedule& schedule, std::optional<SdeParams> sde, const Rng* rng) {
  if (steps == 0) throw ContractViolation("rollout needs at least one step");
  if (z1.size() != cond.size()) throw ContractViolation("rollout: z1 and condition counts differ");
  if (sde && !rng) throw ContractViolation("rollout: SDE stepping needs an rng");

  const std::size_t n = z1.size();
  std::vector<Rng> streams;
  if (sde) {
    streams.reserve(n);
    for (std::size_t j = 0; j < n; ++j) streams.push_back(rng->split(j));
  }

  std::vector<Trajectory> out(n);
  std::vector<Vector> state(z1.begin(), z1.end());
  for (std::size_t j = 0; j < n; ++j) {
    out[j].cond = cond[j];
    out[j].steps = steps;
    out[j].points.reserve(steps + 1);
    out[j].points.push_back({1.0, schedule.sigma(1.0), state[j]});
  }

  std::vector<double> t(n);
  for (std::size_t k = 0; k < steps; ++k) {
    const double t_from = rollout_time(k, steps);
    const double t_to = rollout_time(k + 1, steps);
    const double s_from = schedule.sigma(t_from);
    const double s_to = schedule.sigma(t_to);
    std::fill(t.begin(), t.end(), t_from);
    const std::vector<Vector> v = cfg_velocity_batch(field, state, cond, t, cfg);
    for (std::size_t j = 0; j < n; ++j) {
      state[j] = sde ? sde_step(state[j], v[j], s_from, s_to, *sde, streams[j]) : euler_step(state[j], v[j], s_from, s_to);
      out[j].points.push_back({t_to, s_to, state[j]});
    }
  }
  return out;
}

Trajectory rollout(const VelocityField& field, const Vector& z1, Condition cond, std::size_t steps,
                   const CfgParams& cfg, const NoiseSchedule& schedule, std::optional<SdeParams> sde, Rng* rng) {
  auto out = rollout_batch(field, std::span(&z1, 1), std::span(&cond, 1), steps, cfg, schedule, sde, rng);
  return std::move(out.front());
}

void write_trajectory_csv(std::ostream& out, std::span<const Trajectory> trajectories) {
  const std::size_t d = trajectories.empty() ? 0 : trajectories.front().start().dim();
  out << "step_index,t,sigma";
  for (std::size_t i = 0; i < d; ++i) out << ",x" << i;
  out << '\n';
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& traj : trajectories) {
    for (std::size_t k = 0; k < traj.points.size(); ++k) {
      const auto& p = traj.points[k];
      out << k << ',' << p.t << ',' << p.sigma;
      for (double x : p.state) out << ',' << x;
      out << '\n';
    }
  }
}

}  // namespace soar

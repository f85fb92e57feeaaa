#include "soar/flow.hpp"

#include <cmath>
#include <string>

namespace soar {

NoiseSchedule NoiseSchedule::shifted(double shift) {
  if (!(shift > 0.0) || !std::isfinite(shift)) throw ContractViolation("schedule shift must be positive");
  return NoiseSchedule{Kind::Shifted, shift};
}

double NoiseSchedule::sigma(double t) const {
  if (!(t >= 0.0 && t <= 1.0)) throw ContractViolation("sigma_of_t: t=" + std::to_string(t) + " outside [0, 1]");
  if (kind == Kind::Identity) return t;
  return shift * t / (1.0 + (shift - 1.0) * t);
}

double NoiseSchedule::time_of(double sigma) const {
  if (!(sigma >= 0.0 && sigma <= 1.0))
    throw ContractViolation("time_of: sigma=" + std::to_string(sigma) + " outside [0, 1]");
  if (kind == Kind::Identity) return sigma;
  return sigma / (shift - (shift - 1.0) * sigma);
}

double sigma_of_t(const NoiseSchedule& schedule, double t) { return schedule.sigma(t); }

Vector interpolate(const Vector& z0, const Vector& z1, double sigma) {
  require_same_dim(z0, z1, "interpolate");
  Vector out(z0.dim());
  for (std::size_t i = 0; i < out.dim(); ++i) out[i] = (1.0 - sigma) * z0[i] + sigma * z1[i];
  return out;
}

Vector gt_velocity(const Vector& z0, const Vector& z1) { return z1 - z0; }

Vector clean_endpoint(const Vector& z, double sigma, const Vector& v) {
  if (!(sigma > 0.0)) throw DomainError("clean_endpoint: sigma must be positive");
  require_same_dim(z, v, "clean_endpoint");
  Vector out(z.dim());
  for (std::size_t i = 0; i < out.dim(); ++i) out[i] = z[i] - sigma * v[i];
  return out;
}

RaySample RaySample::make(Vector z0, Vector z1, Condition cond, double t0, const NoiseSchedule& schedule) {
  RaySample s;
  s.sigma_t0 = schedule.sigma(t0);
  s.z_t = interpolate(z0, z1, s.sigma_t0);
  s.z0 = std::move(z0);
  s.z1 = std::move(z1);
  s.cond = cond;
  s.t0 = t0;
  return s;
}

std::vector<double> supervised_losses(const VelocityModel& model, std::span<const SupervisedItem> items,
                                      const LossWeighting& weighting, GradSet* grads, double grad_scale) {
  std::vector<double> losses;
  if (items.empty()) return losses;

  std::vector<Vector> z;
  std::vector<Condition> cond;
  std::vector<double> t;
  z.reserve(items.size());
  cond.reserve(items.size());
  t.reserve(items.size());
  for (const auto& item : items) {
    z.push_back(item.z);
    cond.push_back(item.cond);
    t.push_back(item.t);
  }

  ForwardCache cache;
  const std::vector<Vector> v = model.forward(z, cond, t, grads ? &cache : nullptr);

  losses.reserve(items.size());
  std::vector<Vector> grad_out;
  if (grads) grad_out.reserve(items.size());
  for (std::size_t j = 0; j < items.size(); ++j) {
    const Vector residual = v[j] - items[j].target;
    const double w = weighting(items[j].sigma);
    losses.push_back(w * mean_square(residual));
    if (grads) grad_out.push_back(residual * (grad_scale * 2.0 * w / static_cast<double>(residual.dim())));
  }
  if (grads) model.backward(cache, grad_out, *grads);
  return losses;
}

double fm_loss_term(const VelocityModel& model, const RaySample& sample, const LossWeighting& weighting,
                    GradSet* grads, double grad_scale) {
  const SupervisedItem item{sample.z_t, sample.cond, sample.t0, sample.sigma_t0, gt_velocity(sample.z0, sample.z1)};
  return supervised_losses(model, std::span(&item, 1), weighting, grads, grad_scale).front();
}

std::vector<Vector> SinglePointOracle::velocity_batch(std::span<const Vector> z, std::span<const Condition>,
                                                      std::span<const double> t) const {
  std::vector<Vector> out;
  out.reserve(z.size());
  for (std::size_t j = 0; j < z.size(); ++j) {
    const double sigma = schedule_.sigma(t[j]);
    if (!(sigma > 0.0)) throw DomainError("single-point oracle is undefined at sigma = 0");
    require_same_dim(z[j], point_, "oracle velocity");
    Vector v(point_.dim());
    for (std::size_t i = 0; i < v.dim(); ++i) v[i] = (z[j][i] - point_[i]) / sigma;
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<Vector> ConstantVelocityField::velocity_batch(std::span<const Vector> z, std::span<const Condition>,
                                                          std::span<const double>) const {
  for (const auto& x : z) require_same_dim(x, v_, "constant field");
  return std::vector<Vector>(z.size(), v_);
}

}  // namespace soar

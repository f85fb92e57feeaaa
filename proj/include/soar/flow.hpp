#pragma once

#include <span>
#include <vector>

#include "soar/model.hpp"
#include "soar/numerics.hpp"

namespace soar {

/// Operations that divide by a noise level reject values below this.
inline constexpr double kDefaultSigmaMin = 1e-3;

/// Map from time t in [0, 1] to noise level sigma, sigma(0)=0, sigma(1)=1.
struct NoiseSchedule {
  enum class Kind { Identity, Shifted };

  Kind kind = Kind::Identity;
  double shift = 1.0;

  static NoiseSchedule identity() { return {}; }
  static NoiseSchedule shifted(double shift);

  [[nodiscard]] double sigma(double t) const;
  /// Inverse of sigma(t).
  [[nodiscard]] double time_of(double sigma) const;

  friend bool operator==(const NoiseSchedule&, const NoiseSchedule&) = default;
};

/// identity: t; shifted(s): s t / (1 + (s - 1) t). Throws outside [0, 1].
double sigma_of_t(const NoiseSchedule& schedule, double t);

struct LossWeighting {
  enum class Kind { Uniform, SigmaSquared };

  Kind kind = Kind::Uniform;

  [[nodiscard]] double operator()(double sigma) const { return kind == Kind::Uniform ? 1.0 : sigma * sigma; }

  friend bool operator==(const LossWeighting&, const LossWeighting&) = default;
};

/// (1 - sigma) z0 + sigma z1.
Vector interpolate(const Vector& z0, const Vector& z1, double sigma);
/// Constant velocity of the straight ray from z0 to z1: z1 - z0.
Vector gt_velocity(const Vector& z0, const Vector& z1);
/// Data endpoint implied by velocity v at state z: z - sigma v.
Vector clean_endpoint(const Vector& z, double sigma, const Vector& v);

/// A point on the transport ray between a data sample and its noise.
struct RaySample {
  Vector z0;
  Vector z1;
  Condition cond;
  double t0 = 0.0;
  double sigma_t0 = 0.0;
  Vector z_t;

  static RaySample make(Vector z0, Vector z1, Condition cond, double t0, const NoiseSchedule& schedule);
};

/// One regression item: the model at (z, cond, t) should output `target`.
/// Its loss is weight(sigma) * mean over dims of (v - target)^2.
struct SupervisedItem {
  Vector z;
  Condition cond;
  double t = 0.0;
  double sigma = 0.0;
  Vector target;
};

/// Evaluates a batch of supervised items with one forward pass and returns
/// the per-item weighted losses. When `grads` is given, adds
/// grad_scale * d(sum of losses)/d(params) to it.
std::vector<double> supervised_losses(const VelocityModel& model, std::span<const SupervisedItem> items,
                                      const LossWeighting& weighting, GradSet* grads, double grad_scale = 1.0);

/// Flow-matching loss of a single ray sample, regressing onto z1 - z0.
double fm_loss_term(const VelocityModel& model, const RaySample& sample, const LossWeighting& weighting,
                    GradSet* grads, double grad_scale = 1.0);

/// Exact marginal velocity for a dataset holding one point z0*:
/// v(z, sigma) = (z - z0*) / sigma.
class SinglePointOracle final : public VelocityField {
 public:
  explicit SinglePointOracle(Vector point, NoiseSchedule schedule = {})
      : point_(std::move(point)), schedule_(schedule) {}

  [[nodiscard]] const Vector& point() const { return point_; }
  [[nodiscard]] std::size_t latent_dim() const override { return point_.dim(); }
  [[nodiscard]] std::vector<Vector> velocity_batch(std::span<const Vector> z, std::span<const Condition> cond,
                                                   std::span<const double> t) const override;

 private:
  Vector point_;
  NoiseSchedule schedule_;
};

/// Returns the same velocity everywhere.
class ConstantVelocityField final : public VelocityField {
 public:
  explicit ConstantVelocityField(Vector v) : v_(std::move(v)) {}

  [[nodiscard]] std::size_t latent_dim() const override { return v_.dim(); }
  [[nodiscard]] std::vector<Vector> velocity_batch(std::span<const Vector> z, std::span<const Condition> cond,
                                                   std::span<const double> t) const override;

 private:
  Vector v_;
};

}  // namespace soar

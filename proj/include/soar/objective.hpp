#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "soar/data.hpp"
#include "soar/flow.hpp"
#include "soar/model.hpp"
#include "soar/numerics.hpp"
#include "soar/sampler.hpp"

namespace soar {

enum class RenoiseMode { SharedZ1, FreshZ1 };
enum class T0Sampling { Uniform01, UniformInvK1 };

std::string_view to_string(RenoiseMode mode);
RenoiseMode parse_renoise_mode(std::string_view name);
std::string_view to_string(T0Sampling sampling);
T0Sampling parse_t0_sampling(std::string_view name);

/// Hyperparameters of the trajectory-correction objective.
struct SoarConfig {
  std::size_t K = 10;  ///< rollout step count; the one-step rollout spans 1/K
  std::size_t N = 4;   ///< auxiliary re-noised points per branch
  std::size_t M = 1;   ///< branches: 1 = ODE only, extra branches use sde_step
  double lambda = 1.0;
  double w_cfg = 1.0;
  double eta = 0.5;
  RenoiseMode renoise = RenoiseMode::SharedZ1;
  double sigma_min = kDefaultSigmaMin;
  T0Sampling t0_sampling = T0Sampling::UniformInvK1;
  LossWeighting weighting;
  NoiseSchedule schedule;
  /// Probability of replacing a supervised item's condition by null.
  double cond_dropout = 0.1;

  void validate() const;
};

/// Training time t0 per config.t0_sampling; always in (0, 1].
double sample_t0(Rng& rng, const SoarConfig& config);

struct OneStepRollout {
  Vector z_hat;  ///< off-trajectory state at sigma_t1
  double t1 = 0.0;
  double sigma_t1 = 0.0;
};

/// t1 = max(t0 - 1/K, 0) and the Euler step z_t0 + (sigma_t1 - sigma_t0) v.
OneStepRollout one_step_from_velocity(const Vector& z_t0, const Vector& v_cfg, double t0, const SoarConfig& config);

/// Stop-gradient guided Euler step from the on-trajectory state at t0.
OneStepRollout one_step_rollout(const VelocityField& field, const Vector& z_t0, std::size_t cond, double t0,
                                const SoarConfig& config);

/// z_hat - ((1 - sigma_t1) z0 + sigma_t1 z1).
Vector deviation(const Vector& z_hat, const Vector& z0, const Vector& z1, double sigma_t1);

/// Auxiliary state re-noised from a rollout endpoint.
struct OffTrajectoryState {
  Vector z_aux;
  double sigma_aux = 0.0;
  std::size_t branch = 0;
  double alpha = 0.0;
  /// Noise endpoint used for mixing: the caller's z1 in shared mode, a fresh
  /// draw in fresh mode.
  Vector noise;
  bool valid = false;
};

/// alpha = (sigma_aux - sigma_t1) / (1 - sigma_t1), z_aux = (1 - alpha) z_hat + alpha noise.
/// The state is invalid when sigma_t1 == 1 or sigma_aux < sigma_min.
OffTrajectoryState renoise(const Vector& z_hat, const Vector& z1, double sigma_t1, double sigma_aux, RenoiseMode mode,
                           Rng& rng, double sigma_min = kDefaultSigmaMin, std::size_t branch = 0);

/// Velocity that sends z_aux to z0 in the remaining sigma_aux: (z_aux - z0) / sigma_aux.
Vector correction_target(const Vector& z_aux, const Vector& z0, double sigma_aux, double sigma_min = kDefaultSigmaMin);

/// weight(sigma_aux) * mean-dim |v(z_aux, cond, t') - correction_target|^2 with
/// t' = schedule.time_of(sigma_aux). Invalid states contribute 0 and no gradient.
double corr_loss_term(const VelocityModel& model, const OffTrajectoryState& state, const Vector& z0, Condition cond,
                      const SoarConfig& config, GradSet* grads, double grad_scale = 1.0);

struct LossBreakdown {
  double loss_base_sum = 0.0;
  double loss_corr_sum = 0.0;
  std::size_t count_B = 0;
  std::size_t count_P = 0;
  double lambda = 0.0;
  double normalized_total = 0.0;

  /// Fills normalized_total = (base + lambda corr) / (B + lambda P).
  static LossBreakdown aggregate(double base_sum, double corr_sum, std::size_t count_B, std::size_t count_P,
                                 double lambda);
};

/// Unnormalized sums produced by one worker before the count all-reduce.
struct ShardPartial {
  double loss_base_sum = 0.0;
  double loss_corr_sum = 0.0;
  std::size_t count_B = 0;
  std::size_t count_P = 0;
  /// Gradient of loss_base_sum + lambda * loss_corr_sum.
  GradSet grad_sum;
};

struct StepResult {
  LossBreakdown loss;
  /// Gradient of loss.normalized_total.
  GradSet grads;
  /// Guided rollout velocity used for each batch element (empty when the
  /// correction branch was not run).
  std::vector<Vector> rollout_velocities;
};

/// Everything a step needs besides the model.
struct StepInputs {
  std::span<const TrainingPair> batch;
  /// Rng for this step; element i of the batch uses rng.split("sample").split(i).
  Rng rng{0};
  /// Sizes of consecutive shards; empty means one shard.
  std::span<const std::size_t> shard_sizes;
  /// Replaces the guided rollout velocities (one per batch element). Used to
  /// audit the stop-gradient contract.
  const std::vector<Vector>* frozen_rollout_velocities = nullptr;
};

/// Work of a single shard: batch elements [offset, offset + count).
ShardPartial soar_shard_partial(const VelocityModel& model, const StepInputs& inputs, const SoarConfig& config,
                                std::size_t offset, std::size_t count, std::vector<Vector>* rollout_velocities);

/// Sums shard partials (the simulated all-reduce) and normalizes once.
StepResult all_reduce(std::vector<ShardPartial> partials, double lambda);

/// Base flow-matching terms plus, when lambda > 0 and N > 0, the correction
/// terms on M branches of re-noised rollout states.
StepResult soar_training_step(const VelocityModel& model, const StepInputs& inputs, const SoarConfig& config);

/// soar_training_step with lambda = 0.
StepResult sft_training_step(const VelocityModel& model, const StepInputs& inputs, const SoarConfig& config);

}  // namespace soar

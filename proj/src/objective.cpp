#include "soar/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace soar {

std::string_view to_string(RenoiseMode mode) { return mode == RenoiseMode::SharedZ1 ? "shared-z1" : "fresh-z1"; }

RenoiseMode parse_renoise_mode(std::string_view name) {
  if (name == "shared-z1") return RenoiseMode::SharedZ1;
  if (name == "fresh-z1") return RenoiseMode::FreshZ1;
  throw ContractViolation("unknown renoise mode '" + std::string(name) + "'");
}

std::string_view to_string(T0Sampling sampling) {
  return sampling == T0Sampling::Uniform01 ? "uniform-0-1" : "uniform-1overK-1";
}

T0Sampling parse_t0_sampling(std::string_view name) {
  if (name == "uniform-0-1") return T0Sampling::Uniform01;
  if (name == "uniform-1overK-1") return T0Sampling::UniformInvK1;
  throw ContractViolation("unknown t0 sampling '" + std::string(name) + "'");
}

void SoarConfig::validate() const {
  if (K == 0) throw ContractViolation("K must be positive");
  if (M == 0) throw ContractViolation("M must be at least 1");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ContractViolation("lambda must be finite and nonnegative");
  if (!std::isfinite(w_cfg)) throw ContractViolation("w_cfg must be finite");
  if (!(eta >= 0.0 && eta <= 1.0)) throw ContractViolation("eta must lie in [0, 1]");
  if (!(sigma_min > 0.0 && sigma_min < 0.1)) throw ContractViolation("sigma_min must lie in (0, 0.1)");
  if (!(cond_dropout >= 0.0 && cond_dropout <= 1.0)) throw ContractViolation("cond_dropout must lie in [0, 1]");
}

OneStepRollout one_step_from_velocity(const Vector& z_t0, const Vector& v_cfg, double t0, const SoarConfig& config) {
  if (!(t0 > 0.0 && t0 <= 1.0)) throw ContractViolation("one-step rollout needs t0 in (0, 1]");
  OneStepRollout out;
  out.t1 = std::max(t0 - 1.0 / static_cast<double>(config.K), 0.0);
  out.sigma_t1 = config.schedule.sigma(out.t1);
  out.z_hat = euler_step(z_t0, v_cfg, config.schedule.sigma(t0), out.sigma_t1);
  return out;
}

OneStepRollout one_step_rollout(const VelocityField& field, const Vector& z_t0, std::size_t cond, double t0,
                                const SoarConfig& config) {
  const Vector v = cfg_velocity(field, z_t0, cond, t0, CfgParams{config.w_cfg});
  return one_step_from_velocity(z_t0, v, t0, config);
}

Vector deviation(const Vector& z_hat, const Vector& z0, const Vector& z1, double sigma_t1) {
  require_same_dim(z_hat, z0, "deviation");
  return z_hat - interpolate(z0, z1, sigma_t1);
}

OffTrajectoryState renoise(const Vector& z_hat, const Vector& z1, double sigma_t1, double sigma_aux, RenoiseMode mode,
                           Rng& rng, double sigma_min, std::size_t branch) {
  require_same_dim(z_hat, z1, "renoise");
  OffTrajectoryState state;
  state.sigma_aux = sigma_aux;
  state.branch = branch;
  state.noise = mode == RenoiseMode::SharedZ1 ? z1 : gaussian(rng, z1.dim());
  if (!(sigma_t1 < 1.0)) {
    state.z_aux = z_hat;
    state.valid = false;
    return state;
  }
  if (!(sigma_aux >= sigma_t1 && sigma_aux <= 1.0))
    throw ContractViolation("renoise: sigma_aux must lie in [sigma_t1, 1]");

  state.alpha = (sigma_aux - sigma_t1) / (1.0 - sigma_t1);
  state.z_aux = Vector(z_hat.dim());
  for (std::size_t i = 0; i < z_hat.dim(); ++i)
    state.z_aux[i] = (1.0 - state.alpha) * z_hat[i] + state.alpha * state.noise[i];
  state.valid = sigma_aux >= sigma_min;
  return state;
}

Vector correction_target(const Vector& z_aux, const Vector& z0, double sigma_aux, double sigma_min) {
  if (!(sigma_aux >= sigma_min)) throw DomainError("correction_target: sigma below sigma_min");
  require_same_dim(z_aux, z0, "correction_target");
  Vector out(z_aux.dim());
  for (std::size_t i = 0; i < out.dim(); ++i) out[i] = (z_aux[i] - z0[i]) / sigma_aux;
  return out;
}

double corr_loss_term(const VelocityModel& model, const OffTrajectoryState& state, const Vector& z0, Condition cond,
                      const SoarConfig& config, GradSet* grads, double grad_scale) {
  if (!state.valid) return 0.0;
  const SupervisedItem item{state.z_aux, cond, config.schedule.time_of(state.sigma_aux), state.sigma_aux,
                            correction_target(state.z_aux, z0, state.sigma_aux, config.sigma_min)};
  return supervised_losses(model, std::span(&item, 1), config.weighting, grads, grad_scale).front();
}

LossBreakdown LossBreakdown::aggregate(double base_sum, double corr_sum, std::size_t count_B, std::size_t count_P,
                                       double lambda) {
  LossBreakdown out{base_sum, corr_sum, count_B, count_P, lambda, 0.0};
  const double denom = static_cast<double>(count_B) + lambda * static_cast<double>(count_P);
  if (denom > 0.0) out.normalized_total = (base_sum + lambda * corr_sum) / denom;
  return out;
}

double sample_t0(Rng& rng, const SoarConfig& config) {
  // 1 - u lies in (0, 1], so t0 never hits 0.
  const double u = 1.0 - rng.uniform();
  if (config.t0_sampling == T0Sampling::Uniform01) return u;
  const double lo = 1.0 / static_cast<double>(config.K);
  return lo + (1.0 - lo) * u;
}

namespace {

Condition maybe_drop(std::size_t cond, Rng& rng, double p) {
  return rng.bernoulli(p) ? kNullCondition : Condition(cond);
}

}  // namespace

ShardPartial soar_shard_partial(const VelocityModel& model, const StepInputs& inputs, const SoarConfig& config,
                                std::size_t offset, std::size_t count, std::vector<Vector>* rollout_velocities) {
  if (offset + count > inputs.batch.size()) throw ContractViolation("shard range exceeds batch");
  const bool correct = config.lambda > 0.0 && config.N > 0;
  const Rng samples = inputs.rng.split("sample");

  struct Draw {
    Rng stream;
    Vector z1;
    double t0;
    double sigma_t0;
    Vector z_t0;
  };
  std::vector<Draw> draws;
  draws.reserve(count);
  std::vector<SupervisedItem> base_items;
  base_items.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t idx = offset + k;
    const TrainingPair& pair = inputs.batch[idx];
    Rng stream = samples.split(idx);
    Rng z1_rng = stream.split("z1");
    Rng t0_rng = stream.split("t0");
    Rng drop_rng = stream.split("dropout");

    Vector z1 = gaussian(z1_rng, pair.z0.dim());
    const double t0 = sample_t0(t0_rng, config);
    const double sigma_t0 = config.schedule.sigma(t0);
    Vector z_t0 = interpolate(pair.z0, z1, sigma_t0);
    base_items.push_back(
        {z_t0, maybe_drop(pair.cond, drop_rng, config.cond_dropout), t0, sigma_t0, gt_velocity(pair.z0, z1)});
    draws.push_back({stream, std::move(z1), t0, sigma_t0, std::move(z_t0)});
  }

  ShardPartial partial;
  partial.grad_sum = GradSet::zeros_like(model.params());
  partial.count_B = count;
  for (double l : supervised_losses(model, base_items, config.weighting, &partial.grad_sum, 1.0))
    partial.loss_base_sum += l;
  if (!correct) return partial;

  // Guided rollout velocities, treated as constants from here on.
  std::vector<Vector> v_cfg;
  if (inputs.frozen_rollout_velocities) {
    if (inputs.frozen_rollout_velocities->size() != inputs.batch.size())
      throw ContractViolation("frozen rollout velocities must cover the whole batch");
    v_cfg.assign(inputs.frozen_rollout_velocities->begin() + static_cast<std::ptrdiff_t>(offset),
                 inputs.frozen_rollout_velocities->begin() + static_cast<std::ptrdiff_t>(offset + count));
  } else {
    std::vector<Vector> z;
    std::vector<Condition> cond;
    std::vector<double> t;
    for (std::size_t k = 0; k < count; ++k) {
      z.push_back(draws[k].z_t0);
      cond.push_back(inputs.batch[offset + k].cond);
      t.push_back(draws[k].t0);
    }
    v_cfg = cfg_velocity_batch(model, z, cond, t, CfgParams{config.w_cfg});
  }

  std::vector<SupervisedItem> corr_items;
  corr_items.reserve(count * config.M * config.N);
  for (std::size_t k = 0; k < count; ++k) {
    const TrainingPair& pair = inputs.batch[offset + k];
    Draw& d = draws[k];
    const OneStepRollout ode = one_step_from_velocity(d.z_t0, v_cfg[k], d.t0, config);

    std::vector<Vector> endpoints{ode.z_hat};
    if (config.M > 1 && ode.t1 > 0.0 && d.sigma_t0 > config.sigma_min) {
      const Rng sde_streams = d.stream.split("sde");
      for (std::size_t m = 1; m < config.M; ++m) {
        Rng sde_rng = sde_streams.split(m);
        endpoints.push_back(
            sde_step(d.z_t0, v_cfg[k], d.sigma_t0, ode.sigma_t1, SdeParams{config.eta}, sde_rng, config.sigma_min));
      }
    }

    const Rng aux_streams = d.stream.split("aux");
    for (std::size_t m = 0; m < endpoints.size(); ++m) {
      const Rng branch = aux_streams.split(m);
      Rng sigma_rng = branch.split("sigma");
      Rng fresh_rng = branch.split("fresh");
      Rng drop_rng = branch.split("dropout");
      for (std::size_t n = 0; n < config.N; ++n) {
        const double sigma_aux = sigma_rng.uniform(ode.sigma_t1, 1.0);
        const OffTrajectoryState state =
            renoise(endpoints[m], d.z1, ode.sigma_t1, sigma_aux, config.renoise, fresh_rng, config.sigma_min, m);
        const Condition cond = maybe_drop(pair.cond, drop_rng, config.cond_dropout);
        if (!state.valid) continue;
        corr_items.push_back({state.z_aux, cond, config.schedule.time_of(sigma_aux), sigma_aux,
                              correction_target(state.z_aux, pair.z0, sigma_aux, config.sigma_min)});
      }
    }
  }

  partial.count_P = corr_items.size();
  for (double l : supervised_losses(model, corr_items, config.weighting, &partial.grad_sum, config.lambda))
    partial.loss_corr_sum += l;
  if (rollout_velocities)
    for (std::size_t k = 0; k < count; ++k) (*rollout_velocities)[offset + k] = std::move(v_cfg[k]);
  return partial;
}

StepResult all_reduce(std::vector<ShardPartial> partials, double lambda) {
  if (partials.empty()) throw ContractViolation("all_reduce needs at least one shard");
  double base = 0.0, corr = 0.0;
  std::size_t b = 0, p = 0;
  GradSet grads = GradSet::zeros_like(partials.front().grad_sum);
  for (const auto& part : partials) {
    base += part.loss_base_sum;
    corr += part.loss_corr_sum;
    b += part.count_B;
    p += part.count_P;
    grads.add_scaled(part.grad_sum, 1.0);
  }
  StepResult out;
  out.loss = LossBreakdown::aggregate(base, corr, b, p, lambda);
  const double denom = static_cast<double>(b) + lambda * static_cast<double>(p);
  if (denom > 0.0) grads.scale(1.0 / denom);
  out.grads = std::move(grads);
  return out;
}

StepResult soar_training_step(const VelocityModel& model, const StepInputs& inputs, const SoarConfig& config) {
  config.validate();
  if (inputs.batch.empty()) throw ContractViolation("training step needs a nonempty batch");

  std::vector<std::size_t> shards(inputs.shard_sizes.begin(), inputs.shard_sizes.end());
  if (shards.empty()) shards.push_back(inputs.batch.size());
  if (std::accumulate(shards.begin(), shards.end(), std::size_t{0}) != inputs.batch.size())
    throw ContractViolation("shard sizes must sum to the batch size");

  std::vector<Vector> velocities(inputs.batch.size());
  std::vector<ShardPartial> partials;
  partials.reserve(shards.size());
  std::size_t offset = 0;
  for (std::size_t size : shards) {
    partials.push_back(soar_shard_partial(model, inputs, config, offset, size, &velocities));
    offset += size;
  }
  StepResult out = all_reduce(std::move(partials), config.lambda);
  if (config.lambda > 0.0 && config.N > 0) out.rollout_velocities = std::move(velocities);
  return out;
}

StepResult sft_training_step(const VelocityModel& model, const StepInputs& inputs, const SoarConfig& config) {
  SoarConfig sft = config;
  sft.lambda = 0.0;
  return soar_training_step(model, inputs, sft);
}

}  // namespace soar

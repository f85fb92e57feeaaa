#include "soar/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace soar {

std::vector<RayPair> sample_ray_pairs(const DatasetSpec& spec, std::size_t n, Rng& rng) {
  Rng data_rng = rng.split("data");
  Rng noise_rng = rng.split("noise");
  std::vector<RayPair> out;
  out.reserve(n);
  for (auto& p : sample_pairs(spec, n, data_rng)) out.push_back({std::move(p.z0), p.cond, gaussian(noise_rng, spec.dim)});
  return out;
}

BiasReport teacher_forced_gap(const VelocityField& field, std::span<const RayPair> pairs, std::size_t steps,
                              const NoiseSchedule& schedule, const CfgParams& cfg, double tolerance) {
  if (steps == 0) throw ContractViolation("teacher_forced_gap: steps must be positive");
  if (pairs.empty()) throw ContractViolation("teacher_forced_gap: no pairs");
  const std::size_t n = pairs.size();
  const double inv_n = 1.0 / static_cast<double>(n);

  BiasReport report;
  report.steps = steps;
  report.pair_count = n;
  for (std::size_t k = 0; k <= steps; ++k) report.sigma_grid.push_back(schedule.sigma(rollout_time(k, steps)));
  report.mean_deviation.assign(steps + 1, 0.0);
  report.mean_velocity_error.assign(steps, 0.0);

  std::vector<Vector> state;
  std::vector<Vector> ray;
  std::vector<Condition> conds;
  state.reserve(n);
  for (const auto& p : pairs) {
    require_same_dim(p.z0, p.z1, "teacher_forced_gap");
    state.push_back(p.z1);
    ray.push_back(gt_velocity(p.z0, p.z1));
    conds.push_back(p.cond);
  }
  std::vector<double> bound(n, 0.0);
  std::vector<double> t(n);

  // The gap is accumulated inline rather than through rollout_batch so the
  // exact velocities used by each Euler step are available for the bound.
  for (std::size_t k = 0;; ++k) {
    const double sigma = report.sigma_grid[k];
    for (std::size_t j = 0; j < n; ++j)
      report.mean_deviation[k] += norm(state[j] - interpolate(pairs[j].z0, pairs[j].z1, sigma)) * inv_n;
    if (k == steps) break;

    std::fill(t.begin(), t.end(), rollout_time(k, steps));
    const std::vector<Vector> v = cfg_velocity_batch(field, state, conds, t, cfg);
    const double dsigma = report.sigma_grid[k + 1] - sigma;
    for (std::size_t j = 0; j < n; ++j) {
      const double err = norm(v[j] - ray[j]);
      report.mean_velocity_error[k] += err * inv_n;
      bound[j] += std::abs(dsigma) * err;
      state[j] = euler_step(state[j], v[j], sigma, report.sigma_grid[k + 1]);
    }
  }

  report.min_slack = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    const double final_dev = norm(state[j] - pairs[j].z0);
    report.mean_final_deviation += final_dev * inv_n;
    report.mean_first_order_bound += bound[j] * inv_n;
    const double slack = bound[j] - final_dev;
    report.min_slack = std::min(report.min_slack, slack);
    if (slack < -tolerance) ++report.bound_violations;
  }
  return report;
}

AuditResult deviation_bound_audit(const VelocityField& field, std::span<const TrainingPair> pairs,
                                  const SoarConfig& config, std::size_t trials, Rng& rng) {
  config.validate();
  if (pairs.empty()) throw ContractViolation("deviation_bound_audit: no pairs");
  AuditResult result;
  result.asserted = config.renoise == RenoiseMode::SharedZ1;

  for (std::size_t trial = 0; trial < trials; ++trial) {
    Rng stream = rng.split(trial);
    Rng pick_rng = stream.split("pick");
    Rng z1_rng = stream.split("z1");
    Rng t0_rng = stream.split("t0");
    const TrainingPair& pair = pairs[pick_rng.below(pairs.size())];
    const Vector z1 = gaussian(z1_rng, pair.z0.dim());
    const double t0 = sample_t0(t0_rng, config);
    const double sigma_t0 = config.schedule.sigma(t0);
    const Vector z_t0 = interpolate(pair.z0, z1, sigma_t0);
    const Vector v = cfg_velocity(field, z_t0, pair.cond, t0, CfgParams{config.w_cfg});
    const OneStepRollout ode = one_step_from_velocity(z_t0, v, t0, config);
    if (!(ode.sigma_t1 < 1.0)) continue;

    std::vector<Vector> endpoints{ode.z_hat};
    if (config.M > 1 && ode.t1 > 0.0 && sigma_t0 > config.sigma_min) {
      const Rng sde_streams = stream.split("sde");
      for (std::size_t m = 1; m < config.M; ++m) {
        Rng sde_rng = sde_streams.split(m);
        endpoints.push_back(sde_step(z_t0, v, sigma_t0, ode.sigma_t1, SdeParams{config.eta}, sde_rng, config.sigma_min));
      }
    }

    const Rng aux_streams = stream.split("aux");
    for (std::size_t m = 0; m < endpoints.size(); ++m) {
      const Rng branch = aux_streams.split(m);
      Rng sigma_rng = branch.split("sigma");
      Rng fresh_rng = branch.split("fresh");
      const double delta = norm(deviation(endpoints[m], pair.z0, z1, ode.sigma_t1));
      for (std::size_t n = 0; n < std::max<std::size_t>(config.N, 1); ++n) {
        const double sigma_aux = sigma_rng.uniform(ode.sigma_t1, 1.0);
        const OffTrajectoryState s =
            renoise(endpoints[m], z1, ode.sigma_t1, sigma_aux, config.renoise, fresh_rng, config.sigma_min, m);
        const double actual = norm(s.z_aux - interpolate(pair.z0, z1, sigma_aux));
        result.residuals.push_back(std::abs(actual - (1.0 - s.alpha) * delta));
      }
    }
  }

  for (double r : result.residuals) {
    result.max_residual = std::max(result.max_residual, r);
    result.mean_residual += r;
  }
  if (!result.residuals.empty()) result.mean_residual /= static_cast<double>(result.residuals.size());
  result.passed = !result.asserted || result.max_residual <= kBoundAuditTolerance;
  return result;
}

std::vector<std::vector<Vector>> generate_endpoints(const VelocityField& field, const DatasetSpec& spec,
                                                    const EndpointSettings& settings, Rng& rng) {
  spec.validate();
  std::vector<std::vector<Vector>> out;
  for (std::size_t c = 0; c < spec.condition_count; ++c) {
    Rng noise = rng.split("noise").split(c);
    std::vector<Vector> z1;
    for (std::size_t k = 0; k < settings.per_condition; ++k) z1.push_back(gaussian(noise, spec.dim));
    const std::vector<Condition> conds(settings.per_condition, Condition(c));
    std::vector<Vector> ends;
    for (auto& traj : rollout_batch(field, z1, conds, settings.steps, settings.cfg, settings.schedule))
      ends.push_back(traj.endpoint());
    out.push_back(std::move(ends));
  }
  return out;
}

double endpoint_quality(const VelocityField& field, const DatasetSpec& spec, const EndpointSettings& settings,
                        Rng& rng) {
  if (settings.per_condition < 100) throw ContractViolation("endpoint_quality needs at least 100 samples per condition");
  const auto generated = generate_endpoints(field, spec, settings, rng);
  double total = 0.0;
  for (std::size_t c = 0; c < spec.condition_count; ++c) {
    Rng data_rng = rng.split("reference").split(c);
    Rng proj_rng = rng.split("projections").split(c);
    const auto reference = sample_condition(spec, c, settings.per_condition, data_rng);
    total += dataset_distance(generated[c], reference, settings.metric, settings.projections, proj_rng);
  }
  return total / static_cast<double>(spec.condition_count);
}

MetricSummary summarize(std::span<const double> values) {
  MetricSummary out;
  if (values.empty()) return out;
  const double n = static_cast<double>(values.size());
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.stddev = std::sqrt(ss / (n - 1.0));
  }
  return out;
}

double pooled_stddev(const MetricSummary& a, const MetricSummary& b) {
  return std::sqrt(0.5 * (a.stddev * a.stddev + b.stddev * b.stddev));
}

const MethodCurve& ComparisonResult::curve(const std::string& method) const {
  for (const auto& c : curves)
    if (c.method == method) return c;
  throw ContractViolation("no curve for method '" + method + "'");
}

ComparisonResult compare_methods(const ComparisonSettings& settings, std::span<const MethodArm> arms) {
  if (settings.seeds.empty()) throw ContractViolation("compare_methods needs at least one seed");
  if (arms.empty()) throw ContractViolation("compare_methods needs at least one arm");
  if (settings.eval_interval == 0) throw ContractViolation("eval_interval must be positive");

  ComparisonResult result;
  result.seeds = settings.seeds;
  for (std::size_t s = 0; s <= settings.train.steps; s += settings.eval_interval) result.checkpoints.push_back(s);
  if (result.checkpoints.back() != settings.train.steps) result.checkpoints.push_back(settings.train.steps);

  for (const auto& arm : arms) {
    MethodCurve curve;
    curve.method = arm.name;
    curve.steps = result.checkpoints;
    std::vector<std::vector<double>> endpoint(result.checkpoints.size()), gap(result.checkpoints.size());

    for (std::uint64_t seed : settings.seeds) {
      const Rng master(seed);
      Rng data_rng = master.split("data");
      Rng init_rng = master.split("init");
      const Rng eval_rng = master.split("eval");
      Rng gap_rng = eval_rng.split("gap");
      const auto pairs = sample_ray_pairs(settings.data, settings.gap_pairs, gap_rng);

      Trainer trainer(VelocityModel::initialize(settings.shape, init_rng), arm.method, arm.config, settings.train,
                      sample_pairs(settings.data, settings.data.size, data_rng), master.split("training"));

      double base_acc = 0.0;
      std::size_t base_items = 0;
      BiasReport last;
      for (std::size_t c = 0; c < result.checkpoints.size(); ++c) {
        while (trainer.steps_taken() < result.checkpoints[c]) {
          const StepRecord rec = trainer.step();
          if (!rec.finite) throw std::runtime_error("non-finite loss in method '" + arm.name + "'");
          base_acc += rec.loss.loss_base_sum;
          base_items += rec.loss.count_B;
        }
        Rng endpoint_rng = eval_rng.split("endpoint");
        last = teacher_forced_gap(trainer.model(), pairs, arm.config.K, arm.config.schedule, CfgParams{arm.config.w_cfg});
        last.seeds = {seed};
        CurvePoint row;
        row.method = arm.name;
        row.seed = seed;
        row.step = result.checkpoints[c];
        row.endpoint_error = endpoint_quality(trainer.model(), settings.data, settings.endpoint, endpoint_rng);
        row.final_gap = last.final_gap();
        last.endpoint_distance = row.endpoint_error;
        row.base_loss = base_items ? base_acc / static_cast<double>(base_items) : 0.0;
        base_acc = 0.0;
        base_items = 0;
        endpoint[c].push_back(row.endpoint_error);
        gap[c].push_back(row.final_gap);
        result.rows.push_back(std::move(row));
      }
      curve.final_reports.push_back(std::move(last));
    }
    for (std::size_t c = 0; c < result.checkpoints.size(); ++c) {
      curve.endpoint_error.push_back(summarize(endpoint[c]));
      curve.final_gap.push_back(summarize(gap[c]));
    }
    result.curves.push_back(std::move(curve));
  }
  return result;
}

void write_comparison_csv(std::ostream& out, const ComparisonResult& result) {
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "method,seed,step,endpoint_error,final_gap,base_loss\n";
  for (const auto& r : result.rows)
    out << r.method << ',' << r.seed << ',' << r.step << ',' << r.endpoint_error << ',' << r.final_gap << ','
        << r.base_loss << '\n';
}

nlohmann::json comparison_summary(const ComparisonResult& result) {
  using nlohmann::json;
  json methods = json::object();
  for (const auto& c : result.curves) {
    json entry;
    for (const auto& [name, series] : {std::pair{"endpoint_error", &c.endpoint_error}, std::pair{"final_gap", &c.final_gap}}) {
      json mean = json::array(), sd = json::array();
      for (const auto& m : *series) {
        mean.push_back(m.mean);
        sd.push_back(m.stddev);
      }
      entry[name] = {{"mean", mean}, {"std", sd}};
      entry["final"][name] = {{"mean", series->back().mean}, {"std", series->back().stddev}};
    }
    methods[c.method] = entry;
  }
  return {{"seeds", result.seeds}, {"checkpoints", result.checkpoints}, {"methods", methods}};
}

nlohmann::json bias_report_json(const BiasReport& report) {
  nlohmann::json j = {{"steps", report.steps},
                      {"pair_count", report.pair_count},
                      {"sigma_grid", report.sigma_grid},
                      {"mean_deviation", report.mean_deviation},
                      {"mean_velocity_error", report.mean_velocity_error},
                      {"final_gap", report.final_gap()},
                      {"mean_final_deviation", report.mean_final_deviation},
                      {"mean_first_order_bound", report.mean_first_order_bound},
                      {"min_slack", report.min_slack},
                      {"bound_violations", report.bound_violations},
                      {"seeds", report.seeds}};
  j["endpoint_distance"] = report.endpoint_distance ? nlohmann::json(*report.endpoint_distance) : nlohmann::json();
  return j;
}

void write_bias_report_csv(std::ostream& out, const BiasReport& report) {
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "step_index,sigma,mean_deviation,mean_velocity_error\n";
  for (std::size_t k = 0; k < report.sigma_grid.size(); ++k) {
    out << k << ',' << report.sigma_grid[k] << ',' << report.mean_deviation[k] << ',';
    if (k < report.mean_velocity_error.size()) out << report.mean_velocity_error[k];
    out << '\n';
  }
}

}  // namespace soar

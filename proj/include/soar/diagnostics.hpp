#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "soar/data.hpp"
#include "soar/model.hpp"
#include "soar/objective.hpp"
#include "soar/sampler.hpp"
#include "soar/trainer.hpp"

namespace soar {

/// A data point together with the noise sample its rollout starts from.
struct RayPair {
  Vector z0;
  std::size_t cond = 0;
  Vector z1;
};

/// Draws `n` data pairs from `spec` and a Gaussian endpoint for each.
std::vector<RayPair> sample_ray_pairs(const DatasetSpec& spec, std::size_t n, Rng& rng);

/// Free-running rollout compared against the straight ray it should follow.
struct BiasReport {
  std::size_t steps = 0;
  std::size_t pair_count = 0;
  /// Grid of the rollout, sigma(1) .. sigma(0), K + 1 entries.
  std::vector<double> sigma_grid;
  /// Mean over pairs of |rollout state - ((1 - sigma) z0 + sigma z1)| per grid node.
  std::vector<double> mean_deviation;
  /// Mean over pairs of |v_k - (z1 - z0)| for each of the K steps.
  std::vector<double> mean_velocity_error;
  /// Mean of the final deviation and of its first-order bound
  /// sum_k |dsigma_k| |v_k - (z1 - z0)|.
  double mean_final_deviation = 0.0;
  double mean_first_order_bound = 0.0;
  /// Smallest bound - final deviation over pairs (negative means violated).
  double min_slack = 0.0;
  std::size_t bound_violations = 0;
  /// Endpoint distribution error, when computed.
  std::optional<double> endpoint_distance;
  std::vector<std::uint64_t> seeds;

  [[nodiscard]] double final_gap() const { return mean_deviation.back(); }
};

/// Rolls out every pair from its own z1 and measures the teacher-forced gap.
/// Pairs whose final deviation exceeds the bound by more than `tolerance`
/// count as violations.
BiasReport teacher_forced_gap(const VelocityField& field, std::span<const RayPair> pairs, std::size_t steps,
                              const NoiseSchedule& schedule, const CfgParams& cfg, double tolerance = 1e-8);

struct AuditResult {
  /// False in fresh-z1 mode, where the law is not expected to hold.
  bool asserted = true;
  bool passed = true;
  double max_residual = 0.0;
  double mean_residual = 0.0;
  std::vector<double> residuals;
};

inline constexpr double kBoundAuditTolerance = 1e-10;

/// Checks | |z_aux - ideal(sigma_aux)| - (1 - alpha)|delta| | over random
/// trials using the configured rollout, branches and renoise mode.
AuditResult deviation_bound_audit(const VelocityField& field, std::span<const TrainingPair> pairs,
                                  const SoarConfig& config, std::size_t trials, Rng& rng);

struct EndpointSettings {
  std::size_t per_condition = 256;
  std::size_t steps = 10;
  CfgParams cfg;
  NoiseSchedule schedule;
  DistanceMetric metric = DistanceMetric::SlicedW2;
  std::size_t projections = 64;
};

/// Mean over conditions of dataset_distance(generated endpoints, fresh data).
/// Both sets hold `per_condition` samples (at least 100).
double endpoint_quality(const VelocityField& field, const DatasetSpec& spec, const EndpointSettings& settings,
                        Rng& rng);

/// Generated endpoints, grouped per condition, for external inspection.
std::vector<std::vector<Vector>> generate_endpoints(const VelocityField& field, const DatasetSpec& spec,
                                                    const EndpointSettings& settings, Rng& rng);

struct MethodArm {
  std::string name;
  TrainMethod method = TrainMethod::Soar;
  SoarConfig config;
};

struct ComparisonSettings {
  DatasetSpec data;
  ModelShape shape;
  TrainSettings train;
  std::size_t eval_interval = 500;
  std::vector<std::uint64_t> seeds;
  EndpointSettings endpoint;
  std::size_t gap_pairs = 256;
};

struct CurvePoint {
  std::string method;
  std::uint64_t seed = 0;
  std::size_t step = 0;
  double endpoint_error = 0.0;
  double final_gap = 0.0;
  /// Mean per-item base loss over the steps since the previous checkpoint.
  double base_loss = 0.0;
};

struct MetricSummary {
  double mean = 0.0;
  double stddev = 0.0;  ///< sample standard deviation over seeds
};

struct MethodCurve {
  std::string method;
  std::vector<std::size_t> steps;
  std::vector<MetricSummary> endpoint_error;
  std::vector<MetricSummary> final_gap;
  /// Teacher-forced report of each seed's final model, in seed order.
  std::vector<BiasReport> final_reports;
};

struct ComparisonResult {
  std::vector<std::uint64_t> seeds;
  std::vector<std::size_t> checkpoints;
  std::vector<CurvePoint> rows;  ///< ordered by (method, seed, step)
  std::vector<MethodCurve> curves;

  [[nodiscard]] const MethodCurve& curve(const std::string& method) const;
};

MetricSummary summarize(std::span<const double> values);

/// sqrt((a.stddev^2 + b.stddev^2) / 2).
double pooled_stddev(const MetricSummary& a, const MetricSummary& b);

/// Trains every arm from the same per-seed data, initial weights and training
/// noise, evaluating at step 0, every eval_interval steps and at the end.
ComparisonResult compare_methods(const ComparisonSettings& settings, std::span<const MethodArm> arms);

/// method,seed,step,endpoint_error,final_gap,base_loss
void write_comparison_csv(std::ostream& out, const ComparisonResult& result);
nlohmann::json comparison_summary(const ComparisonResult& result);
nlohmann::json bias_report_json(const BiasReport& report);
void write_bias_report_csv(std::ostream& out, const BiasReport& report);

}  // namespace soar

#pragma once

#include <cstddef>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "soar/numerics.hpp"

namespace soar {

/// A clean sample and the class label it was drawn for.
struct TrainingPair {
  Vector z0;
  std::size_t cond = 0;

  friend bool operator==(const TrainingPair&, const TrainingPair&) = default;
};

struct GaussianComponent {
  Vector mean;
  /// Row-major dim x dim covariance; must be positive definite.
  std::vector<double> covariance;
};

struct DatasetSpec {
  enum class Kind { GaussianMixture, TwoMoons, Checkerboard, SinglePoint };

  Kind kind = Kind::GaussianMixture;
  std::size_t dim = 2;
  std::size_t condition_count = 1;
  /// Size of the materialized training set.
  std::size_t size = 4096;

  // gaussian-mixture: one component per condition
  std::vector<GaussianComponent> components;
  // two-moons
  double moon_noise = 0.1;
  // checkerboard: cells x cells board on [-extent, extent]^2, condition = cell parity
  std::size_t board_cells = 4;
  double board_extent = 2.0;
  // single-point
  Vector point;

  /// `conditions` isotropic components with means evenly spaced on a circle of
  /// `radius` in the first two coordinates; remaining coordinates are zero.
  static DatasetSpec circle_mixture(std::size_t conditions, double radius, double stddev, std::size_t dim = 2);
  static DatasetSpec two_moons(double noise);
  static DatasetSpec checkerboard(std::size_t cells, double extent);
  static DatasetSpec single_point(Vector point, std::size_t conditions = 1);

  /// Throws ContractViolation when the spec is inconsistent.
  void validate() const;
};

std::string_view to_string(DatasetSpec::Kind kind);
DatasetSpec::Kind parse_dataset_kind(std::string_view name);

/// n pairs; each draws a uniform condition, then z0 from that condition's
/// distribution. Deterministic in `rng`.
std::vector<TrainingPair> sample_pairs(const DatasetSpec& spec, std::size_t n, Rng& rng);

/// n draws from the distribution of one condition.
std::vector<Vector> sample_condition(const DatasetSpec& spec, std::size_t cond, std::size_t n, Rng& rng);

/// log p(z0 | cond) under the spec. Throws ContractViolation for two-moons,
/// whose density has no closed form.
double log_density(const DatasetSpec& spec, const TrainingPair& pair);

struct ScoreFilter {
  enum class Score { LogDensity, Coordinate };

  Score score = Score::Coordinate;
  std::size_t axis = 0;
  double threshold = 0.0;

  [[nodiscard]] double evaluate(const DatasetSpec& spec, const TrainingPair& pair) const;
};

/// Pairs whose score is >= threshold, in their original order.
std::vector<TrainingPair> filter_subset(std::span<const TrainingPair> pairs, const ScoreFilter& filter,
                                        const DatasetSpec& spec);

enum class DistanceMetric { SlicedW2, Energy };

std::string_view to_string(DistanceMetric metric);
DistanceMetric parse_distance_metric(std::string_view name);

/// Wasserstein-2 between two 1-D empirical distributions with uniform
/// weights (sizes may differ).
double wasserstein2_1d(std::vector<double> a, std::vector<double> b);

/// Mean over the given unit directions of the 1-D W2 of the projections.
double sliced_w2(std::span<const Vector> a, std::span<const Vector> b, std::span<const Vector> directions);

/// V-statistic energy distance 2E|X-Y| - E|X-X'| - E|Y-Y'|, clamped at 0.
double energy_distance(std::span<const Vector> a, std::span<const Vector> b);

/// `projections` random unit directions drawn from `rng`.
std::vector<Vector> random_directions(std::size_t dim, std::size_t projections, Rng& rng);

/// Distance between two sample sets. `projections` and `rng` are used only by
/// sliced-W2.
double dataset_distance(std::span<const Vector> a, std::span<const Vector> b, DistanceMetric metric,
                        std::size_t projections, Rng& rng);

/// "# dim=<d> kind=<kind>" line, then "cond,x0,..", then one row per pair.
void write_dataset_csv(std::ostream& out, const DatasetSpec& spec, std::span<const TrainingPair> pairs);

struct LoadedDataset {
  std::size_t dim = 0;
  DatasetSpec::Kind kind = DatasetSpec::Kind::GaussianMixture;
  std::vector<TrainingPair> pairs;
};

LoadedDataset read_dataset_csv(std::istream& in);

}  // namespace soar

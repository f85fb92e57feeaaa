#include "soar/data.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

namespace soar {

namespace {

// Lower-triangular Cholesky factor of a row-major SPD matrix; throws when the
// matrix is not positive definite.
std::vector<double> cholesky(const std::vector<double>& a, std::size_t n) {
  std::vector<double> l(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
      if (i == j) {
        if (!(s > 0.0)) throw ContractViolation("covariance is not positive definite");
        l[i * n + i] = std::sqrt(s);
      } else {
        l[i * n + j] = s / l[j * n + j];
      }
    }
  }
  return l;
}

std::vector<double> isotropic(std::size_t dim, double variance) {
  std::vector<double> c(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) c[i * dim + i] = variance;
  return c;
}

double board_cell_size(const DatasetSpec& spec) { return 2.0 * spec.board_extent / static_cast<double>(spec.board_cells); }

std::size_t cells_with_parity(const DatasetSpec& spec, std::size_t parity) {
  const std::size_t total = spec.board_cells * spec.board_cells;
  return parity == 0 ? (total + 1) / 2 : total / 2;
}

}  // namespace

DatasetSpec DatasetSpec::circle_mixture(std::size_t conditions, double radius, double stddev, std::size_t dim) {
  if (dim < 2) throw ContractViolation("circle mixture needs dim >= 2");
  DatasetSpec spec;
  spec.kind = Kind::GaussianMixture;
  spec.dim = dim;
  spec.condition_count = conditions;
  for (std::size_t c = 0; c < conditions; ++c) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(conditions) +
                         std::numbers::pi / 4.0;
    GaussianComponent comp;
    comp.mean = Vector(dim);
    comp.mean[0] = radius * std::cos(angle);
    comp.mean[1] = radius * std::sin(angle);
    comp.covariance = isotropic(dim, stddev * stddev);
    spec.components.push_back(std::move(comp));
  }
  return spec;
}

DatasetSpec DatasetSpec::two_moons(double noise) {
  DatasetSpec spec;
  spec.kind = Kind::TwoMoons;
  spec.dim = 2;
  spec.condition_count = 2;
  spec.moon_noise = noise;
  return spec;
}

DatasetSpec DatasetSpec::checkerboard(std::size_t cells, double extent) {
  DatasetSpec spec;
  spec.kind = Kind::Checkerboard;
  spec.dim = 2;
  spec.condition_count = 2;
  spec.board_cells = cells;
  spec.board_extent = extent;
  return spec;
}

DatasetSpec DatasetSpec::single_point(Vector point, std::size_t conditions) {
  DatasetSpec spec;
  spec.kind = Kind::SinglePoint;
  spec.dim = point.dim();
  spec.condition_count = conditions;
  spec.point = std::move(point);
  return spec;
}

void DatasetSpec::validate() const {
  if (dim == 0) throw ContractViolation("dataset dim must be positive");
  if (condition_count == 0) throw ContractViolation("dataset needs at least one condition");
  if (size == 0) throw ContractViolation("dataset size must be positive");
  switch (kind) {
    case Kind::GaussianMixture:
      if (components.size() != condition_count)
        throw ContractViolation("gaussian mixture needs one component per condition");
      for (const auto& c : components) {
        if (c.mean.dim() != dim || c.covariance.size() != dim * dim)
          throw ContractViolation("mixture component does not match dataset dim");
        (void)cholesky(c.covariance, dim);
      }
      break;
    case Kind::TwoMoons:
      if (dim != 2 || condition_count != 2) throw ContractViolation("two-moons is 2-D with two conditions");
      if (!(moon_noise >= 0.0)) throw ContractViolation("moon noise must be nonnegative");
      break;
    case Kind::Checkerboard:
      if (dim != 2 || condition_count != 2) throw ContractViolation("checkerboard is 2-D with two conditions");
      if (board_cells < 2 || !(board_extent > 0.0)) throw ContractViolation("checkerboard needs >= 2 cells and extent > 0");
      break;
    case Kind::SinglePoint:
      if (point.dim() != dim) throw ContractViolation("single point does not match dataset dim");
      break;
  }
}

std::string_view to_string(DatasetSpec::Kind kind) {
  switch (kind) {
    case DatasetSpec::Kind::GaussianMixture: return "gaussian-mixture";
    case DatasetSpec::Kind::TwoMoons: return "two-moons";
    case DatasetSpec::Kind::Checkerboard: return "checkerboard";
    case DatasetSpec::Kind::SinglePoint: return "single-point";
  }
  return "unknown";
}

DatasetSpec::Kind parse_dataset_kind(std::string_view name) {
  if (name == "gaussian-mixture") return DatasetSpec::Kind::GaussianMixture;
  if (name == "two-moons") return DatasetSpec::Kind::TwoMoons;
  if (name == "checkerboard") return DatasetSpec::Kind::Checkerboard;
  if (name == "single-point") return DatasetSpec::Kind::SinglePoint;
  throw ContractViolation("unknown dataset kind '" + std::string(name) + "'");
}

namespace {

Vector draw_sample(const DatasetSpec& spec, std::size_t cond, Rng& rng, const std::vector<std::vector<double>>& factors) {
  switch (spec.kind) {
    case DatasetSpec::Kind::GaussianMixture: {
      const auto& comp = spec.components[cond];
      const auto& l = factors[cond];
      const Vector g = gaussian(rng, spec.dim);
      Vector z = comp.mean;
      for (std::size_t i = 0; i < spec.dim; ++i)
        for (std::size_t j = 0; j <= i; ++j) z[i] += l[i * spec.dim + j] * g[j];
      return z;
    }
    case DatasetSpec::Kind::TwoMoons: {
      const double angle = std::numbers::pi * rng.uniform();
      Vector z = cond == 0 ? Vector{std::cos(angle) - 0.5, std::sin(angle) - 0.25}
                           : Vector{0.5 - std::cos(angle), 0.25 - std::sin(angle)};
      z[0] += spec.moon_noise * rng.normal();
      z[1] += spec.moon_noise * rng.normal();
      return z;
    }
    case DatasetSpec::Kind::Checkerboard: {
      const std::size_t cells = spec.board_cells;
      const std::size_t pick = rng.below(cells_with_parity(spec, cond));
      // Walk cells in row-major order and take the pick-th one of this parity.
      std::size_t seen = 0, row = 0, col = 0;
      for (std::size_t idx = 0; idx < cells * cells; ++idx) {
        const std::size_t r = idx / cells, c = idx % cells;
        if ((r + c) % 2 != cond) continue;
        if (seen++ == pick) {
          row = r;
          col = c;
          break;
        }
      }
      const double size = board_cell_size(spec);
      return Vector{-spec.board_extent + (static_cast<double>(col) + rng.uniform()) * size,
                    -spec.board_extent + (static_cast<double>(row) + rng.uniform()) * size};
    }
    case DatasetSpec::Kind::SinglePoint:
      return spec.point;
  }
  throw ContractViolation("unknown dataset kind");
}

std::vector<std::vector<double>> mixture_factors(const DatasetSpec& spec) {
  std::vector<std::vector<double>> factors;
  if (spec.kind == DatasetSpec::Kind::GaussianMixture)
    for (const auto& c : spec.components) factors.push_back(cholesky(c.covariance, spec.dim));
  return factors;
}

}  // namespace

std::vector<TrainingPair> sample_pairs(const DatasetSpec& spec, std::size_t n, Rng& rng) {
  spec.validate();
  if (n == 0) throw ContractViolation("sample_pairs: n must be positive");
  const auto factors = mixture_factors(spec);
  std::vector<TrainingPair> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    TrainingPair pair;
    pair.cond = rng.below(spec.condition_count);
    pair.z0 = draw_sample(spec, pair.cond, rng, factors);
    out.push_back(std::move(pair));
  }
  return out;
}

std::vector<Vector> sample_condition(const DatasetSpec& spec, std::size_t cond, std::size_t n, Rng& rng) {
  spec.validate();
  if (cond >= spec.condition_count) throw ContractViolation("condition out of range");
  const auto factors = mixture_factors(spec);
  std::vector<Vector> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) out.push_back(draw_sample(spec, cond, rng, factors));
  return out;
}

double log_density(const DatasetSpec& spec, const TrainingPair& pair) {
  if (pair.cond >= spec.condition_count) throw ContractViolation("condition out of range");
  if (pair.z0.dim() != spec.dim) throw ContractViolation("sample does not match dataset dim");
  switch (spec.kind) {
    case DatasetSpec::Kind::GaussianMixture: {
      const auto& comp = spec.components[pair.cond];
      const auto l = cholesky(comp.covariance, spec.dim);
      // Solve L y = (x - mean); log N = -0.5 |y|^2 - sum log L_ii - d/2 log 2pi.
      std::vector<double> y(spec.dim);
      double log_det_half = 0.0;
      for (std::size_t i = 0; i < spec.dim; ++i) {
        double s = pair.z0[i] - comp.mean[i];
        for (std::size_t j = 0; j < i; ++j) s -= l[i * spec.dim + j] * y[j];
        y[i] = s / l[i * spec.dim + i];
        log_det_half += std::log(l[i * spec.dim + i]);
      }
      double quad = 0.0;
      for (double v : y) quad += v * v;
      return -0.5 * quad - log_det_half - 0.5 * static_cast<double>(spec.dim) * std::log(2.0 * std::numbers::pi);
    }
    case DatasetSpec::Kind::Checkerboard: {
      const double size = board_cell_size(spec);
      const double cx = (pair.z0[0] + spec.board_extent) / size;
      const double cy = (pair.z0[1] + spec.board_extent) / size;
      const auto cells = static_cast<double>(spec.board_cells);
      if (cx < 0.0 || cy < 0.0 || cx >= cells || cy >= cells) return -std::numeric_limits<double>::infinity();
      const auto col = static_cast<std::size_t>(cx), row = static_cast<std::size_t>(cy);
      if ((row + col) % 2 != pair.cond) return -std::numeric_limits<double>::infinity();
      return -std::log(static_cast<double>(cells_with_parity(spec, pair.cond)) * size * size);
    }
    case DatasetSpec::Kind::SinglePoint:
      return pair.z0 == spec.point ? 0.0 : -std::numeric_limits<double>::infinity();
    case DatasetSpec::Kind::TwoMoons:
      break;
  }
  throw ContractViolation("log density is not available for " + std::string(to_string(spec.kind)));
}

double ScoreFilter::evaluate(const DatasetSpec& spec, const TrainingPair& pair) const {
  if (score == Score::LogDensity) return log_density(spec, pair);
  if (axis >= pair.z0.dim()) throw ContractViolation("filter axis out of range");
  return pair.z0[axis];
}

std::vector<TrainingPair> filter_subset(std::span<const TrainingPair> pairs, const ScoreFilter& filter,
                                        const DatasetSpec& spec) {
  std::vector<TrainingPair> out;
  for (const auto& p : pairs)
    if (filter.evaluate(spec, p) >= filter.threshold) out.push_back(p);
  return out;
}

std::string_view to_string(DistanceMetric metric) {
  return metric == DistanceMetric::SlicedW2 ? "sliced-w2" : "energy-distance";
}

DistanceMetric parse_distance_metric(std::string_view name) {
  if (name == "sliced-w2") return DistanceMetric::SlicedW2;
  if (name == "energy-distance") return DistanceMetric::Energy;
  throw ContractViolation("unknown distance metric '" + std::string(name) + "'");
}

double wasserstein2_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw ContractViolation("wasserstein2_1d needs nonempty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  // Integrate (F^-1(u) - G^-1(u))^2 over u in [0, 1]; both quantile functions
  // are step functions with breaks at i/na and j/nb. Cross-multiplied integer
  // breakpoints keep the merge exact.
  const std::size_t na = a.size(), nb = b.size();
  const double total = static_cast<double>(na) * static_cast<double>(nb);
  std::size_t i = 0, j = 0;
  std::size_t pos = 0;  // current breakpoint in units of 1 / (na nb)
  double sum = 0.0;
  while (i < na && j < nb) {
    const std::size_t next_a = (i + 1) * nb;
    const std::size_t next_b = (j + 1) * na;
    const std::size_t next = std::min(next_a, next_b);
    const double diff = a[i] - b[j];
    sum += diff * diff * static_cast<double>(next - pos);
    pos = next;
    if (next_a == next) ++i;
    if (next_b == next) ++j;
  }
  return std::sqrt(sum / total);
}

std::vector<Vector> random_directions(std::size_t dim, std::size_t projections, Rng& rng) {
  std::vector<Vector> dirs;
  dirs.reserve(projections);
  while (dirs.size() < projections) {
    Vector v = gaussian(rng, dim);
    const double n = norm(v);
    if (n < 1e-12) continue;
    dirs.push_back(v * (1.0 / n));
  }
  return dirs;
}

double sliced_w2(std::span<const Vector> a, std::span<const Vector> b, std::span<const Vector> directions) {
  if (a.empty() || b.empty()) throw ContractViolation("sliced_w2 needs nonempty samples");
  if (directions.empty()) throw ContractViolation("sliced_w2 needs at least one direction");
  double total = 0.0;
  for (const auto& dir : directions) {
    std::vector<double> pa, pb;
    pa.reserve(a.size());
    pb.reserve(b.size());
    for (const auto& x : a) pa.push_back(dot(x, dir));
    for (const auto& y : b) pb.push_back(dot(y, dir));
    total += wasserstein2_1d(std::move(pa), std::move(pb));
  }
  return total / static_cast<double>(directions.size());
}

double energy_distance(std::span<const Vector> a, std::span<const Vector> b) {
  if (a.empty() || b.empty()) throw ContractViolation("energy_distance needs nonempty samples");
  auto mean_dist = [](std::span<const Vector> x, std::span<const Vector> y) {
    double s = 0.0;
    for (const auto& p : x)
      for (const auto& q : y) {
        require_same_dim(p, q, "energy_distance");
        double d2 = 0.0;
        for (std::size_t i = 0; i < p.dim(); ++i) d2 += (p[i] - q[i]) * (p[i] - q[i]);
        s += std::sqrt(d2);
      }
    return s / (static_cast<double>(x.size()) * static_cast<double>(y.size()));
  };
  const double cross = mean_dist(a, b);
  const double within_a = mean_dist(a, a);
  const double within_b = mean_dist(b, b);
  return std::max(0.0, 2.0 * cross - within_a - within_b);
}

double dataset_distance(std::span<const Vector> a, std::span<const Vector> b, DistanceMetric metric,
                        std::size_t projections, Rng& rng) {
  if (a.empty() || b.empty()) throw ContractViolation("dataset_distance needs nonempty samples");
  if (a.front().dim() != b.front().dim()) throw ContractViolation("dataset_distance: sample dims differ");
  if (metric == DistanceMetric::Energy) return energy_distance(a, b);
  const auto dirs = random_directions(a.front().dim(), projections, rng);
  return sliced_w2(a, b, dirs);
}

void write_dataset_csv(std::ostream& out, const DatasetSpec& spec, std::span<const TrainingPair> pairs) {
  out << "# dim=" << spec.dim << " kind=" << to_string(spec.kind) << '\n';
  out << "cond";
  for (std::size_t i = 0; i < spec.dim; ++i) out << ",x" << i;
  out << '\n';
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& p : pairs) {
    out << p.cond;
    for (double x : p.z0) out << ',' << x;
    out << '\n';
  }
}

LoadedDataset read_dataset_csv(std::istream& in) {
  LoadedDataset out;
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) throw ContractViolation("dataset csv: missing '# dim=.. kind=..' line");
  {
    std::istringstream meta(line.substr(2));
    std::string field;
    bool have_dim = false, have_kind = false;
    while (meta >> field) {
      if (field.rfind("dim=", 0) == 0) {
        out.dim = std::stoul(field.substr(4));
        have_dim = true;
      } else if (field.rfind("kind=", 0) == 0) {
        out.kind = parse_dataset_kind(field.substr(5));
        have_kind = true;
      }
    }
    if (!have_dim || !have_kind || out.dim == 0) throw ContractViolation("dataset csv: malformed header line");
  }
  if (!std::getline(in, line) || line.rfind("cond", 0) != 0) throw ContractViolation("dataset csv: missing column header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    TrainingPair pair;
    if (!std::getline(row, cell, ',')) throw ContractViolation("dataset csv: empty row");
    pair.cond = std::stoul(cell);
    std::vector<double> coords;
    while (std::getline(row, cell, ',')) coords.push_back(std::stod(cell));
    if (coords.size() != out.dim) throw ContractViolation("dataset csv: row has wrong number of coordinates");
    pair.z0 = Vector(std::move(coords));
    out.pairs.push_back(std::move(pair));
  }
  return out;
}

}  // namespace soar

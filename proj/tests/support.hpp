#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "soar/model.hpp"
#include "soar/numerics.hpp"

namespace soar::test {

/// Central differences of `loss` with respect to every parameter entry.
/// Independent of any backward pass: only evaluates the scalar loss.
inline GradSet finite_difference(ParamSet params, const std::function<double(const ParamSet&)>& loss,
                                 double step = 1e-6) {
  GradSet out = GradSet::zeros_like(params);
  for (auto& [name, tensor] : params) {
    auto& g = out.at(name).values;
    for (std::size_t i = 0; i < tensor.values.size(); ++i) {
      const double saved = tensor.values[i];
      tensor.values[i] = saved + step;
      const double up = loss(params);
      tensor.values[i] = saved - step;
      const double down = loss(params);
      tensor.values[i] = saved;
      g[i] = (up - down) / (2.0 * step);
    }
  }
  return out;
}

/// Richardson extrapolation of two central differences, (4 D(h/2) - D(h)) / 3.
/// Truncation error drops to O(h^4), so a larger step can be used and the
/// rounding noise of the loss no longer dominates small entries.
inline GradSet richardson_difference(const ParamSet& params, const std::function<double(const ParamSet&)>& loss,
                                     double step = 1e-3) {
  GradSet coarse = finite_difference(params, loss, step);
  const GradSet fine = finite_difference(params, loss, 0.5 * step);
  for (auto& [name, tensor] : coarse) {
    const auto& f = fine.at(name).values;
    for (std::size_t i = 0; i < tensor.values.size(); ++i) tensor.values[i] = (4.0 * f[i] - tensor.values[i]) / 3.0;
  }
  return coarse;
}

struct GradientComparison {
  double worst_relative = 0.0;
  double worst_absolute_small = 0.0;  ///< over entries below the magnitude floor
  std::size_t compared = 0;
};

/// Relative error per entry. Entries where both values are below `floor`
/// are compared in absolute terms instead, since central differences carry
/// about 1e-10 absolute rounding noise at step 1e-6.
inline GradientComparison compare_gradients(const GradSet& analytic, const GradSet& numeric, double floor = 1e-4) {
  GradientComparison out;
  auto b = numeric.begin();
  for (auto a = analytic.begin(); a != analytic.end(); ++a, ++b) {
    for (std::size_t i = 0; i < a->second.values.size(); ++i) {
      const double x = a->second.values[i];
      const double y = b->second.values[i];
      const double scale = std::max(std::abs(x), std::abs(y));
      if (scale >= floor)
        out.worst_relative = std::max(out.worst_relative, std::abs(x - y) / scale);
      else
        out.worst_absolute_small = std::max(out.worst_absolute_small, std::abs(x - y));
      ++out.compared;
    }
  }
  return out;
}

/// Small model whose output layer is not zero, so every parameter carries
/// gradient.
inline VelocityModel perturbed_model(const ModelShape& shape, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  VelocityModel model = VelocityModel::initialize(shape, rng);
  Rng noise = rng.split("perturb");
  for (auto& [name, t] : model.params())
    for (double& x : t.values) x += scale * (2.0 * noise.uniform() - 1.0);
  return model;
}

inline ModelShape small_shape(std::size_t dim = 2, std::size_t conditions = 2, std::size_t width = 16) {
  ModelShape shape;
  shape.latent_dim = dim;
  shape.condition_count = conditions;
  shape.hidden = {width, width};
  return shape;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& label) {
    path_ = std::filesystem::temp_directory_path() / ("soar-test-" + label + "-" + std::to_string(counter()++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  [[nodiscard]] std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::size_t count_newlines(std::string_view s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

inline std::size_t count_lines(const std::filesystem::path& path) { return count_newlines(slurp(path)); }

}  // namespace soar::test

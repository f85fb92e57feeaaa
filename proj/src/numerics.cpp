#include "soar/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace soar {

bool Vector::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Vector& Vector::operator+=(const Vector& other) {
  require_same_dim(*this, other, "vector +=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Vector& Vector::operator-=(const Vector& other) {
  require_same_dim(*this, other, "vector -=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Vector& Vector::operator*=(double scale) {
  for (double& x : data_) x *= scale;
  return *this;
}

Vector operator+(Vector lhs, const Vector& rhs) { return lhs += rhs; }
Vector operator-(Vector lhs, const Vector& rhs) { return lhs -= rhs; }
Vector operator*(Vector v, double scale) { return v *= scale; }
Vector operator*(double scale, Vector v) { return v *= scale; }

double dot(const Vector& a, const Vector& b) {
  require_same_dim(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) s += a[i] * b[i];
  return s;
}

double squared_norm(const Vector& v) { return dot(v, v); }
double norm(const Vector& v) { return std::sqrt(squared_norm(v)); }

double mean_square(const Vector& v) {
  if (v.empty()) throw ContractViolation("mean_square of an empty vector");
  return squared_norm(v) / static_cast<double>(v.dim());
}

double max_abs_diff(const Vector& a, const Vector& b) {
  require_same_dim(a, b, "max_abs_diff");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

void require_same_dim(const Vector& a, const Vector& b, std::string_view what) {
  if (a.dim() != b.dim())
    throw ContractViolation(std::string(what) + ": dimension mismatch (" + std::to_string(a.dim()) + " vs " +
                            std::to_string(b.dim()) + ")");
}

std::size_t element_count(std::span<const std::size_t> shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> dims, double fill)
    : shape(std::move(dims)), values(element_count(shape), fill) {}

template <typename Tag>
bool NamedTensors<Tag>::all_finite() const {
  for (const auto& [_, t] : tensors_)
    for (double x : t.values)
      if (!std::isfinite(x)) return false;
  return true;
}

template class NamedTensors<ParamTag>;
template class NamedTensors<GradTag>;
template class NamedTensors<MomentTag>;

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed), key_(mix64(seed + kGolden)) {}

Rng Rng::split(std::string_view label) const {
  return Rng(seed_, mix64(key_ ^ mix64(fnv1a(label))));
}

Rng Rng::split(std::uint64_t index) const {
  return Rng(seed_, mix64(key_ + mix64(index ^ 0xD6E8FEB86659FD93ULL)));
}

std::uint64_t Rng::next_u64() {
  ++counter_;
  return mix64(key_ ^ mix64(counter_ * kGolden));
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  // Box-Muller; 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

bool Rng::bernoulli(double p) { return uniform() < p; }

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw ContractViolation("Rng::below(0)");
  return static_cast<std::size_t>(next_u64() % n);
}

Vector gaussian(Rng& rng, std::size_t dim) {
  if (dim == 0) throw ContractViolation("gaussian: dim must be positive");
  Vector v(dim);
  for (double& x : v) x = rng.normal();
  return v;
}

}  // namespace soar

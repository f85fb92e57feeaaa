#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace soar {

/// Raised when a caller breaks an operation's precondition (shape, key set,
/// missing cache, null condition where a real one is required).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Raised when a numeric argument is outside the domain an operation accepts
/// (e.g. a noise level below sigma_min where the operation divides by it).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Dense 64-bit vector used for latents, velocities and noise draws.
class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t dim, double fill = 0.0) : data_(dim, fill) {}
  Vector(std::initializer_list<double> values) : data_(values) {}
  explicit Vector(std::vector<double> values) : data_(std::move(values)) {}

  [[nodiscard]] std::size_t dim() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  [[nodiscard]] std::span<double> values() { return data_; }
  [[nodiscard]] std::span<const double> values() const { return data_; }
  [[nodiscard]] const std::vector<double>& raw() const { return data_; }

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  [[nodiscard]] bool all_finite() const;

  Vector& operator+=(const Vector& other);
  Vector& operator-=(const Vector& other);
  Vector& operator*=(double scale);

  friend bool operator==(const Vector&, const Vector&) = default;

 private:
  std::vector<double> data_;
};

Vector operator+(Vector lhs, const Vector& rhs);
Vector operator-(Vector lhs, const Vector& rhs);
Vector operator*(Vector v, double scale);
Vector operator*(double scale, Vector v);

double dot(const Vector& a, const Vector& b);
double squared_norm(const Vector& v);
double norm(const Vector& v);
/// Mean of squared entries, i.e. ||v||^2 / dim.
double mean_square(const Vector& v);
/// Largest absolute entry of a - b.
double max_abs_diff(const Vector& a, const Vector& b);

/// Throws ContractViolation unless both vectors have the same dimension.
void require_same_dim(const Vector& a, const Vector& b, std::string_view what);

/// A named n-d array stored row-major.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims, double fill = 0.0);

  [[nodiscard]] std::size_t size() const { return values.size(); }
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

std::size_t element_count(std::span<const std::size_t> shape);

/// Ordered map from parameter name to tensor. Iteration is lexicographic by
/// name. The tag keeps parameters, gradients and optimizer moments apart at
/// the type level while sharing one implementation.
template <typename Tag>
class NamedTensors {
 public:
  using Map = std::map<std::string, Tensor, std::less<>>;

  NamedTensors() = default;

  /// Same keys and shapes, all zero.
  template <typename OtherTag>
  static NamedTensors zeros_like(const NamedTensors<OtherTag>& other) {
    NamedTensors out;
    for (const auto& [name, tensor] : other) out.add(name, Tensor(tensor.shape));
    return out;
  }

  void add(std::string name, Tensor tensor) {
    if (tensor.values.size() != element_count(tensor.shape))
      throw ContractViolation("tensor '" + name + "' payload does not match its shape");
    auto [it, inserted] = tensors_.emplace(std::move(name), std::move(tensor));
    if (!inserted) throw ContractViolation("duplicate tensor name '" + it->first + "'");
  }

  [[nodiscard]] bool contains(std::string_view name) const { return tensors_.find(name) != tensors_.end(); }

  [[nodiscard]] const Tensor& at(std::string_view name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ContractViolation("unknown tensor '" + std::string(name) + "'");
    return it->second;
  }
  [[nodiscard]] Tensor& at(std::string_view name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ContractViolation("unknown tensor '" + std::string(name) + "'");
    return it->second;
  }

  [[nodiscard]] std::size_t size() const { return tensors_.size(); }
  [[nodiscard]] std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.size();
    return n;
  }

  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }

  /// True when both sets have identical names and shapes.
  template <typename OtherTag>
  [[nodiscard]] bool same_layout(const NamedTensors<OtherTag>& other) const {
    if (size() != other.size()) return false;
    auto a = begin();
    auto b = other.begin();
    for (; a != end(); ++a, ++b)
      if (a->first != b->first || a->second.shape != b->second.shape) return false;
    return true;
  }

  /// this += scale * other, key by key.
  template <typename OtherTag>
  void add_scaled(const NamedTensors<OtherTag>& other, double scale) {
    if (!same_layout(other)) throw ContractViolation("tensor sets differ in layout");
    auto b = other.begin();
    for (auto a = begin(); a != end(); ++a, ++b) {
      auto& dst = a->second.values;
      const auto& src = b->second.values;
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
    }
  }

  void scale(double factor) {
    for (auto& [_, t] : tensors_)
      for (double& x : t.values) x *= factor;
  }

  [[nodiscard]] double squared_norm() const {
    double s = 0.0;
    for (const auto& [_, t] : tensors_)
      for (double x : t.values) s += x * x;
    return s;
  }

  [[nodiscard]] bool all_finite() const;

  friend bool operator==(const NamedTensors&, const NamedTensors&) = default;

 private:
  Map tensors_;
};

using ParamSet = NamedTensors<struct ParamTag>;
using GradSet = NamedTensors<struct GradTag>;
using MomentSet = NamedTensors<struct MomentTag>;

/// Largest absolute entrywise difference between two sets with equal layout.
template <typename A, typename B>
double max_abs_diff(const NamedTensors<A>& a, const NamedTensors<B>& b) {
  if (!a.same_layout(b)) throw ContractViolation("tensor sets differ in layout");
  double worst = 0.0;
  auto ib = b.begin();
  for (auto ia = a.begin(); ia != a.end(); ++ia, ++ib) {
    const auto& x = ia->second.values;
    const auto& y = ib->second.values;
    for (std::size_t i = 0; i < x.size(); ++i) {
      double d = x[i] > y[i] ? x[i] - y[i] : y[i] - x[i];
      if (!(d <= worst)) worst = d;
    }
  }
  return worst;
}

/// Counter-based generator. Substreams derived by label are independent of
/// how many draws were taken from the parent, so adding a consumer never
/// perturbs another consumer's stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  [[nodiscard]] Rng split(std::string_view label) const;
  [[nodiscard]] Rng split(std::uint64_t index) const;

  [[nodiscard]] std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  double normal();
  /// True with probability p.
  bool bernoulli(double p);
  std::size_t below(std::size_t n);

 private:
  Rng(std::uint64_t seed, std::uint64_t key) : seed_(seed), key_(key) {}

  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Standard normal vector drawn from `rng`.
Vector gaussian(Rng& rng, std::size_t dim);

}  // namespace soar

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "soar/numerics.hpp"

namespace soar {

/// Class label of a training pair; nullopt selects the unconditional row.
using Condition = std::optional<std::size_t>;
inline constexpr Condition kNullCondition = std::nullopt;

/// Anything that maps (state, condition, time) to a velocity. Samplers and
/// diagnostics take this so analytic oracles and trained models are
/// interchangeable.
class VelocityField {
 public:
  virtual ~VelocityField() = default;

  [[nodiscard]] virtual std::size_t latent_dim() const = 0;

  [[nodiscard]] virtual std::vector<Vector> velocity_batch(std::span<const Vector> z, std::span<const Condition> cond,
                                                           std::span<const double> t) const = 0;

  [[nodiscard]] Vector velocity(const Vector& z, Condition cond, double t) const;
};

struct ModelShape {
  std::size_t latent_dim = 2;
  std::size_t condition_count = 1;
  std::size_t embed_dim = 8;
  /// Number of sinusoidal frequencies added next to the raw time feature.
  std::size_t time_frequencies = 4;
  std::vector<std::size_t> hidden = {128, 128, 128};

  /// latent + embedding + raw time + sin/cos pair per frequency.
  [[nodiscard]] std::size_t input_width() const { return latent_dim + embed_dim + 1 + 2 * time_frequencies; }
  /// Row of the embedding table used for the null condition.
  [[nodiscard]] std::size_t null_row() const { return condition_count; }

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

/// Activations kept by a forward pass for the matching backward pass.
class ForwardCache {
 public:
  [[nodiscard]] bool filled() const { return filled_; }
  [[nodiscard]] std::size_t batch_size() const { return rows_.size(); }

 private:
  friend class VelocityModel;
  bool filled_ = false;
  std::vector<std::size_t> rows_;            // embedding row per item
  std::vector<Eigen::MatrixXd> layer_input_;  // [width_in, batch] per layer
  std::vector<Eigen::MatrixXd> pre_act_;      // hidden pre-activations
};

/// MLP velocity network: [z, embed(c), t, sin/cos(pi 2^k t)] -> SiLU hidden
/// layers -> affine output of width latent_dim.
///
/// Parameters are named "embedding" ([conditions + 1, embed_dim]) and
/// "layer<i>.weight" ([out, in], row-major) / "layer<i>.bias" ([out]).
class VelocityModel final : public VelocityField {
 public:
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero output layer.
  static VelocityModel initialize(const ModelShape& shape, Rng& rng);
  /// Rebuilds a model from a parameter set, inferring its shape.
  static VelocityModel from_params(ParamSet params);

  [[nodiscard]] const ModelShape& shape() const { return shape_; }
  [[nodiscard]] const ParamSet& params() const { return params_; }
  [[nodiscard]] ParamSet& params() { return params_; }
  [[nodiscard]] std::size_t layer_count() const { return shape_.hidden.size() + 1; }

  [[nodiscard]] std::size_t latent_dim() const override { return shape_.latent_dim; }

  std::vector<Vector> forward(std::span<const Vector> z, std::span<const Condition> cond, std::span<const double> t,
                              ForwardCache* cache = nullptr) const;
  Vector forward(const Vector& z, Condition cond, double t, ForwardCache* cache = nullptr) const;

  /// Accumulates into `grads` the parameter gradient of a scalar loss whose
  /// gradient with respect to output item j is grad_out[j].
  void backward(const ForwardCache& cache, std::span<const Vector> grad_out, GradSet& grads) const;
  [[nodiscard]] GradSet backward(const ForwardCache& cache, std::span<const Vector> grad_out) const;

  [[nodiscard]] std::vector<Vector> velocity_batch(std::span<const Vector> z, std::span<const Condition> cond,
                                                   std::span<const double> t) const override {
    return forward(z, cond, t);
  }

 private:
  VelocityModel(ModelShape shape, ParamSet params) : shape_(std::move(shape)), params_(std::move(params)) {}

  std::size_t embedding_row(Condition cond) const;

  ModelShape shape_;
  ParamSet params_;
};

std::string layer_weight_name(std::size_t layer);
std::string layer_bias_name(std::size_t layer);
inline constexpr const char* kEmbeddingName = "embedding";

}  // namespace soar

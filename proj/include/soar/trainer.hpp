#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "soar/adam.hpp"
#include "soar/data.hpp"
#include "soar/model.hpp"
#include "soar/objective.hpp"

namespace soar {

enum class TrainMethod { Sft, Soar };

std::string_view to_string(TrainMethod method);
TrainMethod parse_train_method(std::string_view name);

struct TrainSettings {
  std::size_t steps = 3000;
  std::size_t batch_size = 32;
  AdamHyper adam;
};

struct StepRecord {
  std::size_t step = 0;  ///< 1-based index of the optimizer step just taken
  LossBreakdown loss;
  double grad_norm = 0.0;
  /// False when the loss or gradient was non-finite; the update is skipped.
  bool finite = true;
};

/// Owns a model, its optimizer state and a fixed training set. Batches are
/// drawn with replacement from `rng.split("batch").split(step)`, step noise
/// from `rng.split("step").split(step)`.
class Trainer {
 public:
  Trainer(VelocityModel model, TrainMethod method, SoarConfig config, TrainSettings settings,
          std::vector<TrainingPair> dataset, Rng rng);

  /// Restores optimizer state, e.g. from a checkpoint.
  void set_optimizer_state(AdamState state) { adam_ = std::move(state); }

  StepRecord step();

  [[nodiscard]] const VelocityModel& model() const { return model_; }
  [[nodiscard]] const AdamState& optimizer_state() const { return adam_; }
  [[nodiscard]] std::size_t steps_taken() const { return adam_.step; }
  [[nodiscard]] const SoarConfig& config() const { return config_; }

 private:
  VelocityModel model_;
  TrainMethod method_;
  SoarConfig config_;
  TrainSettings settings_;
  std::vector<TrainingPair> dataset_;
  Rng rng_;
  AdamState adam_;
};

}  // namespace soar

#include "soar/trainer.hpp"

#include <cmath>
#include <string>

namespace soar {

std::string_view to_string(TrainMethod method) { return method == TrainMethod::Sft ? "sft" : "soar"; }

TrainMethod parse_train_method(std::string_view name) {
  if (name == "sft") return TrainMethod::Sft;
  if (name == "soar") return TrainMethod::Soar;
  throw ContractViolation("unknown method '" + std::string(name) + "'");
}

Trainer::Trainer(VelocityModel model, TrainMethod method, SoarConfig config, TrainSettings settings,
                 std::vector<TrainingPair> dataset, Rng rng)
    : model_(std::move(model)),
      method_(method),
      config_(config),
      settings_(settings),
      dataset_(std::move(dataset)),
      rng_(rng),
      adam_(AdamState::zeros_like(model_.params())) {
  config_.validate();
  if (dataset_.empty()) throw ContractViolation("trainer needs a nonempty dataset");
  if (settings_.batch_size == 0) throw ContractViolation("batch size must be positive");
}

StepRecord Trainer::step() {
  const std::size_t index = adam_.step + 1;
  Rng batch_rng = rng_.split("batch").split(index);
  std::vector<TrainingPair> batch;
  batch.reserve(settings_.batch_size);
  for (std::size_t k = 0; k < settings_.batch_size; ++k) batch.push_back(dataset_[batch_rng.below(dataset_.size())]);

  StepInputs inputs;
  inputs.batch = batch;
  inputs.rng = rng_.split("step").split(index);
  const StepResult result = method_ == TrainMethod::Sft ? sft_training_step(model_, inputs, config_)
                                                        : soar_training_step(model_, inputs, config_);

  StepRecord record;
  record.step = index;
  record.loss = result.loss;
  record.grad_norm = std::sqrt(result.grads.squared_norm());
  record.finite = std::isfinite(record.loss.normalized_total) && std::isfinite(record.grad_norm);
  if (record.finite) adam_step(model_.params(), result.grads, adam_, settings_.adam);
  return record;
}

}  // namespace soar

#include <doctest.h>

#include <cmath>

#include "soar/objective.hpp"
#include "soar/trainer.hpp"
#include "support.hpp"

using namespace soar;

namespace {

std::vector<TrainingPair> random_batch(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TrainingPair> out;
  for (std::size_t j = 0; j < n; ++j) out.push_back({gaussian(rng, dim), j % 2});
  return out;
}

SoarConfig busy_config() {
  SoarConfig c;
  c.K = 8;
  c.N = 3;
  c.M = 3;
  c.w_cfg = 2.0;
  c.eta = 0.6;
  c.lambda = 0.7;
  c.weighting = LossWeighting{LossWeighting::Kind::SigmaSquared};
  return c;
}

}  // namespace

TEST_CASE("one-step rollout times") {
  SoarConfig c;
  c.K = 10;
  const Vector z{0.0, 0.0}, v{1.0, 1.0};
  CHECK(one_step_from_velocity(z, v, 0.3, c).t1 == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(one_step_from_velocity(z, v, 0.05, c).t1 == 0.0);
  CHECK(one_step_from_velocity(z, v, 0.05, c).z_hat == Vector{-0.05, -0.05});
  CHECK_THROWS_AS((void)one_step_from_velocity(z, v, 0.0, c), ContractViolation);
}

TEST_CASE("the exact ray velocity produces no deviation") {
  Rng rng(1);
  SoarConfig c;
  c.K = 7;
  for (int trial = 0; trial < 200; ++trial) {
    const Vector z0 = gaussian(rng, 3), z1 = gaussian(rng, 3);
    const double t0 = rng.uniform(0.01, 1.0);
    const ConstantVelocityField exact(gt_velocity(z0, z1));
    const auto r = one_step_rollout(exact, interpolate(z0, z1, t0), 0, t0, c);
    CHECK(norm(deviation(r.z_hat, z0, z1, r.sigma_t1)) <= 1e-12);
  }
}

TEST_CASE("deviation of a zero-velocity step") {
  SoarConfig c;
  c.K = 10;
  const Vector z0{0.0, 0.0}, z1{1.0, 1.0};
  const auto r = one_step_from_velocity(interpolate(z0, z1, 0.5), Vector{0.0, 0.0}, 0.5, c);
  const Vector d = deviation(r.z_hat, z0, z1, r.sigma_t1);
  CHECK(max_abs_diff(d, Vector{0.1, 0.1}) <= 1e-15);

  c.K = 20;
  const auto half = one_step_from_velocity(interpolate(z0, z1, 0.5), Vector{0.0, 0.0}, 0.5, c);
  CHECK(norm(deviation(half.z_hat, z0, z1, half.sigma_t1)) == doctest::Approx(norm(d) / 2).epsilon(1e-13));
}

TEST_CASE("renoising examples") {
  Rng rng(2);
  const Vector z_hat{0.4, -0.3}, z1{1.5, 2.0};

  auto s = renoise(z_hat, z1, 0.2, 0.2, RenoiseMode::SharedZ1, rng);
  CHECK(s.alpha == 0.0);
  CHECK(s.z_aux == z_hat);
  CHECK(s.valid);

  s = renoise(z_hat, z1, 0.2, 1.0, RenoiseMode::SharedZ1, rng);
  CHECK(s.alpha == 1.0);
  CHECK(s.z_aux == z1);

  s = renoise(z_hat, z1, 0.2, 0.6, RenoiseMode::SharedZ1, rng);
  CHECK(s.alpha == doctest::Approx(0.5).epsilon(1e-15));

  CHECK_FALSE(renoise(z_hat, z1, 1.0, 1.0, RenoiseMode::SharedZ1, rng).valid);
  CHECK_FALSE(renoise(z_hat, z1, 0.0, 0.0005, RenoiseMode::SharedZ1, rng).valid);
  CHECK_THROWS_AS((void)renoise(z_hat, z1, 0.5, 0.4, RenoiseMode::SharedZ1, rng), ContractViolation);

  const auto fresh = renoise(z_hat, z1, 0.2, 1.0, RenoiseMode::FreshZ1, rng);
  CHECK(fresh.z_aux == fresh.noise);
  CHECK(fresh.z_aux != z1);
}

TEST_CASE("correction target examples") {
  CHECK(correction_target(Vector{1, 1}, Vector{0, 0}, 0.5) == Vector{2, 2});
  CHECK(correction_target(Vector{0.3, 0.7}, Vector{0.3, 0.7}, 0.5) == Vector{0, 0});
  CHECK_THROWS_AS((void)correction_target(Vector{1, 1}, Vector{0, 0}, 0.0005), DomainError);

  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const Vector z0 = gaussian(rng, 4), z1 = gaussian(rng, 4);
    const double sigma = rng.uniform(0.01, 1.0);
    CHECK(max_abs_diff(correction_target(interpolate(z0, z1, sigma), z0, sigma), gt_velocity(z0, z1)) <= 1e-12);
  }
}

TEST_CASE("shared re-noising keeps the deviation bounded; fresh re-noising does not") {
  Rng rng(4);
  SoarConfig c;
  c.K = 5;
  std::size_t fresh_nonzero = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Vector z0 = gaussian(rng, 3), z1 = gaussian(rng, 3), v = gaussian(rng, 3);
    const double t0 = rng.uniform(0.2, 1.0);
    const auto r = one_step_from_velocity(interpolate(z0, z1, t0), v, t0, c);
    const Vector delta = deviation(r.z_hat, z0, z1, r.sigma_t1);
    const double sigma_aux = rng.uniform(r.sigma_t1, 1.0);

    const auto s = renoise(r.z_hat, z1, r.sigma_t1, sigma_aux, RenoiseMode::SharedZ1, rng);
    const Vector off = s.z_aux - interpolate(z0, z1, sigma_aux);
    CHECK(std::abs(norm(off) - (1.0 - s.alpha) * norm(delta)) <= 1e-12);

    const Vector vcorr_gap = correction_target(s.z_aux, z0, sigma_aux) - gt_velocity(z0, z1);
    CHECK(max_abs_diff(vcorr_gap, ((1.0 - s.alpha) / sigma_aux) * delta) <= 1e-12);

    const auto f = renoise(r.z_hat, z1, r.sigma_t1, sigma_aux, RenoiseMode::FreshZ1, rng);
    const double residual = std::abs(norm(f.z_aux - interpolate(z0, z1, sigma_aux)) - (1.0 - f.alpha) * norm(delta));
    if (residual > 1e-6) ++fresh_nonzero;
  }
  CHECK(fresh_nonzero > 900);
}

TEST_CASE("correction loss term") {
  Rng rng(5);
  const ModelShape shape = test::small_shape();
  const auto zero = VelocityModel::initialize(shape, rng);
  SoarConfig c;
  OffTrajectoryState s;
  s.z_aux = Vector{1.0, 2.0};
  s.sigma_aux = 0.5;
  s.valid = true;
  const Vector z0{0.0, 1.0};
  // target = [2, 2], mean square 4
  CHECK(corr_loss_term(zero, s, z0, 0, c, nullptr) == doctest::Approx(4.0).epsilon(1e-15));
  c.weighting = LossWeighting{LossWeighting::Kind::SigmaSquared};
  CHECK(corr_loss_term(zero, s, z0, 0, c, nullptr) == doctest::Approx(1.0).epsilon(1e-15));

  s.valid = false;
  GradSet g = GradSet::zeros_like(zero.params());
  CHECK(corr_loss_term(zero, s, z0, 0, c, &g) == 0.0);
  CHECK(g.squared_norm() == 0.0);
}

TEST_CASE("loss aggregation") {
  const auto l = LossBreakdown::aggregate(3.0, 5.0, 2, 6, 1.0);
  CHECK(l.normalized_total == doctest::Approx(1.0));
  for (double lambda : {0.0, 0.25, 2.0, 10.0}) {
    const auto m = LossBreakdown::aggregate(3.0, 5.0, 2, 6, lambda);
    CHECK(m.normalized_total == doctest::Approx((3.0 + lambda * 5.0) / (2.0 + lambda * 6.0)).epsilon(1e-15));
  }
  CHECK(LossBreakdown::aggregate(0.0, 0.0, 0, 0, 1.0).normalized_total == 0.0);
}

TEST_CASE("two pairs with three auxiliary points each normalize by eight") {
  const auto model = test::perturbed_model(test::small_shape(), 6);
  const auto batch = random_batch(2, 2, 7);
  SoarConfig c;
  c.N = 3;
  c.lambda = 1.0;
  c.M = 1;
  StepInputs in;
  in.batch = batch;
  in.rng = Rng(8);
  const auto r = soar_training_step(model, in, c);
  REQUIRE(r.loss.count_P == 6);
  CHECK(r.loss.count_B == 2);
  CHECK(r.loss.normalized_total * 8.0 == doctest::Approx(r.loss.loss_base_sum + r.loss.loss_corr_sum).epsilon(1e-14));

  // Two single-pair shards give the same result as one shard.
  const std::vector<std::size_t> halves{1, 1};
  in.shard_sizes = halves;
  const auto sharded = soar_training_step(model, in, c);
  CHECK(std::abs(sharded.loss.normalized_total - r.loss.normalized_total) <= 1e-12);
}

TEST_CASE("degenerate correction settings reduce to the supervised step") {
  const auto model = test::perturbed_model(test::small_shape(), 9);
  const auto batch = random_batch(6, 2, 10);
  StepInputs in;
  in.batch = batch;
  in.rng = Rng(11);
  SoarConfig c = busy_config();
  const auto sft = sft_training_step(model, in, c);
  CHECK(sft.loss.count_P == 0);
  CHECK(sft.rollout_velocities.empty());

  SoarConfig no_aux = c;
  no_aux.N = 0;
  const auto a = soar_training_step(model, in, no_aux);
  SoarConfig no_weight = c;
  no_weight.lambda = 0.0;
  const auto b = soar_training_step(model, in, no_weight);
  for (const auto* r : {&a, &b}) {
    CHECK(r->loss.count_P == 0);
    CHECK(r->loss.normalized_total == sft.loss.normalized_total);
    CHECK(r->grads == sft.grads);
  }
}

TEST_CASE("zero model on one pair has the plain flow-matching loss") {
  Rng init(12);
  const auto zero = VelocityModel::initialize(test::small_shape(), init);
  const std::vector<TrainingPair> batch{{Vector{0.5, -1.0}, 0}};
  StepInputs in;
  in.batch = batch;
  in.rng = Rng(13);
  SoarConfig c;
  c.cond_dropout = 0.0;
  const auto r = sft_training_step(zero, in, c);
  // The step draws z1 from the per-item "z1" stream.
  Rng z1_rng = in.rng.split("sample").split(0).split("z1");
  const Vector z1 = gaussian(z1_rng, 2);
  CHECK(r.loss.normalized_total == doctest::Approx(mean_square(z1 - batch[0].z0)).epsilon(1e-14));
}

TEST_CASE("any shard layout gives the same loss and gradient") {
  const auto model = test::perturbed_model(test::small_shape(), 14);
  const auto batch = random_batch(4, 2, 15);
  const SoarConfig c = busy_config();
  StepInputs in;
  in.batch = batch;
  in.rng = Rng(16);
  const auto whole = soar_training_step(model, in, c);
  CHECK(whole.loss.count_P > 0);

  const std::vector<std::vector<std::size_t>> layouts{{4}, {1, 3}, {3, 1}, {2, 2}, {1, 1, 2}, {1, 1, 1, 1}};
  for (const auto& layout : layouts) {
    in.shard_sizes = layout;
    const auto r = soar_training_step(model, in, c);
    CHECK(r.loss.count_B == whole.loss.count_B);
    CHECK(r.loss.count_P == whole.loss.count_P);
    CHECK(std::abs(r.loss.normalized_total - whole.loss.normalized_total) <= 1e-12);
    CHECK(max_abs_diff(r.grads, whole.grads) <= 1e-12);
  }
  const std::vector<std::size_t> wrong{1, 2};
  in.shard_sizes = wrong;
  CHECK_THROWS_AS((void)soar_training_step(model, in, c), ContractViolation);
}

TEST_CASE("no gradient flows through the guided rollout velocity") {
  const auto model = test::perturbed_model(test::small_shape(2, 2, 12), 17);
  const auto batch = random_batch(3, 2, 18);
  const SoarConfig c = busy_config();
  StepInputs in;
  in.batch = batch;
  in.rng = Rng(19);
  const auto live = soar_training_step(model, in, c);
  REQUIRE(live.rollout_velocities.size() == batch.size());

  const std::vector<Vector> frozen = live.rollout_velocities;
  in.frozen_rollout_velocities = &frozen;
  const auto held = soar_training_step(model, in, c);
  CHECK(max_abs_diff(held.grads, live.grads) <= 1e-12);

  // Derivative of the objective with the rollout velocities held fixed.
  const GradSet fd = test::finite_difference(model.params(), [&](const ParamSet& p) {
    return soar_training_step(VelocityModel::from_params(p), in, c).loss.normalized_total;
  });
  const auto cmp = test::compare_gradients(live.grads, fd);
  CHECK(cmp.worst_relative <= 1e-5);
  CHECK(cmp.worst_absolute_small <= 1e-9);

  // Letting the rollout velocity move with the parameters changes the
  // derivative, so the comparison above is not vacuous.
  in.frozen_rollout_velocities = nullptr;
  const GradSet fd_live = test::finite_difference(model.params(), [&](const ParamSet& p) {
    return soar_training_step(VelocityModel::from_params(p), in, c).loss.normalized_total;
  });
  CHECK(max_abs_diff(fd_live, fd) > 1e-6);
}

TEST_CASE("supervised training lowers the loss on a two-component mixture") {
  const DatasetSpec spec = DatasetSpec::circle_mixture(2, 2.0, 0.3);
  Rng data_rng(20);
  auto data = sample_pairs(spec, 512, data_rng);
  Rng init(21);
  TrainSettings settings;
  settings.batch_size = 32;
  settings.adam.lr = 3e-3;
  Trainer trainer(VelocityModel::initialize(test::small_shape(2, 2, 32), init), TrainMethod::Sft, SoarConfig{},
                  settings, data, Rng(22));
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 200; ++i) {
    const auto rec = trainer.step();
    REQUIRE(rec.finite);
    if (i < 20) first += rec.loss.normalized_total;
    if (i >= 180) last += rec.loss.normalized_total;
  }
  CHECK(last < 0.8 * first);
  CHECK(trainer.steps_taken() == 200);
}

TEST_CASE("config validation") {
  SoarConfig c;
  CHECK_NOTHROW(c.validate());
  for (auto mutate : std::vector<void (*)(SoarConfig&)>{
           [](SoarConfig& x) { x.K = 0; }, [](SoarConfig& x) { x.M = 0; }, [](SoarConfig& x) { x.lambda = -1; },
           [](SoarConfig& x) { x.eta = 1.5; }, [](SoarConfig& x) { x.sigma_min = 0.2; },
           [](SoarConfig& x) { x.cond_dropout = 2; }}) {
    SoarConfig bad;
    mutate(bad);
    CHECK_THROWS_AS(bad.validate(), ContractViolation);
  }
  CHECK(parse_renoise_mode(to_string(RenoiseMode::FreshZ1)) == RenoiseMode::FreshZ1);
  CHECK(parse_t0_sampling(to_string(T0Sampling::Uniform01)) == T0Sampling::Uniform01);
  CHECK_THROWS_AS((void)parse_renoise_mode("other"), ContractViolation);

  Rng rng(23);
  c.K = 4;
  for (int i = 0; i < 1000; ++i) {
    const double t = sample_t0(rng, c);
    CHECK(t >= 0.25);
    CHECK(t <= 1.0);
  }
}

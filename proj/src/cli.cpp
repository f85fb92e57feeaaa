#include "soar/cli.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include <CLI11.hpp>

#include "soar/flow.hpp"
#include "soar/sampler.hpp"
#include "soar/trainer.hpp"

namespace soar::cli {

namespace fs = std::filesystem;

namespace {

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  return out;
}

/// Tracks emitted files and writes the manifest at the end of a command.
class RunDir {
 public:
  RunDir(fs::path root, std::string command, const RunConfig& config) : root_(std::move(root)) {
    fs::create_directories(root_);
    manifest_.command = std::move(command);
    manifest_.config_snapshot = config.serialize();
    manifest_.seed = config.seed;
    manifest_.started = utc_now();
    write_text("config.txt", manifest_.config_snapshot);
  }

  [[nodiscard]] fs::path path(const std::string& rel) const { return root_ / rel; }

  std::ofstream open(const std::string& rel) {
    fs::create_directories(path(rel).parent_path());
    note(rel);
    return open_out(path(rel));
  }

  void write_text(const std::string& rel, const std::string& text) { open(rel) << text; }

  void write_json(const std::string& rel, const nlohmann::json& j) { open(rel) << j.dump(2) << '\n'; }

  void write_model(const std::string& rel, const ParamSet& params, const AdamState* adam) {
    fs::create_directories(path(rel).parent_path());
    write_checkpoint(path(rel), params, adam);
    note(rel);
    manifest_.checkpoints.push_back(rel);
  }

  void finish() {
    manifest_.finished = utc_now();
    note("manifest.json");
    std::ofstream out = open_out(path("manifest.json"));
    out << manifest_.to_json().dump(2) << '\n';
  }

 private:
  void note(const std::string& rel) {
    if (std::find(manifest_.files.begin(), manifest_.files.end(), rel) == manifest_.files.end())
      manifest_.files.push_back(rel);
  }

  fs::path root_;
  RunManifest manifest_;
};

std::string checkpoint_name(std::size_t step) {
  std::ostringstream ss;
  ss << "checkpoints/step_" << std::setw(6) << std::setfill('0') << step << ".ckpt";
  return ss.str();
}

std::vector<TrainingPair> training_set(const RunConfig& config, const Rng& master) {
  const DatasetSpec spec = config.dataset();
  Rng data_rng = master.split("data");
  std::vector<TrainingPair> pairs = sample_pairs(spec, spec.size, data_rng);
  if (const auto filter = config.filter()) {
    pairs = filter_subset(pairs, *filter, spec);
    if (pairs.empty()) throw std::runtime_error("filter removed every training pair");
  }
  return pairs;
}

int train_oracle(const RunConfig& config, RunDir& dir, std::ostream& log) {
  ParamSet params;
  const auto& p = config.data.point;
  Tensor point(std::vector<std::size_t>{p.size()});
  point.values = p;
  params.add(kOracleTensor, std::move(point));
  dir.open("train.csv") << "step,loss_base,loss_corr,loss_total,count_B,count_P,grad_norm\n";
  dir.write_model("checkpoints/final.ckpt", params, nullptr);
  dir.finish();
  log << "wrote analytic single-point field\n";
  return kOk;
}

template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << " (key: " << e.key() << ")\n";
    return kBadConfig;
  } catch (const CheckpointError& e) {
    err << "error: corrupt checkpoint: " << e.what() << '\n';
    return kCorruptCheckpoint;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

std::unique_ptr<VelocityField> field_for_dataset(const fs::path& checkpoint, const RunConfig& config) {
  auto field = load_field(read_checkpoint(checkpoint), config.soar.schedule);
  const DatasetSpec spec = config.dataset();
  if (field->latent_dim() != spec.dim)
    throw std::runtime_error("checkpoint latent dim " + std::to_string(field->latent_dim()) +
                             " does not match dataset dim " + std::to_string(spec.dim));
  if (const auto* model = dynamic_cast<const VelocityModel*>(field.get());
      model && model->shape().condition_count != spec.condition_count)
    throw std::runtime_error("checkpoint condition count does not match the dataset");
  return field;
}

}  // namespace

nlohmann::json RunManifest::to_json() const {
  return {{"command", command},     {"config", config_snapshot}, {"seed", seed},
          {"started", started},     {"finished", finished},      {"checkpoints", checkpoints},
          {"files", files},         {"version", version}};
}

RunConfig resolve_config(const GlobalOptions& options) {
  RunConfig config;
  if (options.config) config = parse_config(read_text(*options.config));
  apply_overrides(config, options.overrides);
  if (options.seed) config.seed = *options.seed;
  config.validate();
  return config;
}

std::unique_ptr<VelocityField> load_field(const Checkpoint& checkpoint, const NoiseSchedule& schedule) {
  if (checkpoint.params.contains(kOracleTensor))
    return std::make_unique<SinglePointOracle>(Vector(checkpoint.params.at(kOracleTensor).values), schedule);
  try {
    return std::make_unique<VelocityModel>(VelocityModel::from_params(checkpoint.params));
  } catch (const ContractViolation& e) {
    throw CheckpointError(std::string("not a velocity model: ") + e.what());
  }
}

DiagnoseMode parse_diagnose_mode(const std::string& name) {
  if (name == "gap") return DiagnoseMode::Gap;
  if (name == "bound-audit") return DiagnoseMode::BoundAudit;
  if (name == "endpoint") return DiagnoseMode::Endpoint;
  throw std::invalid_argument("unknown diagnose mode '" + name + "'");
}

AblationAxis parse_ablation_axis(const std::string& name) {
  if (name == "branches") return AblationAxis::Branches;
  if (name == "renoise") return AblationAxis::Renoise;
  throw std::invalid_argument("unknown ablation axis '" + name + "'");
}

std::vector<MethodArm> ablation_arms(const RunConfig& config, AblationAxis axis) {
  MethodArm a{"", TrainMethod::Soar, config.soar};
  MethodArm b = a;
  if (axis == AblationAxis::Branches) {
    a.name = "M=1";
    a.config.M = 1;
    b.name = "M=2";
    b.config.M = 2;
  } else {
    a.name = std::string(to_string(RenoiseMode::SharedZ1));
    a.config.renoise = RenoiseMode::SharedZ1;
    b.name = std::string(to_string(RenoiseMode::FreshZ1));
    b.config.renoise = RenoiseMode::FreshZ1;
  }
  return {a, b};
}

int cmd_train(const GlobalOptions& options, std::ostream& log, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig config = resolve_config(options);
    RunDir dir(options.out, "train", config);
    if (config.method == "oracle") return train_oracle(config, dir, log);

    const Rng master(config.seed);
    std::vector<TrainingPair> pairs = training_set(config, master);
    {
      std::ofstream data = dir.open("dataset.csv");
      write_dataset_csv(data, config.dataset(), pairs);
    }
    Rng init_rng = master.split("init");
    Trainer trainer(VelocityModel::initialize(config.model_shape(), init_rng), parse_train_method(config.method),
                    config.soar, config.train, std::move(pairs), master.split("training"));

    std::ofstream csv = dir.open("train.csv");
    csv << "step,loss_base,loss_corr,loss_total,count_B,count_P,grad_norm\n";
    for (std::size_t s = 0; s < config.train.steps; ++s) {
      const StepRecord rec = trainer.step();
      if (!rec.finite) {
        csv.flush();
        dir.write_model("checkpoints/last_good.ckpt", trainer.model().params(), &trainer.optimizer_state());
        dir.finish();
        err << "error: non-finite loss at step " << rec.step << "; wrote checkpoints/last_good.ckpt\n";
        return int{kNonFiniteLoss};
      }
      const auto& l = rec.loss;
      const double base = l.count_B ? l.loss_base_sum / static_cast<double>(l.count_B) : 0.0;
      const double corr = l.count_P ? l.loss_corr_sum / static_cast<double>(l.count_P) : 0.0;
      csv << rec.step << ',' << base << ',' << corr << ',' << l.normalized_total << ',' << l.count_B << ','
          << l.count_P << ',' << rec.grad_norm << '\n';
      if (rec.step % config.checkpoint_interval == 0 && rec.step != config.train.steps)
        dir.write_model(checkpoint_name(rec.step), trainer.model().params(), &trainer.optimizer_state());
    }
    csv.close();
    dir.write_model("checkpoints/final.ckpt", trainer.model().params(), &trainer.optimizer_state());
    dir.finish();
    log << "trained " << config.train.steps << " steps with method " << config.method << '\n';
    return int{kOk};
  });
}

int cmd_sample(const GlobalOptions& options, const SampleOptions& sample, std::ostream& log, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig config = resolve_config(options);
    const auto field = load_field(read_checkpoint(sample.checkpoint), config.soar.schedule);
    if (const auto* model = dynamic_cast<const VelocityModel*>(field.get());
        model && sample.cond >= model->shape().condition_count)
      throw std::runtime_error("condition " + std::to_string(sample.cond) + " exceeds the model's condition count");
    if (sample.n == 0) throw std::runtime_error("n must be positive");

    const std::size_t steps = sample.steps.value_or(config.soar.K);
    const CfgParams cfg{sample.cfg_scale.value_or(config.eval.cfg_scale)};
    Rng noise = Rng(config.seed).split("rollout");
    std::vector<Vector> z1;
    for (std::size_t i = 0; i < sample.n; ++i) z1.push_back(gaussian(noise, field->latent_dim()));
    const std::vector<Condition> conds(sample.n, Condition(sample.cond));
    const auto trajectories = rollout_batch(*field, z1, conds, steps, cfg, config.soar.schedule);

    RunDir dir(options.out, "sample", config);
    {
      std::ofstream out = dir.open("endpoints.csv");
      out << "sample,cond";
      for (std::size_t i = 0; i < field->latent_dim(); ++i) out << ",x" << i;
      out << '\n';
      for (std::size_t j = 0; j < trajectories.size(); ++j) {
        out << j << ',' << sample.cond;
        for (double x : trajectories[j].endpoint().values()) out << ',' << x;
        out << '\n';
      }
    }
    if (sample.trajectory) {
      std::ofstream out = dir.open("trajectory.csv");
      write_trajectory_csv(out, trajectories);
    }
    dir.finish();
    log << "wrote " << sample.n << " endpoints\n";
    return int{kOk};
  });
}

int cmd_diagnose(const GlobalOptions& options, const fs::path& checkpoint, DiagnoseMode mode, std::ostream& log,
                 std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig config = resolve_config(options);
    const auto field = field_for_dataset(checkpoint, config);
    const DatasetSpec spec = config.dataset();
    const Rng eval = Rng(config.seed).split("eval");
    RunDir dir(options.out, "diagnose", config);

    switch (mode) {
      case DiagnoseMode::Gap: {
        Rng gap_rng = eval.split("gap");
        const auto pairs = sample_ray_pairs(spec, config.eval.gap_pairs, gap_rng);
        BiasReport report = teacher_forced_gap(*field, pairs, config.soar.K, config.soar.schedule,
                                               CfgParams{config.soar.w_cfg});
        report.seeds = {config.seed};
        dir.write_json("gap_report.json", bias_report_json(report));
        std::ofstream csv = dir.open("gap_report.csv");
        write_bias_report_csv(csv, report);
        log << "final gap " << report.final_gap() << '\n';
        break;
      }
      case DiagnoseMode::BoundAudit: {
        Rng data_rng = eval.split("audit-data");
        Rng audit_rng = eval.split("audit");
        const auto pairs = sample_pairs(spec, config.eval.gap_pairs, data_rng);
        const AuditResult audit = deviation_bound_audit(*field, pairs, config.soar, config.eval.audit_trials, audit_rng);
        dir.write_json("bound_audit.json", {{"renoise_mode", to_string(config.soar.renoise)},
                                            {"asserted", audit.asserted},
                                            {"passed", audit.passed},
                                            {"tolerance", kBoundAuditTolerance},
                                            {"trials", config.eval.audit_trials},
                                            {"checks", audit.residuals.size()},
                                            {"max_residual", audit.max_residual},
                                            {"mean_residual", audit.mean_residual}});
        dir.finish();
        log << "max residual " << audit.max_residual << '\n';
        if (!audit.passed) {
          err << "error: bound audit failed, max residual " << audit.max_residual << '\n';
          return int{kAuditFailed};
        }
        return int{kOk};
      }
      case DiagnoseMode::Endpoint: {
        Rng endpoint_rng = eval.split("endpoint");
        const double d = endpoint_quality(*field, spec, config.endpoint_settings(), endpoint_rng);
        dir.write_json("endpoint.json", {{"endpoint_distance", d}});
        log << "endpoint distance " << d << '\n';
        break;
      }
    }
    dir.finish();
    return int{kOk};
  });
}

int cmd_ablate(const GlobalOptions& options, AblationAxis axis, std::optional<std::size_t> seeds, std::ostream& log,
               std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig config = resolve_config(options);
    const std::size_t seed_count = seeds.value_or(config.eval.seeds);
    if (seed_count == 0) throw ConfigError("eval_seeds", "at least one seed is required");
    const auto arms = ablation_arms(config, axis);
    const ComparisonResult result = compare_methods(config.comparison_settings(seed_count), arms);

    RunDir dir(options.out, "ablate", config);
    {
      std::ofstream csv = dir.open("comparison.csv");
      write_comparison_csv(csv, result);
    }
    nlohmann::json summary = comparison_summary(result);
    summary["axis"] = axis == AblationAxis::Branches ? "branches" : "renoise";
    dir.write_json("summary.json", summary);
    dir.finish();
    for (const auto& c : result.curves)
      log << c.method << ": endpoint " << c.endpoint_error.back().mean << " +- " << c.endpoint_error.back().stddev
          << ", final gap " << c.final_gap.back().mean << '\n';
    return int{kOk};
  });
}

int run(int argc, char** argv, std::ostream& log, std::ostream& err) {
  CLI::App app{"Rectified-flow post-training laboratory"};
  app.fallthrough();
  app.require_subcommand(1);

  GlobalOptions global;
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out = "run";
  app.add_option("--config", config_path, "Run config ('key = value' lines)");
  app.add_option("--out", out, "Output directory");
  auto* seed_opt = app.add_option("--seed", seed, "Master seed (overrides the config)");
  app.add_option("--set", global.overrides, "Override a config key, key=value")->allow_extra_args(false);

  auto* train = app.add_subcommand("train", "Train a model");

  SampleOptions sample;
  std::size_t sample_steps = 0;
  double sample_cfg = 1.0;
  auto* sample_cmd = app.add_subcommand("sample", "Generate endpoints from a checkpoint");
  sample_cmd->add_option("--checkpoint", sample.checkpoint, "Checkpoint file")->required();
  sample_cmd->add_option("--n", sample.n, "Number of samples");
  auto* steps_opt = sample_cmd->add_option("--steps,-K", sample_steps, "Euler steps (default: config K)");
  auto* cfg_opt = sample_cmd->add_option("--cfg-scale", sample_cfg, "Guidance scale (default: config eval_cfg)");
  sample_cmd->add_option("--cond", sample.cond, "Condition label");
  sample_cmd->add_flag("--trajectory", sample.trajectory, "Also write every intermediate state");

  fs::path diag_ckpt;
  std::string diag_mode;
  auto* diagnose = app.add_subcommand("diagnose", "Run a diagnostic on a checkpoint");
  diagnose->add_option("--checkpoint", diag_ckpt, "Checkpoint file")->required();
  diagnose->add_option("--mode", diag_mode, "gap | bound-audit | endpoint")
      ->required()
      ->check(CLI::IsMember({"gap", "bound-audit", "endpoint"}));

  std::string axis;
  std::size_t ablate_seeds = 0;
  auto* ablate = app.add_subcommand("ablate", "Compare variants along one axis");
  ablate->add_option("--axis", axis, "branches | renoise")->required()->check(CLI::IsMember({"branches", "renoise"}));
  auto* seeds_opt = ablate->add_option("--seeds", ablate_seeds, "Number of seeds (default: config eval_seeds)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      log << app.help();
      return kOk;
    }
    err << "error: " << e.what() << '\n';
    return kFailure;
  }

  if (!config_path.empty()) global.config = config_path;
  global.out = out;
  if (seed_opt->count()) global.seed = seed;

  if (train->parsed()) return cmd_train(global, log, err);
  if (sample_cmd->parsed()) {
    if (steps_opt->count()) sample.steps = sample_steps;
    if (cfg_opt->count()) sample.cfg_scale = sample_cfg;
    return cmd_sample(global, sample, log, err);
  }
  if (diagnose->parsed()) return cmd_diagnose(global, diag_ckpt, parse_diagnose_mode(diag_mode), log, err);
  std::optional<std::size_t> seeds;
  if (seeds_opt->count()) seeds = ablate_seeds;
  return cmd_ablate(global, parse_ablation_axis(axis), seeds, log, err);
}

}  // namespace soar::cli

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "soar/checkpoint.hpp"
#include "soar/config.hpp"
#include "soar/diagnostics.hpp"
#include "soar/model.hpp"

namespace soar::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kBadConfig = 2,
  kNonFiniteLoss = 3,
  kCorruptCheckpoint = 4,
  kAuditFailed = 5,
};

inline constexpr const char* kArtifactVersion = "soar-lab 0.1.0";
/// Tensor name marking a checkpoint that stores the analytic single-point field.
inline constexpr const char* kOracleTensor = "oracle.point";

struct GlobalOptions {
  std::optional<std::filesystem::path> config;
  std::filesystem::path out = "run";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

struct RunManifest {
  std::string command;
  std::string config_snapshot;
  std::uint64_t seed = 0;
  std::string started;
  std::string finished;
  std::vector<std::string> checkpoints;  ///< relative to the out dir
  std::vector<std::string> files;        ///< every emitted file, relative to the out dir
  std::string version = kArtifactVersion;

  [[nodiscard]] nlohmann::json to_json() const;
};

/// Config file (if any), then --set overrides, then --seed. Throws ConfigError.
RunConfig resolve_config(const GlobalOptions& options);

/// A trained model, or the analytic field when the checkpoint holds kOracleTensor.
std::unique_ptr<VelocityField> load_field(const Checkpoint& checkpoint, const NoiseSchedule& schedule);

struct SampleOptions {
  std::filesystem::path checkpoint;
  std::size_t n = 100;
  std::optional<std::size_t> steps;
  std::optional<double> cfg_scale;
  std::size_t cond = 0;
  bool trajectory = false;
};

enum class DiagnoseMode { Gap, BoundAudit, Endpoint };
enum class AblationAxis { Branches, Renoise };

DiagnoseMode parse_diagnose_mode(const std::string& name);
AblationAxis parse_ablation_axis(const std::string& name);

/// Arms compared along an axis; every arm trains with method soar.
std::vector<MethodArm> ablation_arms(const RunConfig& config, AblationAxis axis);

int cmd_train(const GlobalOptions& options, std::ostream& log, std::ostream& err);
int cmd_sample(const GlobalOptions& options, const SampleOptions& sample, std::ostream& log, std::ostream& err);
int cmd_diagnose(const GlobalOptions& options, const std::filesystem::path& checkpoint, DiagnoseMode mode,
                 std::ostream& log, std::ostream& err);
int cmd_ablate(const GlobalOptions& options, AblationAxis axis, std::optional<std::size_t> seeds, std::ostream& log,
               std::ostream& err);

/// Parses argv and dispatches to a subcommand.
int run(int argc, char** argv, std::ostream& log, std::ostream& err);

}  // namespace soar::cli

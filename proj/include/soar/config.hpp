#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "soar/adam.hpp"
#include "soar/data.hpp"
#include "soar/diagnostics.hpp"
#include "soar/model.hpp"
#include "soar/objective.hpp"
#include "soar/trainer.hpp"

namespace soar {

/// Bad key or bad value in a run config. `key()` names the offending key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::runtime_error(message), key_(std::move(key)) {}
  [[nodiscard]] const std::string& key() const { return key_; }

 private:
  std::string key_;
};

/// Parameters from which the training set is generated.
struct DataParams {
  DatasetSpec::Kind kind = DatasetSpec::Kind::GaussianMixture;
  std::size_t dim = 2;
  std::size_t conditions = 4;
  std::size_t size = 4096;
  double radius = 4.0;
  double stddev = 0.5;
  double moon_noise = 0.1;
  std::size_t board_cells = 4;
  double board_extent = 2.0;
  std::vector<double> point{1.0, -0.5};

  [[nodiscard]] DatasetSpec build() const;
};

struct EvalParams {
  std::size_t interval = 500;
  std::size_t seeds = 5;
  std::size_t per_condition = 256;
  DistanceMetric metric = DistanceMetric::SlicedW2;
  std::size_t projections = 64;
  double cfg_scale = 1.0;
  std::size_t gap_pairs = 256;
  std::size_t audit_trials = 1000;
};

/// Everything a subcommand needs, resolved from "key = value" text.
struct RunConfig {
  /// "sft", "soar", or "oracle" (writes the analytic single-point field).
  std::string method = "soar";
  SoarConfig soar;
  TrainSettings train;
  std::uint64_t seed = 0;
  std::size_t checkpoint_interval = 500;
  DataParams data;
  std::size_t embed_dim = 8;
  std::size_t time_frequencies = 4;
  std::vector<std::size_t> hidden{128, 128, 128};
  /// Training-set filter; no filtering when unset.
  std::optional<ScoreFilter::Score> filter_score;
  std::size_t filter_axis = 0;
  double filter_threshold = 0.0;
  EvalParams eval;

  /// Applies one assignment; throws ConfigError for unknown keys or bad values.
  void set(std::string_view key, std::string_view value);
  /// Cross-field checks; throws ConfigError naming the first bad key.
  void validate() const;

  [[nodiscard]] std::optional<ScoreFilter> filter() const;
  [[nodiscard]] ModelShape model_shape() const;
  [[nodiscard]] DatasetSpec dataset() const { return data.build(); }
  [[nodiscard]] EndpointSettings endpoint_settings() const;
  [[nodiscard]] ComparisonSettings comparison_settings(std::size_t seed_count) const;

  /// Every key in a fixed order, one "key = value" line each. Parsing the
  /// result yields an equal config, so the text is a fixed point.
  [[nodiscard]] std::string serialize() const;
};

/// All keys accepted by RunConfig::set, in serialization order.
const std::vector<std::string>& config_keys();

/// Parses "key = value" lines; '#' starts a comment, blank lines are ignored.
/// Later assignments win.
RunConfig parse_config(std::string_view text, RunConfig base = {});

/// Applies "key=value" overrides in order.
void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides);

}  // namespace soar

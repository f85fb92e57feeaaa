#include "soar/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <sstream>

namespace soar {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view key, std::string_view text) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || !std::isfinite(v))
    throw ConfigError(std::string(key), "config key '" + std::string(key) + "': expected a number, got '" +
                                            std::string(text) + "'");
  return v;
}

std::uint64_t parse_uint(std::string_view key, std::string_view text) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || text.empty())
    throw ConfigError(std::string(key), "config key '" + std::string(key) + "': expected a nonnegative integer, got '" +
                                            std::string(text) + "'");
  return v;
}

std::vector<std::string_view> split_list(std::string_view text) {
  std::vector<std::string_view> out;
  while (true) {
    const auto comma = text.find(',');
    out.push_back(trim(text.substr(0, comma)));
    if (comma == std::string_view::npos) return out;
    text.remove_prefix(comma + 1);
  }
}

template <class T>
std::string join(const std::vector<T>& values, std::string (*fmt)(T)) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + fmt(values[i]);
  return out;
}

std::string format_size(std::size_t v) { return std::to_string(v); }

/// Wraps a parser that throws ContractViolation so the error names the key.
template <class F>
auto keyed(std::string_view key, F&& parse) {
  try {
    return parse();
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string(key), "config key '" + std::string(key) + "': " + e.what());
  }
}

std::string_view weighting_name(LossWeighting w) {
  return w.kind == LossWeighting::Kind::Uniform ? "uniform" : "sigma-squared";
}

struct Field {
  std::string name;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

Field size_field(std::string name, std::size_t RunConfig::*member) {
  return {name, [name, member](RunConfig& c, std::string_view v) { c.*member = parse_uint(name, v); },
          [member](const RunConfig& c) { return std::to_string(c.*member); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    auto sz = [&f](std::string name, auto getter) {
      f.push_back({name, [name, getter](RunConfig& c, std::string_view v) { getter(c) = parse_uint(name, v); },
                   [getter](const RunConfig& c) { return std::to_string(getter(const_cast<RunConfig&>(c))); }});
    };
    auto dbl = [&f](std::string name, auto getter) {
      f.push_back({name, [name, getter](RunConfig& c, std::string_view v) { getter(c) = parse_double(name, v); },
                   [getter](const RunConfig& c) { return format_double(getter(const_cast<RunConfig&>(c))); }});
    };

    f.push_back({"method",
                 [](RunConfig& c, std::string_view v) {
                   if (v != "sft" && v != "soar" && v != "oracle")
                     throw ConfigError("method", "config key 'method': expected sft, soar or oracle");
                   c.method = std::string(v);
                 },
                 [](const RunConfig& c) { return c.method; }});
    f.push_back(size_field("seed", &RunConfig::seed));
    sz("steps", [](RunConfig& c) -> std::size_t& { return c.train.steps; });
    sz("batch_size", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; });
    dbl("lr", [](RunConfig& c) -> double& { return c.train.adam.lr; });
    f.push_back(size_field("checkpoint_interval", &RunConfig::checkpoint_interval));

    sz("K", [](RunConfig& c) -> std::size_t& { return c.soar.K; });
    sz("N", [](RunConfig& c) -> std::size_t& { return c.soar.N; });
    sz("M", [](RunConfig& c) -> std::size_t& { return c.soar.M; });
    dbl("lambda", [](RunConfig& c) -> double& { return c.soar.lambda; });
    dbl("w_cfg", [](RunConfig& c) -> double& { return c.soar.w_cfg; });
    dbl("eta", [](RunConfig& c) -> double& { return c.soar.eta; });
    f.push_back({"renoise_mode",
                 [](RunConfig& c, std::string_view v) {
                   c.soar.renoise = keyed("renoise_mode", [&] { return parse_renoise_mode(v); });
                 },
                 [](const RunConfig& c) { return std::string(to_string(c.soar.renoise)); }});
    dbl("sigma_min", [](RunConfig& c) -> double& { return c.soar.sigma_min; });
    f.push_back({"t0_sampling",
                 [](RunConfig& c, std::string_view v) {
                   c.soar.t0_sampling = keyed("t0_sampling", [&] { return parse_t0_sampling(v); });
                 },
                 [](const RunConfig& c) { return std::string(to_string(c.soar.t0_sampling)); }});
    f.push_back({"weighting",
                 [](RunConfig& c, std::string_view v) {
                   if (v == "uniform")
                     c.soar.weighting.kind = LossWeighting::Kind::Uniform;
                   else if (v == "sigma-squared")
                     c.soar.weighting.kind = LossWeighting::Kind::SigmaSquared;
                   else
                     throw ConfigError("weighting", "config key 'weighting': expected uniform or sigma-squared");
                 },
                 [](const RunConfig& c) { return std::string(weighting_name(c.soar.weighting)); }});
    f.push_back({"schedule",
                 [](RunConfig& c, std::string_view v) {
                   if (v == "identity")
                     c.soar.schedule.kind = NoiseSchedule::Kind::Identity;
                   else if (v == "shifted")
                     c.soar.schedule.kind = NoiseSchedule::Kind::Shifted;
                   else
                     throw ConfigError("schedule", "config key 'schedule': expected identity or shifted");
                 },
                 [](const RunConfig& c) {
                   return std::string(c.soar.schedule.kind == NoiseSchedule::Kind::Identity ? "identity" : "shifted");
                 }});
    dbl("schedule_shift", [](RunConfig& c) -> double& { return c.soar.schedule.shift; });
    dbl("cond_dropout", [](RunConfig& c) -> double& { return c.soar.cond_dropout; });

    f.push_back({"dataset",
                 [](RunConfig& c, std::string_view v) {
                   c.data.kind = keyed("dataset", [&] { return parse_dataset_kind(v); });
                 },
                 [](const RunConfig& c) { return std::string(to_string(c.data.kind)); }});
    sz("dim", [](RunConfig& c) -> std::size_t& { return c.data.dim; });
    sz("conditions", [](RunConfig& c) -> std::size_t& { return c.data.conditions; });
    sz("dataset_size", [](RunConfig& c) -> std::size_t& { return c.data.size; });
    dbl("radius", [](RunConfig& c) -> double& { return c.data.radius; });
    dbl("stddev", [](RunConfig& c) -> double& { return c.data.stddev; });
    dbl("moon_noise", [](RunConfig& c) -> double& { return c.data.moon_noise; });
    sz("board_cells", [](RunConfig& c) -> std::size_t& { return c.data.board_cells; });
    dbl("board_extent", [](RunConfig& c) -> double& { return c.data.board_extent; });
    f.push_back({"point",
                 [](RunConfig& c, std::string_view v) {
                   std::vector<double> p;
                   for (auto item : split_list(v)) p.push_back(parse_double("point", item));
                   c.data.point = std::move(p);
                 },
                 [](const RunConfig& c) { return join<double>(c.data.point, format_double); }});

    f.push_back({"filter",
                 [](RunConfig& c, std::string_view v) {
                   if (v == "none")
                     c.filter_score.reset();
                   else if (v == "log-density")
                     c.filter_score = ScoreFilter::Score::LogDensity;
                   else if (v == "coordinate")
                     c.filter_score = ScoreFilter::Score::Coordinate;
                   else
                     throw ConfigError("filter", "config key 'filter': expected none, log-density or coordinate");
                 },
                 [](const RunConfig& c) {
                   if (!c.filter_score) return std::string("none");
                   return std::string(*c.filter_score == ScoreFilter::Score::LogDensity ? "log-density" : "coordinate");
                 }});
    sz("filter_axis", [](RunConfig& c) -> std::size_t& { return c.filter_axis; });
    dbl("filter_threshold", [](RunConfig& c) -> double& { return c.filter_threshold; });

    sz("embed_dim", [](RunConfig& c) -> std::size_t& { return c.embed_dim; });
    sz("time_frequencies", [](RunConfig& c) -> std::size_t& { return c.time_frequencies; });
    f.push_back({"hidden",
                 [](RunConfig& c, std::string_view v) {
                   std::vector<std::size_t> h;
                   for (auto item : split_list(v)) h.push_back(parse_uint("hidden", item));
                   c.hidden = std::move(h);
                 },
                 [](const RunConfig& c) { return join<std::size_t>(c.hidden, format_size); }});

    sz("eval_interval", [](RunConfig& c) -> std::size_t& { return c.eval.interval; });
    sz("eval_seeds", [](RunConfig& c) -> std::size_t& { return c.eval.seeds; });
    sz("eval_samples", [](RunConfig& c) -> std::size_t& { return c.eval.per_condition; });
    f.push_back({"eval_metric",
                 [](RunConfig& c, std::string_view v) {
                   c.eval.metric = keyed("eval_metric", [&] { return parse_distance_metric(v); });
                 },
                 [](const RunConfig& c) { return std::string(to_string(c.eval.metric)); }});
    sz("eval_projections", [](RunConfig& c) -> std::size_t& { return c.eval.projections; });
    dbl("eval_cfg", [](RunConfig& c) -> double& { return c.eval.cfg_scale; });
    sz("gap_pairs", [](RunConfig& c) -> std::size_t& { return c.eval.gap_pairs; });
    sz("audit_trials", [](RunConfig& c) -> std::size_t& { return c.eval.audit_trials; });
    return f;
  }();
  return table;
}

const Field* find_field(std::string_view key) {
  for (const auto& f : fields())
    if (f.name == key) return &f;
  return nullptr;
}

}  // namespace

DatasetSpec DataParams::build() const {
  DatasetSpec spec;
  switch (kind) {
    case DatasetSpec::Kind::GaussianMixture:
      spec = keyed("dim", [&] { return DatasetSpec::circle_mixture(conditions, radius, stddev, dim); });
      break;
    case DatasetSpec::Kind::TwoMoons:
      spec = DatasetSpec::two_moons(moon_noise);
      break;
    case DatasetSpec::Kind::Checkerboard:
      spec = DatasetSpec::checkerboard(board_cells, board_extent);
      break;
    case DatasetSpec::Kind::SinglePoint:
      if (point.size() != dim)
        throw ConfigError("point", "config key 'point' has " + std::to_string(point.size()) +
                                       " coordinates but dim = " + std::to_string(dim));
      spec = DatasetSpec::single_point(Vector(point), conditions);
      break;
  }
  spec.size = size;
  keyed("dataset", [&] { spec.validate(); });
  return spec;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.name);
    return out;
  }();
  return keys;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  const Field* field = find_field(key);
  if (!field) throw ConfigError(std::string(key), "unknown config key '" + std::string(key) + "'");
  field->set(*this, trim(value));
}

void RunConfig::validate() const {
  keyed("K", [&] { soar.validate(); });
  if (soar.schedule.kind == NoiseSchedule::Kind::Shifted && !(soar.schedule.shift > 0.0))
    throw ConfigError("schedule_shift", "config key 'schedule_shift' must be positive");
  if (!(train.adam.lr > 0.0)) throw ConfigError("lr", "config key 'lr' must be positive");
  if (train.batch_size == 0) throw ConfigError("batch_size", "config key 'batch_size' must be positive");
  if (checkpoint_interval == 0)
    throw ConfigError("checkpoint_interval", "config key 'checkpoint_interval' must be positive");
  if (hidden.empty()) throw ConfigError("hidden", "config key 'hidden' needs at least one layer");
  for (std::size_t h : hidden)
    if (h == 0) throw ConfigError("hidden", "config key 'hidden': layer widths must be positive");
  if (method == "oracle" && data.kind != DatasetSpec::Kind::SinglePoint)
    throw ConfigError("method", "config key 'method': oracle needs dataset = single-point");
  if (eval.interval == 0) throw ConfigError("eval_interval", "config key 'eval_interval' must be positive");
  if (filter_score == ScoreFilter::Score::Coordinate && filter_axis >= dataset().dim)
    throw ConfigError("filter_axis", "config key 'filter_axis' exceeds the data dimension");
  (void)dataset();
}

std::optional<ScoreFilter> RunConfig::filter() const {
  if (!filter_score) return std::nullopt;
  return ScoreFilter{*filter_score, filter_axis, filter_threshold};
}

ModelShape RunConfig::model_shape() const {
  ModelShape shape;
  const DatasetSpec spec = dataset();
  shape.latent_dim = spec.dim;
  shape.condition_count = spec.condition_count;
  shape.embed_dim = embed_dim;
  shape.time_frequencies = time_frequencies;
  shape.hidden = hidden;
  return shape;
}

EndpointSettings RunConfig::endpoint_settings() const {
  EndpointSettings s;
  s.per_condition = eval.per_condition;
  s.steps = soar.K;
  s.cfg = CfgParams{eval.cfg_scale};
  s.schedule = soar.schedule;
  s.metric = eval.metric;
  s.projections = eval.projections;
  return s;
}

ComparisonSettings RunConfig::comparison_settings(std::size_t seed_count) const {
  ComparisonSettings s;
  s.data = dataset();
  s.shape = model_shape();
  s.train = train;
  s.eval_interval = eval.interval;
  for (std::size_t i = 0; i < seed_count; ++i) s.seeds.push_back(seed + i);
  s.endpoint = endpoint_settings();
  s.gap_pairs = eval.gap_pairs;
  return s;
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& f : fields()) out += f.name + " = " + f.get(*this) + "\n";
  return out;
}

RunConfig parse_config(std::string_view text, RunConfig base) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(std::string(line), "config line " + std::to_string(line_no) + ": expected 'key = value'");
    base.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError(o, "override '" + o + "' must have the form key=value");
    config.set(trim(std::string_view(o).substr(0, eq)), std::string_view(o).substr(eq + 1));
  }
}

}  // namespace soar

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "dfpl/budget.hpp"
#include "dfpl/protocol.hpp"

namespace dfpl {

/// Error in a configuration file or override; `field` is empty for syntax errors.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what) : Error(what), field_(std::move(field)) {}
  [[nodiscard]] const std::string& field() const { return field_; }

 private:
  std::string field_;
};

enum class DatasetKind { kSynth, kMnist, kFmnist };

struct ExperimentConfig {
  DatasetKind dataset = DatasetKind::kSynth;
  std::filesystem::path images;
  std::filesystem::path labels;
  std::size_t max_samples = 0;  // 0 keeps every sample

  std::size_t synth_classes = 10;
  std::size_t synth_per_class = 60;
  std::size_t synth_dim = 32;
  double synth_spread = 0.15;

  std::size_t clients = 5;  // K
  double avg = 3;
  double std = 1;
  std::uint64_t seed = 1;
  double train_fraction = 0.8;

  std::int64_t rounds = 6;  // R
  std::optional<std::int64_t> local_iterations;  // E
  std::optional<double> t_sum;
  std::optional<double> alpha;
  std::optional<double> beta;

  double eta = 0.1;
  double lambda = 1.0;
  std::size_t batch_size = 32;
  std::int64_t feature_dim = 64;  // d_p
  std::vector<std::int64_t> hidden = {128};
  std::uint32_t difficulty_bits = 8;
  MiningMode mode = MiningMode::kSim;
  std::uint64_t max_trials = std::uint64_t{1} << 26;
  AggregationRule aggregation = AggregationRule::kContributorMean;
  unsigned threads = 0;

  std::filesystem::path output_dir = "out";

  /// When present, bounds.csv is written next to the run artifacts.
  std::optional<ConvergenceConstants> constants;
  std::int64_t bounds_max_rounds = 20;

  /// E given directly, or resolved from the (t_sum, alpha, beta) triple.
  [[nodiscard]] std::int64_t resolved_local_iterations() const;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;

  [[nodiscard]] RoundConfig round_config() const;
};

using TomlValue = std::variant<std::string, std::int64_t, double, bool, std::vector<double>>;

struct TomlEntry {
  std::string key;  // dotted when declared under a [table]
  TomlValue value;
  int line = 0;
};

/// Flat TOML subset: comments, [table] headers, key = value with strings,
/// integers, floats, booleans and arrays of numbers.
std::vector<TomlEntry> parse_toml(std::string_view text);

/// Applies one field by name (aliases K, R, E, d_p accepted).
void set_field(ExperimentConfig& cfg, const std::string& key, const TomlValue& value);

/// Parses an override given on the command line as a TOML value, falling
/// back to a bare string.
TomlValue parse_override_value(std::string_view text);

/// Defaults, then the file's fields. Does not validate.
ExperimentConfig parse_config_text(std::string_view text);

/// parse_config_text on the file contents, then validate().
ExperimentConfig parse_config(const std::filesystem::path& path);

std::string_view to_string(DatasetKind kind);

}  // namespace dfpl

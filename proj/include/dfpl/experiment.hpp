#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "dfpl/config.hpp"
#include "dfpl/data.hpp"
#include "dfpl/protocol.hpp"

namespace dfpl {

/// Directory consulted for relative dataset paths (and the default IDX file
/// names) when set.
inline constexpr const char* kDataDirEnv = "DFPL_DATA_DIR";

/// Failure to create or write an output artifact.
class IoError : public Error {
 public:
  using Error::Error;
};

/// The configured dataset; MNIST/FMNIST come from IDX files and are cut to
/// `max_samples` rows by a seeded draw when that is non-zero.
LabeledSet load_dataset(const ExperimentConfig& cfg);

Partition partition_dataset(const ExperimentConfig& cfg, const LabeledSet& data);

ExperimentSetup make_setup(const ExperimentConfig& cfg, std::vector<ClientShard> shards);

/// Seconds per iteration and per block used for bounds.csv: the config's
/// triple when given, otherwise the default compute model at this K and μ.
std::pair<double, double> bounds_timing(const ExperimentConfig& cfg, double* t_sum);

void write_metrics_csv(std::ostream& out, std::span<const Metrics> series);
void write_metrics_json(std::ostream& out, std::span<const Metrics> series);
void write_summary_json(std::ostream& out, const ExperimentConfig& cfg, const ExperimentResult& result);

/// Full pipeline: load, partition, run, write every artifact into
/// cfg.output_dir. A rejected block is reported as RoundFailure, thrown after
/// the artifacts (including the rejected round's metrics) are written.
ExperimentResult run_and_write(const ExperimentConfig& cfg);

/// partition subcommand: heatmap.csv only.
Partition partition_and_write(const ExperimentConfig& cfg);

/// bounds subcommand: bounds.csv over R = 1..bounds_max_rounds.
std::vector<BoundSweepRow> bounds_and_write(const ExperimentConfig& cfg);

}  // namespace dfpl

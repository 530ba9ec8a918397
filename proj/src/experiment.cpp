#include "dfpl/experiment.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <ostream>

#include <fmt/format.h>
#include <json.hpp>

#include "dfpl/budget.hpp"
#include "dfpl/log.hpp"
#include "dfpl/random.hpp"

namespace dfpl {

namespace {

namespace fs = std::filesystem;

fs::path resolve_data_path(const fs::path& given, const char* default_name) {
  const char* dir = std::getenv(kDataDirEnv);
  if (given.empty()) return dir != nullptr ? fs::path(dir) / default_name : fs::path(default_name);
  if (given.is_relative() && dir != nullptr && !fs::exists(given)) return fs::path(dir) / given;
  return given;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot open {} for writing", path.string()));
  return out;
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw IoError(fmt::format("write to {} failed", path.string()));
}

void prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create output directory {}: {}", dir.string(), ec.message()));
}

template <typename Writer>
void write_file(const fs::path& path, Writer&& writer) {
  auto out = open_output(path);
  writer(out);
  finish(out, path);
}

}  // namespace

LabeledSet load_dataset(const ExperimentConfig& cfg) {
  if (cfg.dataset == DatasetKind::kSynth)
    return synth_blobs(cfg.synth_classes, cfg.synth_per_class, cfg.synth_dim, cfg.synth_spread,
                       mix_seed(cfg.seed, 0xDA7A));

  const auto images = resolve_data_path(cfg.images, "train-images-idx3-ubyte");
  const auto labels = resolve_data_path(cfg.labels, "train-labels-idx1-ubyte");
  LabeledSet full = load_idx(images, labels);
  if (cfg.max_samples == 0 || cfg.max_samples >= full.size()) return full;

  std::vector<std::size_t> rows(full.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  Rng rng(mix_seed(cfg.seed, 0x5A3F));
  rng.shuffle(rows);
  rows.resize(cfg.max_samples);
  std::sort(rows.begin(), rows.end());
  auto out = full.subset(rows);
  out.num_classes = full.num_classes;
  return out;
}

Partition partition_dataset(const ExperimentConfig& cfg, const LabeledSet& data) {
  PartitionSpec spec;
  spec.clients = cfg.clients;
  spec.avg = cfg.avg;
  spec.std = cfg.std;
  spec.seed = cfg.seed;
  spec.train_fraction = cfg.train_fraction;
  return partition_non_iid(data, spec);
}

ExperimentSetup make_setup(const ExperimentConfig& cfg, std::vector<ClientShard> shards) {
  ExperimentSetup s;
  s.shards = std::move(shards);
  s.hidden.assign(cfg.hidden.begin(), cfg.hidden.end());
  s.feature_dim = cfg.feature_dim;
  s.round = cfg.round_config();
  s.rounds = cfg.rounds;
  s.seed = cfg.seed;
  s.threads = cfg.threads;
  s.fail_on_rejection = false;
  return s;
}

std::pair<double, double> bounds_timing(const ExperimentConfig& cfg, double* t_sum) {
  if (cfg.t_sum && cfg.alpha && cfg.beta) {
    *t_sum = *cfg.t_sum;
    return {*cfg.alpha, *cfg.beta};
  }
  BudgetModel m;
  m.batch_size = static_cast<double>(cfg.batch_size);
  m.mu = cfg.difficulty_bits;
  m.clients = static_cast<double>(cfg.clients);
  *t_sum = m.t_sum;
  return {alpha(m), beta(m)};
}

void write_metrics_csv(std::ostream& out, std::span<const Metrics> series) {
  out << "round,taa,tal,params_transmitted,winner,mine_trials\n";
  for (const auto& m : series)
    out << fmt::format("{},{},{},{},{},{}\n", m.round, m.taa, m.tal, m.params_transmitted, m.winner, m.mine_trials);
}

void write_metrics_json(std::ostream& out, std::span<const Metrics> series) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& m : series) {
    nlohmann::ordered_json clients = nlohmann::ordered_json::array();
    for (const auto& c : m.clients)
      clients.push_back({{"id", c.id},
                         {"accuracy", c.accuracy},
                         {"loss", c.loss},
                         {"test_size", c.test_size},
                         {"params_transmitted", c.params_transmitted}});
    rows.push_back({{"round", m.round},
                    {"taa", m.taa},
                    {"tal", m.tal},
                    {"params_transmitted", m.params_transmitted},
                    {"winner", m.winner},
                    {"mine_trials", m.mine_trials},
                    {"accepted", m.accepted},
                    {"clients", std::move(clients)}});
  }
  out << rows.dump(2) << '\n';
}

void write_summary_json(std::ostream& out, const ExperimentConfig& cfg, const ExperimentResult& result) {
  nlohmann::ordered_json j;
  j["dataset"] = std::string(to_string(cfg.dataset));
  j["clients"] = cfg.clients;
  j["rounds"] = cfg.rounds;
  j["local_iterations"] = cfg.resolved_local_iterations();
  j["seed"] = cfg.seed;
  j["eta"] = cfg.eta;
  j["lambda"] = cfg.lambda;
  j["feature_dim"] = cfg.feature_dim;
  if (result.series.empty()) {
    j["final_taa"] = nullptr;
    j["final_tal"] = nullptr;
  } else {
    j["final_taa"] = result.series.back().taa;
    j["final_tal"] = result.series.back().tal;
  }
  j["chain_blocks"] = result.chain.size();
  j["rejected_rounds"] = result.rejected_rounds;
  // Measured stand-ins for Q and G; they carry no guarantee.
  j["heuristic_q_proxy"] = result.q_proxy;
  j["heuristic_g_proxy"] = result.g_proxy;
  out << j.dump(2) << '\n';
}

ExperimentResult run_and_write(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto data = load_dataset(cfg);
  auto partition = partition_dataset(cfg, data);
  const auto heatmap = distribution_heatmap(partition.shards, data.num_classes);
  prepare_dir(cfg.output_dir);
  write_file(cfg.output_dir / "heatmap.csv", [&](std::ostream& o) { write_heatmap_csv(o, heatmap); });

  log_info(fmt::format("{} samples, {} clients, partition drawn in {} attempt(s)", data.size(), cfg.clients,
                       partition.attempts));
  auto result = run_experiment(make_setup(cfg, std::move(partition.shards)));

  write_file(cfg.output_dir / "metrics.csv", [&](std::ostream& o) { write_metrics_csv(o, result.series); });
  write_file(cfg.output_dir / "metrics.json", [&](std::ostream& o) { write_metrics_json(o, result.series); });
  write_file(cfg.output_dir / "chain.jsonl", [&](std::ostream& o) { write_chain_jsonl(o, result.chain); });
  write_file(cfg.output_dir / "summary.json", [&](std::ostream& o) { write_summary_json(o, cfg, result); });
  if (cfg.constants) bounds_and_write(cfg);

  if (!result.rejected_rounds.empty()) {
    const auto r = result.rejected_rounds.front();
    throw RoundFailure(r, fmt::format("round {}: proposed block rejected by the majority", r));
  }
  return result;
}

Partition partition_and_write(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto data = load_dataset(cfg);
  auto partition = partition_dataset(cfg, data);
  prepare_dir(cfg.output_dir);
  const auto heatmap = distribution_heatmap(partition.shards, data.num_classes);
  write_file(cfg.output_dir / "heatmap.csv", [&](std::ostream& o) { write_heatmap_csv(o, heatmap); });
  return partition;
}

std::vector<BoundSweepRow> bounds_and_write(const ExperimentConfig& cfg) {
  cfg.validate();
  const ConvergenceConstants cc = cfg.constants.value_or(ConvergenceConstants{});
  double t_sum = 0;
  const auto [a, b] = bounds_timing(cfg, &t_sum);
  auto rows = sweep_rounds(cc, a, b, t_sum, cfg.eta, cfg.lambda, cfg.bounds_max_rounds);
  prepare_dir(cfg.output_dir);
  write_file(cfg.output_dir / "bounds.csv", [&](std::ostream& o) { write_sweep_csv(o, rows); });
  return rows;
}

}  // namespace dfpl

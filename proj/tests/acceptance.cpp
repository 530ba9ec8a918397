// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <unistd.h>

#include "dfpl/budget.hpp"
#include "dfpl/experiment.hpp"
#include "dfpl/ledger.hpp"
#include "dfpl/log.hpp"
#include "dfpl/protocol.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace dfpl;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// 1 -------------------------------------------------------------------------

Verdict gradient_oracle() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  const double lambdas[] = {0.0, 0.5, 1.0};
  double worst = 0;
  std::size_t checked = 0;
  const int instances = 30;
  for (int i = 0; i < instances; ++i) {
    const auto batch = static_cast<Eigen::Index>(2 + rng.uniform_index(7));     // 2..8
    const auto feat = static_cast<Eigen::Index>(1 + rng.uniform_index(8));      // 1..8
    const auto classes = static_cast<Eigen::Index>(2 + rng.uniform_index(3));   // 2..4
    const auto in = static_cast<Eigen::Index>(2 + rng.uniform_index(7));
    const auto hidden = static_cast<Eigen::Index>(2 + rng.uniform_index(7));
    const double lambda = lambdas[i % 3];
    const auto p = testutil::random_params(rng, in, {hidden}, feat, classes);
    const auto x = testutil::random_batch(rng, batch, in);
    std::vector<ClassId> y(static_cast<std::size_t>(batch));
    for (auto& v : y) v = static_cast<ClassId>(rng.uniform_index(static_cast<std::uint64_t>(classes)));
    PrototypeSet global(kGlobalOwner, 1);
    for (Eigen::Index c = 0; c < classes; ++c)
      if (rng.uniform01() < 0.8) global.set(static_cast<ClassId>(c), testutil::random_batch(rng, 1, feat, 0, 1).row(0).transpose());
    const auto res = backward(p, x, std::span<const ClassId>(y), global, lambda);
    const auto rep = testutil::finite_difference_check(p, x, y, global, lambda, res.grads);
    worst = std::max(worst, rep.max_rel_err);
    checked += rep.checked;
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 10,
          fmt::format("{} instances, {} entries, max rel err {:.2e} (< 1e-4), {:.2f}s (< 10s)", instances, checked,
                      worst, secs)};
}

// 2 -------------------------------------------------------------------------

Verdict aggregation_oracle() {
  const auto t0 = Clock::now();
  Rng rng(7);
  double worst = 0;
  bool identical = true;
  for (int inst = 0; inst < 100; ++inst) {
    const auto k = 2 + rng.uniform_index(7);
    const auto dim = static_cast<Eigen::Index>(1 + rng.uniform_index(16));
    std::vector<PrototypeSet> locals;
    for (std::size_t c = 0; c < k; ++c) {
      PrototypeSet s(static_cast<ClientId>(c), 1);
      for (ClassId cls = 0; cls < 10; ++cls)
        if (rng.uniform01() < 0.4) s.set(cls, testutil::random_batch(rng, 1, dim, -5, 5).row(0).transpose());
      if (s.empty()) s.set(0, VecXd::Zero(dim));
      locals.push_back(std::move(s));
    }
    const auto global = aggregate_global(locals, 1);
    for (ClassId cls = 0; cls < 10; ++cls) {
      std::vector<double> sum(static_cast<std::size_t>(dim), 0.0);
      double n = 0;
      for (const auto& s : locals)
        if (const auto* v = s.find(cls)) {
          for (Eigen::Index j = 0; j < dim; ++j) sum[static_cast<std::size_t>(j)] += (*v)(j);
          n += 1;
        }
      if (n == 0) continue;
      for (Eigen::Index j = 0; j < dim; ++j) worst = std::max(worst, std::abs(global.at(cls)(j) - sum[static_cast<std::size_t>(j)] / n));
    }
    // Each client receives the sets in its own order.
    const auto reference = global.canonical_bytes();
    for (std::size_t c = 0; c < k; ++c) {
      auto view = locals;
      rng.shuffle(view);
      identical = identical && aggregate_global(view, 1).canonical_bytes() == reference;
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-15 && identical && secs < 5,
          fmt::format("100 instances, max abs err {:.1e} (<= 1e-15), bitwise-identical across clients: {}, {:.2f}s (< 5s)",
                      worst, identical ? "yes" : "no", secs)};
}

// 3 -------------------------------------------------------------------------

Verdict consensus_safety() {
  const auto data = synth_blobs(6, 40, 8, 0.15, 3);
  PartitionSpec spec{.clients = 5, .avg = 3, .std = 1, .seed = 3};
  const auto shards = partition_non_iid(data, spec).shards;
  const std::vector<Eigen::Index> hidden{16};
  const auto genesis = Chain::with_genesis(6);
  std::vector<ClientState> clients;
  KeyDirectory dir;
  for (std::size_t k = 0; k < 5; ++k) {
    clients.push_back(make_client(static_cast<ClientId>(k), shards[k], hidden, 8, 10 + k, 20 + k, genesis));
    dir.emplace(static_cast<ClientId>(k), clients.back().keys.public_key);
  }
  RoundConfig cfg;
  cfg.local_iterations = 5;
  cfg.batch_size = 16;
  cfg.difficulty_bits = 6;
  Rng coordinator(5);

  const std::vector<std::uint64_t> corrupt = {2, 5, 9};
  std::vector<std::uint64_t> rejected;
  bool stores_agree = true;
  for (std::uint64_t round = 1; round <= 10; ++round) {
    std::vector<PrototypeSet> locals;
    for (auto& c : clients) locals.push_back(local_training(c, cfg, c.stored_global, round).prototypes);
    exchange_and_verify(clients, locals, dir, round);
    RoundHooks hooks;
    if (std::find(corrupt.begin(), corrupt.end(), round) != corrupt.end()) {
      hooks.forced_winner = static_cast<ClientId>(round % 5);
      hooks.tamper_payload = [](PrototypeSet& s) {
        const auto [cls, v] = *s.begin();
        s.set(cls, (v.array() + 0.5).matrix());
      };
    }
    const auto mined = aggregate_and_mine(clients, cfg, round, coordinator, hooks);
    if (!validate_and_update(clients, mined.block).accepted) rejected.push_back(round);
    for (const auto& c : clients)
      stores_agree = stores_agree && bitwise_equal(c.stored_global, clients.front().stored_global) &&
                     c.chain.tip_hash() == clients.front().chain.tip_hash();
  }
  const std::size_t blocks = clients.front().chain.size() - 1;  // genesis excluded
  const bool chain_ok = !validate_chain(clients.front().chain).has_value();
  std::string which;
  for (auto r : rejected) which += fmt::format("{}{}", which.empty() ? "" : ",", r);
  return {rejected == corrupt && blocks == 7 && stores_agree && chain_ok,
          fmt::format("corrupted rounds 2,5,9; rejected [{}]; {} blocks after genesis (want 7); stored_global identical "
                      "every round: {}; chain valid: {}",
                      which, blocks, stores_agree ? "yes" : "no", chain_ok ? "yes" : "no")};
}

// 4 -------------------------------------------------------------------------

Verdict ledger_integrity() {
  const auto chain = testutil::build_chain(4, 8, 11);  // five blocks including genesis
  if (validate_chain(chain).has_value()) return {false, "reference chain does not validate"};

  // Bit positions: every header byte, every payload byte, then the recorded tip hash.
  std::vector<std::size_t> header_start, payload_start;
  std::size_t total = 0;
  for (const auto& b : chain.blocks()) {
    header_start.push_back(total);
    total += kHeaderBytes;
    payload_start.push_back(total);
    total += b.payload.size();
  }
  const std::size_t tip_start = total;
  total += 32;

  Rng rng(99);
  int caught = 0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    const std::size_t bit = rng.uniform_index(total * 8);
    const std::size_t byte = bit / 8;
    const auto mask = static_cast<std::uint8_t>(1u << (bit % 8));
    Chain m = chain;
    if (byte >= tip_start) {
      Digest tip = m.tip_hash();
      tip[byte - tip_start] ^= mask;
      m.set_tip_hash(tip);
    } else {
      std::size_t i = chain.size() - 1;
      while (header_start[i] > byte) --i;
      auto& blk = m.mutable_blocks()[i];
      if (byte < payload_start[i]) {
        auto raw = blk.header.encode();
        raw[byte - header_start[i]] ^= mask;
        blk.header = BlockHeader::decode(raw);
      } else {
        blk.payload[byte - payload_start[i]] ^= mask;
      }
    }
    if (validate_chain(m).has_value()) ++caught;
  }
  return {caught == trials, fmt::format("{}/{} single-bit mutations caught over {} bits", caught, trials, total * 8)};
}

// 5 -------------------------------------------------------------------------

Verdict budget_model() {
  struct Tuple {
    double beta;
    std::int64_t rounds;
    double expected;
  };
  const Tuple tuples[] = {{4, 6, 76}, {5, 5, 75}, {6, 5, 70}, {7, 6, 58}};
  bool ok = local_iterations(100, 6, 1, 4) == 12;
  std::string detail = fmt::format("E(100,6,1,4)={}", local_iterations(100, 6, 1, 4));
  for (const auto& t : tuples) {
    const double got = nominal_training_budget(100, t.rounds, t.beta);
    ok = ok && got == t.expected;
    detail += fmt::format("; beta={}: ({}, {}) want ({}, {})", t.beta, got, t.rounds, t.expected, t.rounds);
  }
  return {ok, detail};
}

// 6 -------------------------------------------------------------------------

Verdict bound_consistency() {
  Rng rng(6);
  int sign_samples = 0;
  int sign_violations = 0;
  while (sign_samples < 1000) {
    ConvergenceConstants c;
    c.L1 = 0.1 + 5 * rng.uniform01();
    c.L2 = 0.1 + 3 * rng.uniform01();
    c.G = 0.1 + 3 * rng.uniform01();
    c.sigma2 = 3 * rng.uniform01();
    c.Q = 0.01 + 20 * rng.uniform01();
    const double a = 0.05 + 2 * rng.uniform01();
    const double b = 0.05 + 5 * rng.uniform01();
    const auto r = static_cast<std::int64_t>(1 + rng.uniform_index(20));
    const double t = b * static_cast<double>(r) + 0.1 + 200 * rng.uniform01();
    // The partial sum never exceeds the full-round sum.
    const double partial = c.Q * (0.05 + 0.95 * rng.uniform01());
    const auto base = corollary1_limits(c, a, b, r, t, 0.0, partial);
    if (base.lambda_unbounded || base.lambda_max <= 0) continue;
    const double lambda = base.lambda_max * 0.99 * rng.uniform01();
    const auto lim = corollary1_limits(c, a, b, r, t, lambda, partial);
    if (lim.eta_max <= 0) continue;
    const double eta = lim.eta_max * (0.001 + 0.998 * rng.uniform01());
    ++sign_samples;
    if (!(theorem1_bound(c, lambda, eta, a, b, r, t) < 0)) ++sign_violations;
  }

  int mono_samples = 0;
  int mono_violations = 0;
  while (mono_samples < 1000) {
    ConvergenceConstants c;
    c.L1 = 0.1 + 2 * rng.uniform01();
    c.L2 = 0.1 + rng.uniform01();
    c.G = 0.1 + rng.uniform01();
    c.sigma2 = rng.uniform01();
    c.chi = 0.5 + 10 * rng.uniform01();
    c.delta = 0.01 + 10 * rng.uniform01();
    const double a = 0.05 + rng.uniform01();
    const double b = 0.05 + rng.uniform01();
    const double t = 10 + 200 * rng.uniform01();
    // (eta, lambda) must satisfy the rate conditions at chi and at chi / 2.
    const double half = c.chi / 2;
    const double lambda = 0.9 * rng.uniform01() * half / (c.L2 * c.G);
    const double cap = 2 * (half - lambda * c.L2 * c.G) / (c.L1 * (half + c.sigma2));
    const double eta = (0.01 + 0.89 * rng.uniform01()) * cap;
    try {
      const auto loose = corollary2_min_rounds(c, a, b, t, eta, lambda);
      auto tight_c = c;
      tight_c.chi = half;
      const auto tight = corollary2_min_rounds(tight_c, a, b, t, eta, lambda);
      ++mono_samples;
      if (tight.rounds < loose.rounds) ++mono_violations;
    } catch (const BudgetError&) {
    }
  }
  return {sign_violations == 0 && mono_violations == 0,
          fmt::format("theorem1_bound < 0 inside Corollary-1 limits: {}/{} samples; R_min non-decreasing when chi "
                      "halves: {}/{} samples",
                      sign_samples - sign_violations, sign_samples, mono_samples - mono_violations, mono_samples)};
}

// 7 -------------------------------------------------------------------------

Verdict desk_scale_learning() {
  const auto t0 = Clock::now();
  const char* dir = std::getenv(kDataDirEnv);
  if (dir == nullptr || !fs::exists(fs::path(dir) / "train-images-idx3-ubyte"))
    return {false, fmt::format("MNIST IDX files not found (set {})", kDataDirEnv)};

  ExperimentConfig cfg;
  cfg.dataset = DatasetKind::kMnist;
  cfg.max_samples = 3000;
  cfg.train_fraction = 2.0 / 3.0;
  cfg.clients = 5;
  cfg.avg = 3;
  cfg.std = 1;
  cfg.feature_dim = 64;
  cfg.rounds = 6;
  cfg.local_iterations = 20;
  cfg.eta = 0.1;
  cfg.threads = 1;
  cfg.validate();

  std::vector<double> with, without;
  std::size_t train_total = 0, test_total = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    cfg.seed = seed;
    const auto data = load_dataset(cfg);
    auto partition = partition_dataset(cfg, data);
    if (seed == 1)
      for (const auto& s : partition.shards) {
        train_total += s.train.size();
        test_total += s.test.size();
      }
    for (double lambda : {1.0, 0.0}) {
      cfg.lambda = lambda;
      const auto res = run_experiment(make_setup(cfg, partition.shards));
      (lambda == 1.0 ? with : without).push_back(res.series.back().taa);
    }
  }
  const double worst_with = *std::min_element(with.begin(), with.end());
  std::sort(with.begin(), with.end());
  std::sort(without.begin(), without.end());
  const double gap_pp = 100 * (with[2] - without[2]);
  const double secs = seconds_since(t0);
  return {worst_with >= 0.85 && gap_pp >= 1.0 && secs < 300,
          fmt::format("{} train / {} test; lowest TAA at lambda=1 over 5 seeds {:.4f} (>= 0.85); median TAA "
                      "lambda=1 {:.4f} vs lambda=0 {:.4f}, gap {:+.2f} pp (>= +1 pp); {:.1f}s (< 300s)",
                      train_total, test_total, worst_with, with[2], without[2], gap_pp, secs)};
}

// 8 -------------------------------------------------------------------------

Verdict communication_accounting() {
  auto run = [](std::vector<Eigen::Index> hidden, Eigen::Index feat, double avg, std::size_t clients) {
    const auto data = synth_blobs(10, 12, 8, 0.1, 4);
    PartitionSpec spec{.clients = clients, .avg = avg, .std = avg == 10 ? 0.0 : 1.0, .seed = 4};
    ExperimentSetup s;
    s.shards = partition_non_iid(data, spec).shards;
    s.hidden = std::move(hidden);
    s.feature_dim = feat;
    s.rounds = 2;
    s.seed = 4;
    s.threads = 1;
    s.round.local_iterations = 2;
    s.round.difficulty_bits = 2;
    return run_experiment(s);
  };
  const auto narrow = run({32}, 64, 3, 5);
  const auto wide = run({64}, 64, 3, 5);
  bool same = narrow.series.size() == wide.series.size();
  for (std::size_t i = 0; same && i < narrow.series.size(); ++i)
    for (std::size_t k = 0; k < narrow.series[i].clients.size(); ++k)
      same = same && narrow.series[i].clients[k].params_transmitted == wide.series[i].clients[k].params_transmitted;
  const std::size_t narrow_params = narrow.clients.front().params.parameter_count();
  const std::size_t wide_params = wide.clients.front().params.parameter_count();

  const auto full = run({32}, 1000, 10, 2);
  bool all_10k = true;
  for (const auto& m : full.series)
    for (const auto& c : m.clients) all_10k = all_10k && c.params_transmitted == 10000;
  return {same && all_10k && wide_params > narrow_params,
          fmt::format("hidden 32 -> 64 ({} -> {} model parameters) leaves params_transmitted unchanged: {}; "
                      "d_p=1000 with all 10 classes: {} per client (want 1.00e4)",
                      narrow_params, wide_params, same ? "yes" : "no",
                      full.series.back().clients.front().params_transmitted)};
}

// 9 -------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Verdict determinism() {
  const auto root = fs::temp_directory_path() / fmt::format("dfpl_accept_det_{}", ::getpid());
  fs::remove_all(root);
  ExperimentConfig cfg;
  cfg.clients = 4;
  cfg.rounds = 4;
  cfg.local_iterations = 10;
  cfg.seed = 31;
  cfg.threads = 2;
  for (const char* run : {"a", "b"}) {
    cfg.output_dir = root / run;
    (void)run_and_write(cfg);
  }
  const bool metrics = slurp(root / "a" / "metrics.csv") == slurp(root / "b" / "metrics.csv");
  const bool chain = slurp(root / "a" / "chain.jsonl") == slurp(root / "b" / "chain.jsonl");
  const bool nonempty = !slurp(root / "a" / "metrics.csv").empty() && !slurp(root / "a" / "chain.jsonl").empty();
  fs::remove_all(root);
  return {metrics && chain && nonempty,
          fmt::format("metrics.csv identical: {}; chain.jsonl identical: {}", metrics ? "yes" : "no",
                      chain ? "yes" : "no")};
}

}  // namespace

int main() {
  set_log_level(LogLevel::kError);
  struct Criterion {
    int id;
    const char* name;
    std::function<Verdict()> run;
  };
  const Criterion criteria[] = {
      {1, "gradient oracle", gradient_oracle},
      {2, "aggregation oracle", aggregation_oracle},
      {3, "consensus safety", consensus_safety},
      {4, "ledger integrity", ledger_integrity},
      {5, "budget model", budget_model},
      {6, "bound consistency", bound_consistency},
      {7, "desk-scale learning", desk_scale_learning},
      {8, "communication accounting", communication_accounting},
      {9, "determinism", determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, fmt::format("threw: {}", e.what())};
    }
    if (!v.pass) ++failed;
    std::cout << fmt::format("{} criterion {} ({}): {}\n", v.pass ? "PASS" : "FAIL", c.id, c.name, v.detail)
              << std::flush;
  }
  std::cout << fmt::format("{} of 9 criteria passed\n", 9 - failed);
  return failed == 0 ? 0 : 1;
}

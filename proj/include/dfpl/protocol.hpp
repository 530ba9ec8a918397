#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dfpl/data.hpp"
#include "dfpl/identity.hpp"
#include "dfpl/ledger.hpp"
#include "dfpl/nn.hpp"
#include "dfpl/prototype.hpp"
#include "dfpl/random.hpp"

namespace dfpl {

enum class MiningMode {
  kSim,   // winner drawn from the coordinator's seeded generator, expected trials charged
  kReal,  // every client hashes; fewest trials wins, lowest id breaks ties
};

struct RoundConfig {
  std::int64_t local_iterations = 20;  // E
  double eta = 0.1;
  double lambda = 1.0;
  std::size_t batch_size = 32;
  std::uint32_t difficulty_bits = 8;
  MiningMode mode = MiningMode::kSim;
  std::uint64_t max_trials = std::uint64_t{1} << 26;
  AggregationRule aggregation = AggregationRule::kContributorMean;

  /// Throws InvalidArgument naming the offending field.
  void validate() const;
};

using KeyDirectory = std::map<ClientId, PublicKey>;

struct ClientState {
  ClientId id = 0;
  KeyPair keys;
  ModelParams<double> params;
  LabeledSet train;
  LabeledSet test;
  /// Global prototypes of the last accepted block.
  PrototypeSet stored_global;
  /// Signature-verified sets of this round, own set included, ascending owner.
  std::vector<PrototypeSet> received;
  /// Aggregate of `received`, used to vote on the proposed block.
  PrototypeSet computed_global;
  /// This round's broadcast.
  std::optional<SignedPrototypes> sent;
  Chain chain;
  Rng rng;
  std::vector<std::size_t> batch_order;
  std::size_t batch_cursor = 0;
};

/// Fresh client: own parameters from `model_seed`, keys from `key_seed`,
/// a genesis-only chain at `difficulty_bits`.
ClientState make_client(ClientId id, const ClientShard& shard, std::span<const Eigen::Index> hidden,
                        Eigen::Index feature_dim, std::uint64_t model_seed, std::uint64_t key_seed,
                        const Chain& genesis);

/// Next `batch` training rows: the shard is reshuffled at every epoch
/// boundary and a batch may straddle two epochs. A batch at least as large
/// as the shard is the whole shard in its stored order.
std::vector<std::size_t> next_batch(ClientState& client, std::size_t batch);

struct LocalTrainingResult {
  PrototypeSet prototypes;
  std::vector<double> losses;         // L_S + lambda * L_R per iteration
  std::vector<double> grad_sq_norms;  // ||g||^2 per iteration
};

/// E SGD iterations on the prototype-regularised loss, then prototypes of the
/// full training shard under the final parameters. Parameters persist in
/// `client` for the next round.
LocalTrainingResult local_training(ClientState& client, const RoundConfig& cfg, const PrototypeSet& global,
                                   std::uint64_t round);

struct DropRecord {
  ClientId receiver = 0;
  ClientId sender = 0;
  std::string reason;
};

struct ExchangeReport {
  std::vector<DropRecord> drops;
};

/// Seals each client's `prototypes` for `round`; sets ClientState::sent.
std::vector<SignedPrototypes> broadcast(std::span<ClientState> clients, std::span<const PrototypeSet> prototypes,
                                        std::uint64_t round);

/// Every client keeps its own set plus each peer message that verifies
/// against the directory, carries `round`, and decodes to the right
/// dimension. Everything else is dropped and recorded.
ExchangeReport deliver(std::span<ClientState> clients, std::span<const SignedPrototypes> messages,
                       const KeyDirectory& directory, std::uint64_t round);

/// broadcast then deliver over a fully connected bus.
ExchangeReport exchange_and_verify(std::span<ClientState> clients, std::span<const PrototypeSet> prototypes,
                                   const KeyDirectory& directory, std::uint64_t round);

/// Test and adversary hooks for one round.
struct RoundHooks {
  std::optional<ClientId> forced_winner;
  /// Applied by the winner to its payload before sealing.
  std::function<void(PrototypeSet&)> tamper_payload;
};

class RoundFailure : public Error {
 public:
  RoundFailure(std::uint64_t round, const std::string& what) : Error(what), round_(round) {}
  [[nodiscard]] std::uint64_t round() const { return round_; }

 private:
  std::uint64_t round_;
};

struct MiningOutcome {
  ClientId winner = 0;
  Block block;
  std::uint64_t trials = 0;  // charged trials (expected in SIM, counted in REAL)
  std::vector<Digest> payload_hashes;  // per client, hash of its own aggregate
};

/// Every client aggregates its verified sets; the winner seals its aggregate
/// on top of its chain tip.
MiningOutcome aggregate_and_mine(std::span<ClientState> clients, const RoundConfig& cfg, std::uint64_t round,
                                 Rng& coordinator, const RoundHooks& hooks = {});

struct ValidationOutcome {
  std::size_t approvals = 0;
  std::vector<bool> votes;
  bool accepted = false;
};

/// A client approves when the PoW holds, the block extends its tip, and the
/// payload is bit-identical to its own aggregate. Accepted iff approvals are
/// a strict majority; only then do all clients append the block and adopt
/// its payload as stored_global.
ValidationOutcome validate_and_update(std::span<ClientState> clients, const Block& block);

/// Raw prototype values carried by a signed message (signature excluded).
std::size_t transmitted_parameter_count(const SignedPrototypes& message);

struct ClientMetrics {
  ClientId id = 0;
  double accuracy = 0;
  double loss = 0;
  std::size_t test_size = 0;
  std::size_t params_transmitted = 0;
};

struct Metrics {
  std::uint64_t round = 0;
  double taa = 0;
  double tal = 0;
  double params_transmitted = 0;  // mean over clients
  ClientId winner = 0;
  std::uint64_t mine_trials = 0;
  bool accepted = true;
  std::vector<ClientMetrics> clients;
};

/// Accuracy and cross entropy of g(f(x)) on each client's test shard;
/// TAA and TAL are unweighted means over clients.
Metrics evaluate(std::span<const ClientState> clients);

struct ExperimentSetup {
  std::vector<ClientShard> shards;
  std::vector<Eigen::Index> hidden = {128};
  Eigen::Index feature_dim = 64;
  RoundConfig round;
  std::int64_t rounds = 6;  // R
  std::uint64_t seed = 0;
  /// Worker threads for local training; 0 = hardware concurrency.
  unsigned threads = 0;
  /// Throw RoundFailure when a block is rejected.
  bool fail_on_rejection = true;
  std::function<RoundHooks(std::uint64_t round)> hooks;
};

struct ExperimentResult {
  std::vector<Metrics> series;
  Chain chain;
  std::vector<ClientState> clients;
  /// Heuristic proxies: per round, mean over clients of sum_e ||g||^2, and
  /// the largest single-iteration gradient norm seen.
  std::vector<double> q_proxy;
  double g_proxy = 0;
  std::vector<std::uint64_t> rejected_rounds;
};

/// R rounds of train / exchange / mine / validate. Deterministic in SIM mode.
ExperimentResult run_experiment(const ExperimentSetup& setup);

}  // namespace dfpl

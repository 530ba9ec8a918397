#include "dfpl/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include <fmt/format.h>

#include "dfpl/log.hpp"

namespace dfpl {

void RoundConfig::validate() const {
  if (local_iterations < 1) throw InvalidArgument("E (local_iterations) must be at least 1");
  if (!(eta > 0)) throw InvalidArgument("eta must be positive");
  if (!(lambda >= 0)) throw InvalidArgument("lambda must be non-negative");
  if (batch_size < 1) throw InvalidArgument("batch_size must be at least 1");
  if (difficulty_bits > 255) throw InvalidArgument("difficulty_bits must lie in [0, 255]");
  if (max_trials < 1) throw InvalidArgument("max_trials must be at least 1");
}

ClientState make_client(ClientId id, const ClientShard& shard, std::span<const Eigen::Index> hidden,
                        Eigen::Index feature_dim, std::uint64_t model_seed, std::uint64_t key_seed,
                        const Chain& genesis) {
  ClientState c;
  c.id = id;
  c.keys = keygen(key_seed);
  c.train = shard.train;
  c.test = shard.test;
  Rng init(model_seed);
  c.params = init_params<double>(c.train.input_dim(), hidden, feature_dim,
                                 static_cast<Eigen::Index>(c.train.num_classes), init);
  c.rng = init.split(1);
  c.chain = genesis;
  c.stored_global = PrototypeSet(kGlobalOwner, 0);
  return c;
}

std::vector<std::size_t> next_batch(ClientState& client, std::size_t batch) {
  const std::size_t n = client.train.size();
  if (n == 0) throw InvalidArgument(fmt::format("client {} has an empty training shard", client.id));
  if (batch >= n) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  std::vector<std::size_t> out;
  out.reserve(batch);
  while (out.size() < batch) {
    if (client.batch_cursor >= client.batch_order.size()) {
      client.batch_order.resize(n);
      std::iota(client.batch_order.begin(), client.batch_order.end(), std::size_t{0});
      client.rng.shuffle(client.batch_order);
      client.batch_cursor = 0;
    }
    out.push_back(client.batch_order[client.batch_cursor++]);
  }
  return out;
}

LocalTrainingResult local_training(ClientState& client, const RoundConfig& cfg, const PrototypeSet& global,
                                   std::uint64_t round) {
  cfg.validate();
  if (client.train.empty()) throw InvalidArgument(fmt::format("client {} has an empty training shard", client.id));

  LocalTrainingResult out;
  out.losses.reserve(static_cast<std::size_t>(cfg.local_iterations));
  for (std::int64_t e = 0; e < cfg.local_iterations; ++e) {
    const auto rows = next_batch(client, cfg.batch_size);
    const LabeledSet batch = client.train.subset(rows);
    auto step = backward(client.params, batch.features, std::span<const ClassId>(batch.labels), global, cfg.lambda);
    out.losses.push_back(step.loss_s + cfg.lambda * step.loss_r);
    out.grad_sq_norms.push_back(squared_norm(step.grads));
    client.params = sgd_step(client.params, step.grads, cfg.eta);
  }
  out.prototypes = local_prototypes(client.params, client.train, client.id, round);
  return out;
}

// ---- exchange -------------------------------------------------------------

std::vector<SignedPrototypes> broadcast(std::span<ClientState> clients, std::span<const PrototypeSet> prototypes,
                                        std::uint64_t round) {
  if (prototypes.size() != clients.size()) throw InvalidArgument("one prototype set per client required");
  std::vector<SignedPrototypes> out;
  out.reserve(clients.size());
  for (std::size_t k = 0; k < clients.size(); ++k) {
    auto msg = SignedPrototypes::seal(prototypes[k], round, clients[k].id, clients[k].keys);
    clients[k].sent = msg;
    out.push_back(std::move(msg));
  }
  return out;
}

ExchangeReport deliver(std::span<ClientState> clients, std::span<const SignedPrototypes> messages,
                       const KeyDirectory& directory, std::uint64_t round) {
  ExchangeReport report;
  for (auto& receiver : clients) {
    if (!receiver.sent) throw InvalidArgument(fmt::format("client {} has not broadcast this round", receiver.id));
    receiver.received.clear();
    receiver.received.push_back(
        PrototypeSet::from_canonical_bytes(receiver.sent->prototype_bytes, receiver.id, round));
    const Eigen::Index own_dim = receiver.params.feature_dim();

    auto drop = [&](const SignedPrototypes& m, std::string reason) {
      log_info(fmt::format("client {} drops message from {}: {}", receiver.id, m.sender, reason));
      report.drops.push_back({receiver.id, m.sender, std::move(reason)});
    };

    for (const auto& m : messages) {
      if (m.sender == receiver.id) continue;
      const auto key = directory.find(m.sender);
      if (key == directory.end()) {
        drop(m, "unknown sender");
        continue;
      }
      if (!verify(m.signed_payload(), m.signature, key->second)) {
        drop(m, "bad signature");
        continue;
      }
      if (m.round != round) {
        drop(m, fmt::format("round {} does not match current round {}", m.round, round));
        continue;
      }
      const bool duplicate = std::any_of(receiver.received.begin(), receiver.received.end(),
                                         [&](const PrototypeSet& s) { return s.owner() == m.sender; });
      if (duplicate) {
        drop(m, "duplicate sender");
        continue;
      }
      try {
        auto set = PrototypeSet::from_canonical_bytes(m.prototype_bytes, m.sender, round);
        if (!set.empty() && set.dim() != own_dim) {
          drop(m, fmt::format("prototype dimension {} differs from {}", set.dim(), own_dim));
          continue;
        }
        receiver.received.push_back(std::move(set));
      } catch (const Error& e) {
        drop(m, fmt::format("malformed payload: {}", e.what()));
      }
    }
    std::sort(receiver.received.begin(), receiver.received.end(),
              [](const PrototypeSet& a, const PrototypeSet& b) { return a.owner() < b.owner(); });
  }
  return report;
}

ExchangeReport exchange_and_verify(std::span<ClientState> clients, std::span<const PrototypeSet> prototypes,
                                   const KeyDirectory& directory, std::uint64_t round) {
  const auto messages = broadcast(clients, prototypes, round);
  return deliver(clients, messages, directory, round);
}

// ---- aggregation, mining, validation ---------------------------------------

MiningOutcome aggregate_and_mine(std::span<ClientState> clients, const RoundConfig& cfg, std::uint64_t round,
                                 Rng& coordinator, const RoundHooks& hooks) {
  if (clients.empty()) throw InvalidArgument("no clients");
  MiningOutcome out;
  for (auto& c : clients) {
    c.computed_global = aggregate_global(c.received, round, cfg.aggregation);
    out.payload_hashes.push_back(sha256(c.computed_global.canonical_bytes()));
  }

  auto candidate_for = [&](const ClientState& c, const Bytes& payload) {
    BlockHeader h;
    h.round = c.chain.tip().header.round + 1;
    h.prev_hash = c.chain.tip_hash();
    h.payload_hash = sha256(payload);
    h.miner = c.id;
    h.difficulty_bits = cfg.difficulty_bits;
    return h;
  };

  std::size_t winner_idx = 0;
  std::optional<MineResult> real_result;
  if (hooks.forced_winner) {
    auto it = std::find_if(clients.begin(), clients.end(), [&](const ClientState& c) { return c.id == *hooks.forced_winner; });
    if (it == clients.end()) throw InvalidArgument("forced winner is not a client");
    winner_idx = static_cast<std::size_t>(it - clients.begin());
  } else if (cfg.mode == MiningMode::kSim) {
    winner_idx = static_cast<std::size_t>(coordinator.uniform_index(clients.size()));
  } else {
    // Every miner races on its own candidate; fewest trials wins.
    std::vector<std::optional<MineResult>> results(clients.size());
    for (std::size_t k = 0; k < clients.size(); ++k) {
      const auto payload = clients[k].computed_global.canonical_bytes();
      try {
        results[k] = mine(candidate_for(clients[k], payload), 0, cfg.max_trials);
      } catch (const MiningExhausted&) {
      }
    }
    std::optional<std::size_t> best;
    for (std::size_t k = 0; k < clients.size(); ++k) {
      if (!results[k]) continue;
      if (!best || results[k]->trials < results[*best]->trials ||
          (results[k]->trials == results[*best]->trials && clients[k].id < clients[*best].id))
        best = k;
    }
    if (!best) throw RoundFailure(round, fmt::format("round {}: every miner exhausted {} trials", round, cfg.max_trials));
    winner_idx = *best;
    real_result = results[*best];
  }

  auto& winner = clients[winner_idx];
  PrototypeSet payload_set = winner.computed_global;
  bool tampered = false;
  if (hooks.tamper_payload) {
    hooks.tamper_payload(payload_set);
    tampered = true;
  }
  out.block.payload = payload_set.canonical_bytes();
  out.block.header = candidate_for(winner, out.block.payload);
  out.winner = winner.id;

  if (real_result && !tampered) {
    out.block.header.nonce = real_result->nonce;
    out.trials = real_result->trials;
  } else {
    MineResult sealed;
    try {
      sealed = mine(out.block.header, 0, cfg.max_trials);
    } catch (const MiningExhausted& e) {
      throw RoundFailure(round, fmt::format("round {}: {}", round, e.what()));
    }
    out.block.header.nonce = sealed.nonce;
    out.trials = cfg.mode == MiningMode::kSim
                     ? (cfg.difficulty_bits >= 64 ? ~std::uint64_t{0} : std::uint64_t{1} << cfg.difficulty_bits)
                     : sealed.trials;
  }
  return out;
}

ValidationOutcome validate_and_update(std::span<ClientState> clients, const Block& block) {
  ValidationOutcome out;
  const Digest header_hash = hash_block(block.header);
  const bool pow_ok = block.header.difficulty_bits <= 255 &&
                      PowTarget(static_cast<int>(block.header.difficulty_bits)).admits(header_hash);
  const bool payload_ok = sha256(block.payload) == block.header.payload_hash;

  for (const auto& c : clients) {
    const bool extends = block.header.prev_hash == c.chain.tip_hash() &&
                         block.header.round == c.chain.tip().header.round + 1;
    const bool matches = block.header.payload_hash == sha256(c.computed_global.canonical_bytes());
    const bool vote = pow_ok && payload_ok && extends && matches;
    out.votes.push_back(vote);
    if (vote) ++out.approvals;
  }
  out.accepted = 2 * out.approvals > clients.size();
  if (!out.accepted) return out;

  const auto adopted = PrototypeSet::from_canonical_bytes(block.payload, kGlobalOwner, block.header.round);
  for (auto& c : clients) {
    c.stored_global = adopted;
    c.chain.append(block);
  }
  return out;
}

// ---- evaluation ---------------------------------------------------------------

std::size_t transmitted_parameter_count(const SignedPrototypes& message) {
  // count(u32) + per class: id(u32) + dim(u32) + dim doubles.
  ByteReader r(message.prototype_bytes);
  const std::uint32_t classes = r.u32();
  std::size_t values = 0;
  for (std::uint32_t i = 0; i < classes; ++i) {
    r.u32();
    const std::uint32_t dim = r.u32();
    r.raw(static_cast<std::size_t>(dim) * 8);
    values += dim;
  }
  return values;
}

Metrics evaluate(std::span<const ClientState> clients) {
  if (clients.empty()) throw InvalidArgument("no clients to evaluate");
  Metrics m;
  double transmitted = 0;
  for (const auto& c : clients) {
    if (c.test.empty()) throw InvalidArgument(fmt::format("client {} has an empty test shard", c.id));
    const auto pass = forward(c.params, c.test.features);
    std::size_t correct = 0;
    for (Eigen::Index r = 0; r < pass.logits.rows(); ++r) {
      Eigen::Index best = 0;
      pass.logits.row(r).maxCoeff(&best);
      if (static_cast<ClassId>(best) == c.test.labels[static_cast<std::size_t>(r)]) ++correct;
    }
    ClientMetrics cm;
    cm.id = c.id;
    cm.test_size = c.test.size();
    cm.accuracy = static_cast<double>(correct) / static_cast<double>(c.test.size());
    cm.loss = cross_entropy(pass.logits, std::span<const ClassId>(c.test.labels));
    cm.params_transmitted = c.sent ? transmitted_parameter_count(*c.sent) : 0;
    m.taa += cm.accuracy;
    m.tal += cm.loss;
    transmitted += static_cast<double>(cm.params_transmitted);
    m.clients.push_back(cm);
  }
  const auto k = static_cast<double>(clients.size());
  m.taa /= k;
  m.tal /= k;
  m.params_transmitted = transmitted / k;
  return m;
}

// ---- driver -------------------------------------------------------------------

namespace {

template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += threads) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

ExperimentResult run_experiment(const ExperimentSetup& setup) {
  setup.round.validate();
  if (setup.shards.empty()) throw InvalidArgument("at least one client shard required");
  if (setup.rounds < 0) throw InvalidArgument("R must be non-negative");

  const Chain genesis = Chain::with_genesis(setup.round.difficulty_bits);
  ExperimentResult res;
  KeyDirectory directory;
  for (std::size_t k = 0; k < setup.shards.size(); ++k) {
    const auto id = static_cast<ClientId>(k);
    res.clients.push_back(make_client(id, setup.shards[k], setup.hidden, setup.feature_dim,
                                      mix_seed(setup.seed, 2 * k), mix_seed(setup.seed, 2 * k + 1), genesis));
    directory.emplace(id, res.clients.back().keys.public_key);
  }
  Rng coordinator(mix_seed(setup.seed, 0xC0FFEE));

  for (std::int64_t r = 1; r <= setup.rounds; ++r) {
    const auto round = static_cast<std::uint64_t>(r);
    const RoundHooks hooks = setup.hooks ? setup.hooks(round) : RoundHooks{};

    std::vector<LocalTrainingResult> trained(res.clients.size());
    parallel_for(res.clients.size(), setup.threads, [&](std::size_t k) {
      auto& c = res.clients[k];
      trained[k] = local_training(c, setup.round, c.stored_global, round);
    });

    std::vector<PrototypeSet> locals;
    double q = 0;
    for (const auto& t : trained) {
      locals.push_back(t.prototypes);
      q += std::accumulate(t.grad_sq_norms.begin(), t.grad_sq_norms.end(), 0.0);
      for (double g2 : t.grad_sq_norms) res.g_proxy = std::max(res.g_proxy, std::sqrt(g2));
    }
    res.q_proxy.push_back(q / static_cast<double>(trained.size()));

    exchange_and_verify(res.clients, locals, directory, round);
    const auto mined = aggregate_and_mine(res.clients, setup.round, round, coordinator, hooks);
    const auto verdict = validate_and_update(res.clients, mined.block);

    auto metrics = evaluate(res.clients);
    metrics.round = round;
    metrics.winner = mined.winner;
    metrics.mine_trials = mined.trials;
    metrics.accepted = verdict.accepted;
    res.series.push_back(std::move(metrics));

    if (!verdict.accepted) {
      res.rejected_rounds.push_back(round);
      log_warn(fmt::format("round {}: block from client {} rejected ({} of {} approvals)", round, mined.winner,
                           verdict.approvals, res.clients.size()));
      if (setup.fail_on_rejection)
        throw RoundFailure(round, fmt::format("round {}: block rejected with {} of {} approvals", round,
                                              verdict.approvals, res.clients.size()));
    }
  }
  res.chain = res.clients.front().chain;
  return res;
}

}  // namespace dfpl

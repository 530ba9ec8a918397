#include "dfpl/ledger.hpp"

#include <algorithm>
#include <istream>
#include <ostream>

#include <fmt/format.h>
#include <json.hpp>

namespace dfpl {

std::array<std::uint8_t, kHeaderBytes> BlockHeader::encode() const {
  ByteWriter w;
  w.u64(round);
  w.raw(prev_hash);
  w.raw(payload_hash);
  w.u32(miner);
  w.u64(nonce);
  w.u32(difficulty_bits);
  std::array<std::uint8_t, kHeaderBytes> out{};
  std::copy(w.bytes().begin(), w.bytes().end(), out.begin());
  return out;
}

BlockHeader BlockHeader::decode(std::span<const std::uint8_t, kHeaderBytes> bytes) {
  ByteReader r(bytes);
  BlockHeader h;
  h.round = r.u64();
  auto copy = [&](Digest& d) {
    auto s = r.raw(32);
    std::copy(s.begin(), s.end(), d.begin());
  };
  copy(h.prev_hash);
  copy(h.payload_hash);
  h.miner = r.u32();
  h.nonce = r.u64();
  h.difficulty_bits = r.u32();
  return h;
}

Digest hash_block(const BlockHeader& header) {
  const auto bytes = header.encode();
  return sha256(bytes);
}

PowTarget::PowTarget(int difficulty_bits) : bits_(difficulty_bits) {
  if (difficulty_bits < 0 || difficulty_bits > 255)
    throw InvalidArgument(fmt::format("difficulty_bits {} outside [0, 255]", difficulty_bits));
}

bool PowTarget::admits(const Digest& hash) const {
  // hash < 2^(256 - bits)  <=>  the leading `bits` bits are zero.
  int remaining = bits_;
  for (std::size_t i = 0; remaining > 0; ++i, remaining -= 8) {
    const int take = std::min(remaining, 8);
    const auto mask = static_cast<std::uint8_t>(0xFF << (8 - take));
    if ((hash[i] & mask) != 0) return false;
  }
  return true;
}

std::array<std::uint8_t, 33> PowTarget::big_endian() const {
  std::array<std::uint8_t, 33> out{};
  const int bit = 256 - bits_;  // position of the single set bit
  out[static_cast<std::size_t>(32 - bit / 8)] = static_cast<std::uint8_t>(1u << (bit % 8));
  return out;
}

PowTarget pow_target(int difficulty_bits) { return PowTarget(difficulty_bits); }

MineResult mine(const BlockHeader& candidate, std::uint64_t start_nonce, std::uint64_t max_trials) {
  if (max_trials < 1) throw InvalidArgument("max_trials must be at least 1");
  const PowTarget target(static_cast<int>(candidate.difficulty_bits));
  BlockHeader h = candidate;
  for (std::uint64_t t = 0; t < max_trials; ++t) {
    h.nonce = start_nonce + t;
    if (target.admits(hash_block(h))) return {h.nonce, t + 1};
  }
  throw MiningExhausted(max_trials, fmt::format("no valid nonce within {} trials at difficulty {}", max_trials,
                                                candidate.difficulty_bits));
}

// ---- chain ------------------------------------------------------------------

Chain Chain::with_genesis(std::uint32_t difficulty_bits) {
  Block genesis;
  genesis.header.difficulty_bits = difficulty_bits;
  genesis.header.miner = kGlobalOwner;
  genesis.payload = PrototypeSet{}.canonical_bytes();
  genesis.header.payload_hash = sha256(genesis.payload);
  genesis.header.nonce = mine(genesis.header, 0, ~std::uint64_t{0}).nonce;
  Chain c;
  c.append(std::move(genesis));
  return c;
}

void Chain::append(Block block) {
  tip_hash_ = hash_block(block.header);
  blocks_.push_back(std::move(block));
}

const char* to_string(ChainViolation::Kind kind) {
  switch (kind) {
    case ChainViolation::Kind::kEmpty: return "empty chain";
    case ChainViolation::Kind::kGenesis: return "bad genesis";
    case ChainViolation::Kind::kRound: return "round not consecutive";
    case ChainViolation::Kind::kLinkage: return "prev_hash mismatch";
    case ChainViolation::Kind::kPayloadHash: return "payload hash mismatch";
    case ChainViolation::Kind::kProofOfWork: return "proof of work fails";
    case ChainViolation::Kind::kTipHash: return "tip hash mismatch";
  }
  return "unknown";
}

std::optional<ChainViolation> validate_chain(const Chain& chain) {
  using Kind = ChainViolation::Kind;
  const auto& blocks = chain.blocks();
  if (blocks.empty()) return ChainViolation{0, Kind::kEmpty, "chain has no genesis block"};

  Digest prev_hash{};
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& h = blocks[i].header;
    if (i == 0) {
      if (h.round != 0 || h.prev_hash != Digest{})
        return ChainViolation{0, Kind::kGenesis, "genesis must have round 0 and a zero prev_hash"};
    } else {
      if (h.round != blocks[i - 1].header.round + 1)
        return ChainViolation{i, Kind::kRound,
                              fmt::format("round {} follows round {}", h.round, blocks[i - 1].header.round)};
      if (h.prev_hash != prev_hash) return ChainViolation{i, Kind::kLinkage, "prev_hash does not match predecessor"};
    }
    if (sha256(blocks[i].payload) != h.payload_hash)
      return ChainViolation{i, Kind::kPayloadHash, "payload does not hash to payload_hash"};
    if (h.difficulty_bits > 255)
      return ChainViolation{i, Kind::kProofOfWork, fmt::format("difficulty {} out of range", h.difficulty_bits)};
    prev_hash = hash_block(h);
    if (!PowTarget(static_cast<int>(h.difficulty_bits)).admits(prev_hash))
      return ChainViolation{i, Kind::kProofOfWork, "header hash is not below the target"};
  }
  if (prev_hash != chain.tip_hash())
    return ChainViolation{blocks.size() - 1, Kind::kTipHash, "recorded tip hash differs from last block"};
  return std::nullopt;
}

// ---- JSON lines -------------------------------------------------------------

void write_chain_jsonl(std::ostream& out, const Chain& chain) {
  for (const auto& b : chain.blocks()) {
    const auto& h = b.header;
    nlohmann::ordered_json j;
    j["round"] = h.round;
    j["prev_hash"] = to_hex(h.prev_hash);
    j["payload_hash"] = to_hex(h.payload_hash);
    j["miner"] = h.miner;
    j["nonce"] = h.nonce;
    j["difficulty_bits"] = h.difficulty_bits;
    j["hash"] = to_hex(hash_block(h));
    j["payload"] = to_hex(b.payload);
    out << j.dump() << '\n';
  }
}

namespace {

Digest digest_from_hex(const std::string& s) {
  const auto b = from_hex(s);
  if (b.size() != 32) throw Error("hash field must be 32 bytes");
  Digest d{};
  std::copy(b.begin(), b.end(), d.begin());
  return d;
}

}  // namespace

Chain read_chain_jsonl(std::istream& in) {
  Chain chain;
  std::string line;
  std::size_t lineno = 0;
  Digest last{};
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Block b;
      b.header.round = j.at("round").get<std::uint64_t>();
      b.header.prev_hash = digest_from_hex(j.at("prev_hash").get<std::string>());
      b.header.payload_hash = digest_from_hex(j.at("payload_hash").get<std::string>());
      b.header.miner = j.at("miner").get<ClientId>();
      b.header.nonce = j.at("nonce").get<std::uint64_t>();
      b.header.difficulty_bits = j.at("difficulty_bits").get<std::uint32_t>();
      b.payload = from_hex(j.at("payload").get<std::string>());
      last = digest_from_hex(j.at("hash").get<std::string>());
      chain.mutable_blocks().push_back(std::move(b));
    } catch (const nlohmann::json::exception& e) {
      throw Error(fmt::format("chain line {}: {}", lineno, e.what()));
    } catch (const Error& e) {
      throw Error(fmt::format("chain line {}: {}", lineno, e.what()));
    }
  }
  chain.set_tip_hash(last);
  return chain;
}

}  // namespace dfpl

#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dfpl/bytes.hpp"
#include "dfpl/identity.hpp"

namespace dfpl {

inline constexpr std::size_t kHeaderBytes = 88;

/// Fixed-layout block header, serialised little-endian in declaration order.
struct BlockHeader {
  std::uint64_t round = 0;  // chain height; genesis is 0
  Digest prev_hash{};
  Digest payload_hash{};
  ClientId miner = 0;
  std::uint64_t nonce = 0;
  std::uint32_t difficulty_bits = 0;

  [[nodiscard]] std::array<std::uint8_t, kHeaderBytes> encode() const;
  static BlockHeader decode(std::span<const std::uint8_t, kHeaderBytes> bytes);

  bool operator==(const BlockHeader&) const = default;
};

/// A sealed header plus the canonical bytes of the global prototypes it commits to.
struct Block {
  BlockHeader header;
  Bytes payload;
};

Digest hash_block(const BlockHeader& header);

/// Acceptance threshold 2^(256 - difficulty_bits) for a hash read as a
/// big-endian 256-bit integer.
class PowTarget {
 public:
  /// Throws InvalidArgument unless 0 <= bits <= 255.
  explicit PowTarget(int difficulty_bits);

  [[nodiscard]] int difficulty_bits() const { return bits_; }
  [[nodiscard]] bool admits(const Digest& hash) const;
  /// 257-bit big-endian representation (2^256 needs the extra byte at μ = 0).
  [[nodiscard]] std::array<std::uint8_t, 33> big_endian() const;

 private:
  int bits_;
};

PowTarget pow_target(int difficulty_bits);

class MiningExhausted : public Error {
 public:
  MiningExhausted(std::uint64_t trials, const std::string& what) : Error(what), trials_(trials) {}
  [[nodiscard]] std::uint64_t trials() const { return trials_; }

 private:
  std::uint64_t trials_;
};

struct MineResult {
  std::uint64_t nonce = 0;
  std::uint64_t trials = 0;
};

/// Tries nonces start_nonce, start_nonce + 1, ... until the header hash meets
/// its own difficulty. Throws MiningExhausted after max_trials attempts.
MineResult mine(const BlockHeader& candidate, std::uint64_t start_nonce, std::uint64_t max_trials);

/// Ordered blocks plus the recorded hash of the last one.
class Chain {
 public:
  /// Chain holding only a mined genesis block (round 0, zero prev_hash).
  static Chain with_genesis(std::uint32_t difficulty_bits);

  void append(Block block);

  [[nodiscard]] const std::vector<Block>& blocks() const { return blocks_; }
  [[nodiscard]] std::vector<Block>& mutable_blocks() { return blocks_; }
  [[nodiscard]] std::size_t size() const { return blocks_.size(); }
  [[nodiscard]] bool empty() const { return blocks_.empty(); }
  [[nodiscard]] const Block& tip() const { return blocks_.back(); }
  [[nodiscard]] const Digest& tip_hash() const { return tip_hash_; }
  void set_tip_hash(const Digest& h) { tip_hash_ = h; }

 private:
  std::vector<Block> blocks_;
  Digest tip_hash_{};
};

struct ChainViolation {
  enum class Kind { kEmpty, kGenesis, kRound, kLinkage, kPayloadHash, kProofOfWork, kTipHash };
  std::size_t index = 0;
  Kind kind = Kind::kEmpty;
  std::string detail;
};

const char* to_string(ChainViolation::Kind kind);

/// First violation in block order, or nullopt for a valid chain. Never throws
/// on malformed content.
std::optional<ChainViolation> validate_chain(const Chain& chain);

/// One JSON object per block: round, prev_hash, payload_hash, miner, nonce,
/// difficulty_bits, hash, payload (hex strings for byte fields).
void write_chain_jsonl(std::ostream& out, const Chain& chain);

/// Inverse of write_chain_jsonl; the tip hash is the last record's "hash".
/// Throws Error on malformed lines.
Chain read_chain_jsonl(std::istream& in);

}  // namespace dfpl

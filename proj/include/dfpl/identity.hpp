#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dfpl/bytes.hpp"
#include "dfpl/prototype_set.hpp"

namespace dfpl {

using PublicKey = std::array<std::uint8_t, 32>;
using SecretKey = std::array<std::uint8_t, 32>;
using Signature = std::array<std::uint8_t, 64>;
using Digest = std::array<std::uint8_t, 32>;

/// Ed25519 key pair; `secret` is the 32-byte seed the pair expands from.
struct KeyPair {
  SecretKey secret{};
  PublicKey public_key{};
};

/// SHA-256 of `data`.
Digest sha256(std::span<const std::uint8_t> data);

/// Deterministic key pair: the Ed25519 seed is SHA-256 of a domain tag and `seed`.
KeyPair keygen(std::uint64_t seed);

/// Deterministic Ed25519 signature of `payload`.
Signature sign(std::span<const std::uint8_t> payload, const KeyPair& key);

/// False for any mismatch, including malformed signatures or keys.
bool verify(std::span<const std::uint8_t> payload, const Signature& sig, const PublicKey& key);

/// One client's broadcast: round (u64 LE) | client id (u32 LE) |
/// canonical prototype bytes | signature (64 bytes). The signature covers
/// everything before it.
struct SignedPrototypes {
  std::uint64_t round = 0;
  ClientId sender = 0;
  Bytes prototype_bytes;
  Signature signature{};

  /// Bytes covered by the signature.
  [[nodiscard]] Bytes signed_payload() const;
  [[nodiscard]] Bytes encode() const;
  /// Throws Error on input shorter than the fixed fields.
  static SignedPrototypes decode(std::span<const std::uint8_t> wire);

  static SignedPrototypes seal(const PrototypeSet& protos, std::uint64_t round, ClientId sender, const KeyPair& key);
};

}  // namespace dfpl

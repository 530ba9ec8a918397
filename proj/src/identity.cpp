#include "dfpl/identity.hpp"

#include <cstring>
#include <mutex>

#include <sodium.h>

namespace dfpl {

namespace {

void ensure_sodium() {
  static std::once_flag once;
  std::call_once(once, [] {
    if (sodium_init() < 0) throw Error("libsodium initialisation failed");
  });
}

constexpr std::uint8_t kKeygenTag[] = {'d', 'f', 'p', 'l', '-', 'k', 'e', 'y', 'g', 'e', 'n'};

}  // namespace

Digest sha256(std::span<const std::uint8_t> data) {
  ensure_sodium();
  Digest out{};
  crypto_hash_sha256(out.data(), data.data(), data.size());
  return out;
}

KeyPair keygen(std::uint64_t seed) {
  ensure_sodium();
  ByteWriter w;
  w.raw(kKeygenTag);
  w.u64(seed);
  KeyPair kp;
  kp.secret = sha256(w.bytes());
  std::array<std::uint8_t, crypto_sign_SECRETKEYBYTES> expanded{};
  crypto_sign_seed_keypair(kp.public_key.data(), expanded.data(), kp.secret.data());
  sodium_memzero(expanded.data(), expanded.size());
  return kp;
}

Signature sign(std::span<const std::uint8_t> payload, const KeyPair& key) {
  ensure_sodium();
  std::array<std::uint8_t, crypto_sign_SECRETKEYBYTES> expanded{};
  std::array<std::uint8_t, crypto_sign_PUBLICKEYBYTES> pk{};
  crypto_sign_seed_keypair(pk.data(), expanded.data(), key.secret.data());
  Signature sig{};
  crypto_sign_detached(sig.data(), nullptr, payload.data(), payload.size(), expanded.data());
  sodium_memzero(expanded.data(), expanded.size());
  return sig;
}

bool verify(std::span<const std::uint8_t> payload, const Signature& sig, const PublicKey& key) {
  ensure_sodium();
  return crypto_sign_verify_detached(sig.data(), payload.data(), payload.size(), key.data()) == 0;
}

Bytes SignedPrototypes::signed_payload() const {
  ByteWriter w;
  w.u64(round);
  w.u32(sender);
  w.raw(prototype_bytes);
  return std::move(w).take();
}

Bytes SignedPrototypes::encode() const {
  Bytes out = signed_payload();
  out.insert(out.end(), signature.begin(), signature.end());
  return out;
}

SignedPrototypes SignedPrototypes::decode(std::span<const std::uint8_t> wire) {
  constexpr std::size_t kFixed = 8 + 4 + 64;
  if (wire.size() < kFixed) throw Error("signed message shorter than its fixed fields");
  ByteReader r(wire);
  SignedPrototypes m;
  m.round = r.u64();
  m.sender = r.u32();
  const auto body = r.raw(wire.size() - kFixed);
  m.prototype_bytes.assign(body.begin(), body.end());
  const auto sig = r.raw(64);
  std::memcpy(m.signature.data(), sig.data(), 64);
  return m;
}

SignedPrototypes SignedPrototypes::seal(const PrototypeSet& protos, std::uint64_t round, ClientId sender,
                                        const KeyPair& key) {
  SignedPrototypes m;
  m.round = round;
  m.sender = sender;
  m.prototype_bytes = protos.canonical_bytes();
  m.signature = sign(m.signed_payload(), key);
  return m;
}

}  // namespace dfpl

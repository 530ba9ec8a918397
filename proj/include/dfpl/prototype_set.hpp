#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "dfpl/types.hpp"

namespace dfpl {

/// Owner marker for sets produced by aggregation.
inline constexpr ClientId kGlobalOwner = 0xFFFFFFFFu;

/// Per-class feature vectors of a common dimension, tagged with owner and round.
///
/// Entries are kept ordered by class id; that order is the canonical order
/// used for serialization, hashing and aggregation.
class PrototypeSet {
 public:
  using Map = std::map<ClassId, VecXd>;

  PrototypeSet() = default;
  PrototypeSet(ClientId owner, std::uint64_t round) : owner_(owner), round_(round) {}

  /// Inserts or replaces the prototype of `cls`. Throws DimensionError when
  /// `v` disagrees with the dimension of existing entries and NumericError
  /// when it holds a non-finite value.
  void set(ClassId cls, VecXd v);

  [[nodiscard]] const VecXd* find(ClassId cls) const;
  [[nodiscard]] bool contains(ClassId cls) const { return entries_.contains(cls); }
  [[nodiscard]] const VecXd& at(ClassId cls) const;

  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] bool empty() const { return entries_.empty(); }
  /// Common vector dimension; 0 for an empty set.
  [[nodiscard]] Eigen::Index dim() const { return dim_; }

  [[nodiscard]] ClientId owner() const { return owner_; }
  [[nodiscard]] std::uint64_t round() const { return round_; }
  void set_owner(ClientId owner) { owner_ = owner; }
  void set_round(std::uint64_t round) { round_ = round; }

  [[nodiscard]] const Map& entries() const { return entries_; }
  [[nodiscard]] Map::const_iterator begin() const { return entries_.begin(); }
  [[nodiscard]] Map::const_iterator end() const { return entries_.end(); }

  /// Number of real values carried (sum of vector lengths).
  [[nodiscard]] std::size_t parameter_count() const { return entries_.size() * static_cast<std::size_t>(dim_); }

  /// u32 class count, then per class: u32 id, u32 dim, dim little-endian binary64.
  [[nodiscard]] std::vector<std::uint8_t> canonical_bytes() const;

  /// Inverse of canonical_bytes. Throws Error on malformed input.
  static PrototypeSet from_canonical_bytes(std::span<const std::uint8_t> bytes, ClientId owner,
                                           std::uint64_t round);

 private:
  Map entries_;
  Eigen::Index dim_ = 0;
  ClientId owner_ = kGlobalOwner;
  std::uint64_t round_ = 0;
};

/// True when both sets hold the same classes with bit-identical values.
bool bitwise_equal(const PrototypeSet& a, const PrototypeSet& b);

}  // namespace dfpl

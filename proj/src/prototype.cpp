#include "dfpl/prototype.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "dfpl/bytes.hpp"

namespace dfpl {

// ---- bytes helpers --------------------------------------------------------

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s;
  s.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    s.push_back(kDigits[b >> 4]);
    s.push_back(kDigits[b & 0xF]);
  }
  return s;
}

Bytes from_hex(std::string_view hex) {
  if (hex.size() % 2 != 0) throw Error("hex string has odd length");
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw Error(fmt::format("invalid hex character '{}'", c));
  };
  Bytes out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
  return out;
}

// ---- PrototypeSet ---------------------------------------------------------

void PrototypeSet::set(ClassId cls, VecXd v) {
  if (v.size() == 0) throw DimensionError("prototype vector must be non-empty");
  if (!entries_.empty() && v.size() != dim_)
    throw DimensionError(fmt::format("prototype dimension {} does not match set dimension {}", v.size(), dim_));
  if (!v.allFinite()) throw NumericError(fmt::format("prototype of class {} is not finite", cls));
  dim_ = v.size();
  entries_.insert_or_assign(cls, std::move(v));
}

const VecXd* PrototypeSet::find(ClassId cls) const {
  auto it = entries_.find(cls);
  return it == entries_.end() ? nullptr : &it->second;
}

const VecXd& PrototypeSet::at(ClassId cls) const {
  if (const auto* v = find(cls)) return *v;
  throw InvalidArgument(fmt::format("no prototype for class {}", cls));
}

std::vector<std::uint8_t> PrototypeSet::canonical_bytes() const {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [cls, v] : entries_) {
    w.u32(cls);
    w.u32(static_cast<std::uint32_t>(v.size()));
    for (Eigen::Index j = 0; j < v.size(); ++j) w.f64(v[j]);
  }
  return std::move(w).take();
}

PrototypeSet PrototypeSet::from_canonical_bytes(std::span<const std::uint8_t> bytes, ClientId owner,
                                                std::uint64_t round) {
  ByteReader r(bytes);
  PrototypeSet out(owner, round);
  const std::uint32_t count = r.u32();
  std::uint32_t prev = 0;
  for (std::uint32_t n = 0; n < count; ++n) {
    const ClassId cls = r.u32();
    if (n > 0 && cls <= prev) throw Error("prototype classes not in ascending order");
    prev = cls;
    const std::uint32_t dim = r.u32();
    if (static_cast<std::size_t>(dim) * 8 > r.remaining()) throw Error("byte stream truncated");
    VecXd v(dim);
    for (std::uint32_t j = 0; j < dim; ++j) v[j] = r.f64();
    out.set(cls, std::move(v));
  }
  if (r.remaining() != 0) throw Error("trailing bytes after prototype set");
  return out;
}

bool bitwise_equal(const PrototypeSet& a, const PrototypeSet& b) {
  return a.canonical_bytes() == b.canonical_bytes();
}

// ---- aggregation and auxiliary loss ---------------------------------------

PrototypeSet aggregate_global(std::span<const PrototypeSet> locals, std::uint64_t round, AggregationRule rule) {
  if (locals.empty()) throw InvalidArgument("aggregate_global needs at least one prototype set");

  std::vector<const PrototypeSet*> ordered;
  ordered.reserve(locals.size());
  for (const auto& s : locals) ordered.push_back(&s);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const PrototypeSet* a, const PrototypeSet* b) { return a->owner() < b->owner(); });

  Eigen::Index dim = 0;
  for (const auto* s : ordered) {
    if (s->empty()) continue;
    if (dim == 0) dim = s->dim();
    if (s->dim() != dim)
      throw DimensionError(fmt::format("client {} sends dimension {}, expected {}", s->owner(), s->dim(), dim));
  }

  std::map<ClassId, std::pair<VecXd, std::size_t>> sums;
  for (const auto* s : ordered) {
    for (const auto& [cls, v] : *s) {
      auto [it, fresh] = sums.try_emplace(cls, VecXd::Zero(dim), 0);
      // Element-wise accumulation in ascending owner order.
      for (Eigen::Index j = 0; j < dim; ++j) it->second.first[j] += v[j];
      ++it->second.second;
    }
  }

  const double literal_k = static_cast<double>(locals.size());
  PrototypeSet global(kGlobalOwner, round);
  for (auto& [cls, acc] : sums) {
    const double divisor = rule == AggregationRule::kContributorMean ? static_cast<double>(acc.second) : literal_k;
    VecXd mean(dim);
    for (Eigen::Index j = 0; j < dim; ++j) mean[j] = acc.first[j] / divisor;
    global.set(cls, std::move(mean));
  }
  return global;
}

namespace {

void check_dims(const PrototypeSet& local, const PrototypeSet& global) {
  if (!local.empty() && !global.empty() && local.dim() != global.dim())
    throw DimensionError(
        fmt::format("local prototype dimension {} differs from global dimension {}", local.dim(), global.dim()));
}

void check_classes(std::size_t num_classes) {
  if (num_classes == 0) throw InvalidArgument("class universe must be non-empty");
}

}  // namespace

double auxiliary_loss(const PrototypeSet& local, const PrototypeSet& global, std::size_t num_classes) {
  check_classes(num_classes);
  check_dims(local, global);
  double total = 0.0;
  for (const auto& [cls, p] : local) {
    if (const auto* g = global.find(cls)) total += (p - *g).norm();
  }
  return total / static_cast<double>(num_classes);
}

std::map<ClassId, VecXd> auxiliary_loss_grad(const PrototypeSet& local, const PrototypeSet& global,
                                             std::size_t num_classes) {
  check_classes(num_classes);
  check_dims(local, global);
  std::map<ClassId, VecXd> out;
  const double scale = 1.0 / static_cast<double>(num_classes);
  for (const auto& [cls, p] : local) {
    const auto* g = global.find(cls);
    if (g == nullptr) {
      out.emplace(cls, VecXd::Zero(p.size()));
      continue;
    }
    VecXd diff = p - *g;
    const double n = diff.norm();
    out.emplace(cls, n > 0.0 ? VecXd(diff * (scale / n)) : VecXd::Zero(p.size()));
  }
  return out;
}

}  // namespace dfpl

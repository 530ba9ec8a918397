#pragma once

#include <cstdint>
#include <map>
#include <span>

#include "dfpl/data.hpp"
#include "dfpl/nn.hpp"
#include "dfpl/prototype_set.hpp"

namespace dfpl {

/// How a class's global prototype is normalised when only some clients hold it.
enum class AggregationRule {
  kContributorMean,  // divide by the number of clients that sent the class
  kLiteralK,         // divide by the number of sets, absent classes count as zero
};

/// Per-class mean of extractor outputs over `dataset`, evaluated in chunks of
/// `chunk_rows` samples. Only classes with at least one sample appear.
template <typename Scalar>
PrototypeSet local_prototypes(const ModelParams<Scalar>& params, const LabeledSet& dataset, ClientId owner,
                              std::uint64_t round, Eigen::Index chunk_rows = 1024) {
  if (dataset.empty()) throw InvalidArgument("local_prototypes needs a non-empty data set");
  const Eigen::Index n = dataset.features.rows();
  const Eigen::Index d = params.feature_dim();
  std::map<ClassId, std::pair<VecXd, std::size_t>> acc;
  for (Eigen::Index start = 0; start < n; start += chunk_rows) {
    const Eigen::Index len = std::min(chunk_rows, n - start);
    const Tensor<Scalar> chunk = dataset.features.middleRows(start, len).template cast<Scalar>();
    const auto pass = forward(params, chunk);
    for (Eigen::Index r = 0; r < len; ++r) {
      auto [it, fresh] = acc.try_emplace(dataset.labels[static_cast<std::size_t>(start + r)], VecXd::Zero(d), 0);
      it->second.first += pass.features.row(r).transpose().template cast<double>();
      ++it->second.second;
    }
  }
  PrototypeSet out(owner, round);
  for (auto& [cls, a] : acc) out.set(cls, a.first / static_cast<double>(a.second));
  return out;
}

/// Class-wise average of `locals`, accumulated element-wise in ascending owner
/// order so the result is bit-identical whatever order the sets arrive in.
PrototypeSet aggregate_global(std::span<const PrototypeSet> locals, std::uint64_t round,
                              AggregationRule rule = AggregationRule::kContributorMean);

/// (1/|I|) * sum over classes held by both sets of ||local_i - global_i||_2.
double auxiliary_loss(const PrototypeSet& local, const PrototypeSet& global, std::size_t num_classes);

/// d auxiliary_loss / d local_i = (local_i - global_i) / (|I| * ||local_i - global_i||),
/// zero when the distance is zero or the class is absent from `global`.
std::map<ClassId, VecXd> auxiliary_loss_grad(const PrototypeSet& local, const PrototypeSet& global,
                                             std::size_t num_classes);

}  // namespace dfpl

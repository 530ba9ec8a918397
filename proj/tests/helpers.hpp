#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dfpl/data.hpp"
#include "dfpl/ledger.hpp"
#include "dfpl/nn.hpp"
#include "dfpl/random.hpp"
#include "oracles.hpp"

namespace testutil {

inline dfpl::TensorXd random_batch(dfpl::Rng& rng, Eigen::Index rows, Eigen::Index cols, double lo = -1,
                                   double hi = 1) {
  dfpl::TensorXd x(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) x(r, c) = lo + (hi - lo) * rng.uniform01();
  return x;
}

inline dfpl::ModelParams<double> random_params(dfpl::Rng& rng, Eigen::Index in, std::vector<Eigen::Index> hidden,
                                               Eigen::Index feat, Eigen::Index classes) {
  auto p = dfpl::init_params<double>(in, hidden, feat, classes, rng);
  // Non-zero biases so ReLU boundaries do not line up with the origin.
  p.for_each_layer([&](dfpl::DenseLayer<double>& l) {
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = 0.2 * (2 * rng.uniform01() - 1);
  });
  return p;
}

/// Labels 0..classes-1 cycled, so every class shows up when rows >= classes.
inline std::vector<dfpl::ClassId> cycled_labels(std::size_t rows, std::size_t classes) {
  std::vector<dfpl::ClassId> y(rows);
  for (std::size_t r = 0; r < rows; ++r) y[r] = static_cast<dfpl::ClassId>(r % classes);
  return y;
}

inline bool same_signs(const std::vector<oracle::Grid>& a, const std::vector<oracle::Grid>& b) {
  for (std::size_t l = 0; l < a.size(); ++l)
    for (std::size_t r = 0; r < a[l].size(); ++r)
      for (std::size_t c = 0; c < a[l][r].size(); ++c)
        if ((a[l][r][c] > 0) != (b[l][r][c] > 0)) return false;
  return true;
}

struct FdReport {
  double max_rel_err = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // entries whose +-h probe crosses a ReLU kink
};

/// Central differences of the from-scratch loss against `analytic`.
inline FdReport finite_difference_check(const dfpl::ModelParams<double>& params, const dfpl::TensorXd& batch,
                                        const std::vector<dfpl::ClassId>& labels, const dfpl::PrototypeSet& global,
                                        double lambda, const dfpl::Gradients<double>& analytic, double h = 1e-5) {
  const dfpl::VecXd theta = dfpl::flatten(params);
  const dfpl::VecXd g = dfpl::flatten(analytic);
  FdReport rep;
  auto probe = params;
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    dfpl::VecXd t = theta;
    t(k) = theta(k) + h;
    dfpl::unflatten(probe, t);
    const auto plus_pass = oracle::forward(probe, batch);
    const double plus = oracle::total_loss(probe, batch, labels, global, lambda);
    t(k) = theta(k) - h;
    dfpl::unflatten(probe, t);
    const auto minus_pass = oracle::forward(probe, batch);
    const double minus = oracle::total_loss(probe, batch, labels, global, lambda);
    if (!same_signs(plus_pass.pre, minus_pass.pre)) {
      ++rep.skipped;
      continue;
    }
    const double numeric = (plus - minus) / (2 * h);
    const double scale = std::max({std::abs(numeric), std::abs(g(k)), 1e-7});
    rep.max_rel_err = std::max(rep.max_rel_err, std::abs(numeric - g(k)) / scale);
    ++rep.checked;
  }
  return rep;
}


/// Genesis plus `blocks` mined blocks carrying random prototype payloads.
inline dfpl::Chain build_chain(std::size_t blocks, std::uint32_t bits, std::uint64_t seed) {
  dfpl::Rng rng(seed);
  auto chain = dfpl::Chain::with_genesis(bits);
  for (std::size_t i = 0; i < blocks; ++i) {
    dfpl::PrototypeSet s(dfpl::kGlobalOwner, i + 1);
    for (dfpl::ClassId c = 0; c < 3; ++c) s.set(c, random_batch(rng, 1, 4).row(0).transpose());
    dfpl::Block b;
    b.payload = s.canonical_bytes();
    b.header.round = chain.tip().header.round + 1;
    b.header.prev_hash = chain.tip_hash();
    b.header.payload_hash = dfpl::sha256(b.payload);
    b.header.miner = static_cast<dfpl::ClientId>(i % 5);
    b.header.difficulty_bits = bits;
    b.header.nonce = dfpl::mine(b.header, 0, std::uint64_t{1} << 32).nonce;
    chain.append(std::move(b));
  }
  return chain;
}

}  // namespace testutil

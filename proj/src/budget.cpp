#include "dfpl/budget.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <fmt/format.h>

#include "dfpl/log.hpp"

namespace dfpl {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw BudgetError(what);
}

}  // namespace

double alpha(const BudgetModel& m) {
  require(m.f_cpu > 0, "f_cpu must be positive");
  require(m.batch_size > 0, "batch size must be positive");
  require(m.rho >= 0, "rho must be non-negative");
  if (m.rho == 0) log_warn("rho = 0 gives a zero training time per iteration");
  return m.batch_size * m.rho / m.f_cpu;
}

double beta(const BudgetModel& m) {
  require(m.f_cpu > 0, "f_cpu must be positive");
  require(m.clients > 0, "K must be positive");
  require(m.mu >= 0 && m.tau >= 0, "mu and tau must be non-negative");
  return m.mu * m.tau / (m.clients * m.f_cpu);
}

std::int64_t local_iterations(double t_sum, std::int64_t rounds, double alpha, double beta) {
  require(rounds >= 1, "R must be at least 1");
  require(alpha > 0, "alpha must be positive");
  require(t_sum > beta * static_cast<double>(rounds), "budget infeasible: t_sum must exceed beta * R");
  const double e = std::floor((t_sum / static_cast<double>(rounds) - beta) / alpha);
  if (e < 1)
    throw BudgetError(fmt::format("budget infeasible: t_sum={} R={} alpha={} beta={} leaves E={} < 1", t_sum,
                                  rounds, alpha, beta, e));
  return static_cast<std::int64_t>(e);
}

double nominal_training_budget(double t_sum, std::int64_t rounds, double beta) {
  return t_sum - beta * static_cast<double>(rounds);
}

double realized_training_time(std::int64_t iterations, double alpha, std::int64_t rounds) {
  return static_cast<double>(iterations) * alpha * static_cast<double>(rounds);
}

double theorem1_bound(const ConvergenceConstants& cc, double lambda, double eta, double alpha, double beta,
                      std::int64_t rounds, double t_sum) {
  require(alpha > 0, "alpha must be positive");
  require(rounds >= 1, "R must be at least 1");
  const double r = static_cast<double>(rounds);
  require(t_sum >= beta * r, "t_sum must be at least beta * R");
  const double iterations = (t_sum - beta * r) / (alpha * r);
  return (cc.L1 * eta * eta / 2 - eta) * cc.Q + (cc.L1 * eta * eta * cc.sigma2 / 2 + cc.L2 * eta * cc.G * lambda) * iterations;
}

RateLimits corollary1_limits(const ConvergenceConstants& cc, double alpha, double beta, std::int64_t rounds,
                             double t_sum, double lambda, double partial_q) {
  require(alpha > 0, "alpha must be positive");
  require(rounds >= 1, "R must be at least 1");
  require(cc.G > 0 && cc.L1 > 0 && cc.L2 > 0, "G, L1 and L2 must be positive");
  require(partial_q >= 0 && cc.sigma2 >= 0 && lambda >= 0, "Q, sigma^2 and lambda must be non-negative");
  const double r = static_cast<double>(rounds);
  const double train = t_sum - beta * r;
  require(train > 0, "t_sum must exceed beta * R");

  const double aq = alpha * r * partial_q;
  const double denom = cc.L1 * (aq + cc.sigma2 * train);
  require(denom > 0, "degenerate limits: partial gradient sum and sigma^2 are both zero");

  RateLimits out;
  out.eta_max = std::max(0.0, 2 * (aq - lambda * cc.L2 * cc.G * train) / denom);
  const double lam = aq / (cc.L2 * cc.G * train);
  if (!std::isfinite(lam) || lam >= kUnboundedLimit) {
    out.lambda_max = kUnboundedLimit;
    out.lambda_unbounded = true;
  } else {
    out.lambda_max = std::max(0.0, lam);
  }
  return out;
}

namespace {

double rate_denominator(const ConvergenceConstants& cc, double eta, double lambda) {
  require(eta > 0, "eta must be positive");
  require(lambda >= 0, "lambda must be non-negative");
  require(cc.chi > 0, "chi must be positive");
  require(cc.L1 > 0 && cc.L2 > 0 && cc.G > 0, "L1, L2 and G must be positive");
  const double eta_cap = 2 * (cc.chi - lambda * cc.L2 * cc.G) / (cc.L1 * (cc.chi + cc.sigma2));
  const double lambda_cap = cc.chi / (cc.L2 * cc.G);
  if (!(eta < eta_cap) || !(lambda < lambda_cap))
    throw BudgetError(fmt::format("rate condition unsatisfied: need eta < {} and lambda < {}", eta_cap, lambda_cap));
  const double d = (2 * eta - cc.L1 * eta * eta) * cc.chi - eta * (cc.L1 * eta * cc.sigma2 + 2 * lambda * cc.L2 * cc.G);
  require(d > 0, "rate denominator is not positive");
  return d;
}

}  // namespace

MinRounds corollary2_min_rounds(const ConvergenceConstants& cc, double alpha, double beta, double t_sum,
                                double eta, double lambda) {
  require(alpha > 0 && beta > 0, "alpha and beta must be positive");
  require(cc.delta >= 0, "delta must be non-negative");
  const double d = rate_denominator(cc, eta, lambda);
  MinRounds out;
  out.raw = (t_sum - 2 * cc.delta * alpha / d) / beta;
  out.rounds = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(out.raw)));
  out.vacuous = cc.delta == 0 || out.raw <= 1;
  return out;
}

double corollary2_rounds_fixed_iterations(const ConvergenceConstants& cc, std::int64_t iterations, double eta,
                                          double lambda) {
  require(iterations >= 1, "E must be at least 1");
  require(cc.delta >= 0, "delta must be non-negative");
  const double d = rate_denominator(cc, eta, lambda);
  return 2 * cc.delta / (static_cast<double>(iterations) * d);
}

std::vector<BoundSweepRow> sweep_rounds(const ConvergenceConstants& cc, double alpha, double beta, double t_sum,
                                        double eta, double lambda, std::int64_t max_rounds) {
  std::vector<BoundSweepRow> rows;
  for (std::int64_t r = 1; r <= max_rounds; ++r) {
    BoundSweepRow row;
    row.rounds = r;
    row.nominal_training = nominal_training_budget(t_sum, r, beta);
    try {
      row.iterations = local_iterations(t_sum, r, alpha, beta);
      row.feasible = true;
    } catch (const BudgetError&) {
      row.feasible = false;
    }
    row.realized_training = realized_training_time(row.iterations, alpha, r);
    row.j = row.nominal_training >= 0 ? theorem1_bound(cc, lambda, eta, alpha, beta, r, t_sum) : 0.0;
    rows.push_back(row);
  }
  return rows;
}

void write_sweep_csv(std::ostream& out, const std::vector<BoundSweepRow>& rows) {
  out << "R,E,nominal_training,realized_training,j,feasible\n";
  for (const auto& r : rows)
    out << fmt::format("{},{},{},{},{},{}\n", r.rounds, r.iterations, r.nominal_training, r.realized_training, r.j,
                       r.feasible ? 1 : 0);
}

}  // namespace dfpl

#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "dfpl/types.hpp"

namespace dfpl {

/// Hardware and mining constants of the compute-time model.
struct BudgetModel {
  double batch_size = 32;       // samples per local iteration
  double rho = 1e6;             // CPU cycles per training sample
  double f_cpu = 3.2e7;         // CPU cycles per second
  double mu = 8;                // mining difficulty
  double tau = 1e9;             // CPU cycles per unit difficulty
  double clients = 20;          // K
  double t_sum = 100;           // total wall-time budget, seconds
  double gamma = 0;             // extra cycles; carried, never used in E
};

/// Assumption constants for the convergence bounds.
struct ConvergenceConstants {
  double L1 = 1;      // smoothness
  double L2 = 1;      // extractor Lipschitz constant
  double sigma2 = 0;  // stochastic-gradient variance bound
  double G = 1;       // expected gradient-norm bound
  double Q = 0;       // sum of squared full-gradient norms over a round
  double chi = 1;     // target mean squared gradient norm
  double delta = 0;   // L_0 - L_*
};

class BudgetError : public Error {
 public:
  using Error::Error;
};

/// Seconds per local iteration: batch_size * rho / f_cpu.
double alpha(const BudgetModel& m);

/// Mean seconds to mine one block network-wide: mu * tau / (K * f_cpu).
double beta(const BudgetModel& m);

/// E = floor((t_sum / R - beta) / alpha). Throws BudgetError when E < 1.
std::int64_t local_iterations(double t_sum, std::int64_t rounds, double alpha, double beta);

/// Training time promised by the budget before flooring: t_sum - beta * R.
double nominal_training_budget(double t_sum, std::int64_t rounds, double beta);

/// Training time actually spent: E * alpha * R.
double realized_training_time(std::int64_t iterations, double alpha, std::int64_t rounds);

/// Per-round variation bound
///   j = (L1 eta^2 / 2 - eta) Q + (L1 eta^2 sigma^2 / 2 + L2 eta G lambda) (t_sum - beta R) / (alpha R).
double theorem1_bound(const ConvergenceConstants& cc, double lambda, double eta, double alpha, double beta,
                      std::int64_t rounds, double t_sum);

/// Ceiling returned for limits that diverge as t_sum approaches beta * R.
inline constexpr double kUnboundedLimit = 1e12;

struct RateLimits {
  double eta_max = 0;
  double lambda_max = 0;
  bool lambda_unbounded = false;  // lambda_max hit kUnboundedLimit
};

/// Largest learning rate and alignment weight for which the per-round bound
/// is negative, evaluated with the partial gradient sum `partial_q`. Both are
/// clamped at 0.
RateLimits corollary1_limits(const ConvergenceConstants& cc, double alpha, double beta, std::int64_t rounds,
                             double t_sum, double lambda, double partial_q);

struct MinRounds {
  std::int64_t rounds = 1;
  double raw = 0;         // (t_sum - 2 delta alpha / D) / beta before rounding
  bool vacuous = false;   // delta == 0 or raw <= 1: any R >= 1 qualifies
};

/// R_min = ceil((t_sum - 2 delta alpha / D) / beta), at least 1, with
/// D = (2 eta - L1 eta^2) chi - eta (L1 eta sigma^2 + 2 lambda L2 G).
/// Throws BudgetError when eta or lambda break the rate conditions.
MinRounds corollary2_min_rounds(const ConvergenceConstants& cc, double alpha, double beta, double t_sum,
                                double eta, double lambda);

/// Round threshold with E held fixed: 2 delta / (E * D). Unlike the budgeted
/// form above, this one grows as chi shrinks.
double corollary2_rounds_fixed_iterations(const ConvergenceConstants& cc, std::int64_t iterations, double eta,
                                          double lambda);

struct BoundSweepRow {
  std::int64_t rounds = 0;
  std::int64_t iterations = 0;  // 0 when infeasible
  double nominal_training = 0;
  double realized_training = 0;
  double j = 0;
  bool feasible = false;
};

/// One row per R in [1, max_rounds].
std::vector<BoundSweepRow> sweep_rounds(const ConvergenceConstants& cc, double alpha, double beta, double t_sum,
                                        double eta, double lambda, std::int64_t max_rounds);

/// CSV header "R,E,nominal_training,realized_training,j,feasible".
void write_sweep_csv(std::ostream& out, const std::vector<BoundSweepRow>& rows);

}  // namespace dfpl

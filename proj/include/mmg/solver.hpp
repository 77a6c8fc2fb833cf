// SPDX-License-Identifier: Apache-2.0

#ifndef MMG_SOLVER_HPP
#define MMG_SOLVER_HPP

#include <limits>
#include <string>
#include <vector>

#include "mmg/model.hpp"

namespace mmg {

struct SolveOptions {
  double kkt_tolerance = 1e-6;
  int max_outer_iterations = 60; // barrier stages
  double barrier_initial_mu = 1.0;
  double barrier_shrink = 0.2;
  int newton_max_steps = 50; // per barrier stage
  double regularization_weight = 0.0; // 0.001 replicates the published runs

  void validate() const;
};

enum class SolveStatus { Converged, IterationLimit, Infeasible };

const char* to_string(SolveStatus status);

/// Multipliers of problem (3) in the convention
///   grad f + A^T nu + G^T lambda - z = 0,
/// so demand multipliers come out as roughly minus the equilibrium cost and
/// capacity multipliers are the shadow prices of the constraints.
struct DualVariables {
  std::vector<double> available; // [i][m], zero where unbounded
  std::vector<double> displace;  // [j][m]
  std::vector<double> ride;      // [i][j][m]
  std::vector<double> nonneg;    // z[i][j][k][m]
  std::vector<double> demand;    // nu[i][j][k]

  static DualVariables zeros(const Dims& dims);
};

struct BarrierStage {
  double mu = 0.0;
  int newton_steps = 0;
  double potential = 0.0; // unregularized potential at stage end
  double merit = 0.0;     // barrier objective at stage end
  // merit decrease of every line-search-certified Newton step, >= 0;
  // (polishing steps below merit measurement noise are not listed)
  std::vector<double> step_decreases;
};

struct SolveReport {
  FlowConfiguration flows;
  double potential = 0.0; // problem objective at flows, without regularization
  double kkt_residual = std::numeric_limits<double>::infinity();
  DualVariables duals;
  std::vector<BarrierStage> iterations;
  SolveStatus status = SolveStatus::Infeasible;
  std::string message;

  bool converged() const { return status == SolveStatus::Converged; }
};

/// Minimizes the Beckmann potential over the feasible polytope with a primal
/// log-barrier interior-point method; the minimizer is an equilibrium of the
/// game. Demand equalities hold to 1e-9 after the final projection, capacity
/// constraints are satisfied, and Converged implies kkt_residual below the
/// requested tolerance.
SolveReport solve_equilibrium(const Scenario& scenario, const SolveOptions& options = {});

/// Decomposition solve for instances whose availability and displacement
/// capacities are all unbounded: one independent subproblem per (i,j) pair.
/// Throws std::invalid_argument when a coupling capacity is finite.
SolveReport solve_decomposed(const Scenario& scenario, const SolveOptions& options = {});

/// Max-norm of the KKT system of problem (3) at (flows, duals): stationarity,
/// primal feasibility, dual feasibility, and complementary slackness. Zero iff
/// the KKT conditions hold exactly.
double kkt_residual(const Scenario& scenario, const FlowConfiguration& flows,
                    const DualVariables& duals, double regularization_weight = 0.0);

} // namespace mmg

#endif // MMG_SOLVER_HPP

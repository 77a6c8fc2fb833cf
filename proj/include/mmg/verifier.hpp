// SPDX-License-Identifier: Apache-2.0

#ifndef MMG_VERIFIER_HPP
#define MMG_VERIFIER_HPP

#include <vector>

#include "mmg/model.hpp"

namespace mmg {

enum class FeasibilityKind { NonNegativity, Demand, Ride, Available, Displace };

struct FeasibilityViolation {
  FeasibilityKind kind;
  int i = -1, j = -1, k = -1, m = -1;
  double amount = 0.0; // shortfall or excess
};

struct FeasibilityReport {
  bool feasible = false;
  std::vector<FeasibilityViolation> violations;
  double tol_eq = 0.0, tol_cap = 0.0;
};

/// One failed optimality condition: population k on (i,j) uses used_mode but
/// better_mode would be cheaper by cost_gap and is not saturated.
struct EquilibriumViolation {
  int i, j, k;
  int used_mode, better_mode;
  double cost_gap;
  bool saturated; // always false for reported violations
};

struct CheckReport {
  bool feasible = false;
  bool is_equilibrium = false;
  std::vector<FeasibilityViolation> feasibility_violations;
  std::vector<EquilibriumViolation> violations;
  double tol_cost = 0.0, tol_sat = 0.0;
};

/// Feasibility: non-negativity, demand satisfaction, and the three capacity
/// families. Demand uses a tolerance relative to max(1, d), capacities a
/// relative excess tolerance.
FeasibilityReport check_feasible(const Scenario& scenario, const FlowConfiguration& flows,
                                 double tol_eq = 1e-6, double tol_cap = 1e-6);

/// Equilibrium: every used mode is no costlier than any alternative unless
/// that alternative has a saturated capacity. Flows below tol_cost count as
/// unused.
CheckReport check_equilibrium(const Scenario& scenario, const FlowConfiguration& flows,
                              double tol_cost = 1e-4, double tol_sat = 1e-6);

/// Exhaustive equilibrium enumeration on a grid over the demand simplices.
/// Only for tiny instances (N <= 2, K <= 2, M+1 <= 3, total demand <= 6);
/// throws std::invalid_argument beyond that. Deterministic lexicographic
/// order of the flattened flow vector.
std::vector<FlowConfiguration> brute_force_equilibria(const Scenario& scenario, double grid_step);

} // namespace mmg

#endif // MMG_VERIFIER_HPP

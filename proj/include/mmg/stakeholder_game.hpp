// SPDX-License-Identifier: Apache-2.0

#ifndef MMG_STAKEHOLDER_GAME_HPP
#define MMG_STAKEHOLDER_GAME_HPP

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "mmg/scenario_io.hpp"
#include "mmg/solver.hpp"

namespace mmg {

/// Price menus of the two-stage game: the municipality announces a flat bus
/// fare, then the AMoD and bike operators simultaneously pick per-km prices.
struct ActionGrid {
  std::vector<double> municipality_prices; // USD per bus ride
  std::vector<double> amod_prices;         // USD per km
  std::vector<double> bike_prices;         // USD per km

  static ActionGrid defaults(); // 0..4 in 0.5 steps, bikes 0..1.2 in 0.4 steps
  void validate() const;
};

struct MunicipalWeights {
  double rho_cost = 0.0;
  double rho_co2 = 0.0;
  double rho_revenue = 0.0;

  void validate() const; // at least one weight must be positive
};

enum class TieRule { Pessimistic, Optimistic };

struct PayoffCell {
  bool valid = false;
  std::string diagnostic;
  double amod_revenue = 0.0;
  double bike_revenue = 0.0;
  double avg_cost = 0.0; // USD per citizen
  double co2 = 0.0;      // kg
  double bus_revenue = 0.0;
};

struct PayoffTensor {
  ActionGrid grid;
  std::vector<PayoffCell> cells; // bus-major, then amod, then bike

  std::size_t index(std::size_t b, std::size_t a, std::size_t k) const {
    return (b * grid.amod_prices.size() + a) * grid.bike_prices.size() + k;
  }
  const PayoffCell& at(std::size_t b, std::size_t a, std::size_t k) const { return cells[index(b, a, k)]; }
};

/// One equilibrium solve per action triple. Cells are independent; with
/// workers > 1 they are computed by a thread pool, and the result does not
/// depend on scheduling. Failed solves yield invalid cells with diagnostics.
PayoffTensor build_payoff_tensor(const ScenarioBundle& base, const ActionGrid& grid,
                                 const SolveOptions& options, int workers = 1);

/// Generic best-response matrix for the second-stage game.
struct BimatrixSlice {
  std::size_t n_rows = 0; // row player: AMoD price index
  std::size_t n_cols = 0; // column player: bike price index
  std::vector<double> row_payoff; // row-major
  std::vector<double> col_payoff;
  std::vector<char> valid;

  std::size_t index(std::size_t r, std::size_t c) const { return r * n_cols + c; }
};

/// All pure Nash cells of a slice: mutual best responses with ties counted
/// within 1e-9. Lexicographic (row, col) order. Invalid cells are excluded
/// from both candidate and deviation sets.
std::vector<std::pair<std::size_t, std::size_t>> pure_nash_equilibria(const BimatrixSlice& slice);

std::vector<std::pair<std::size_t, std::size_t>> pure_nash_equilibria(const PayoffTensor& tensor,
                                                                      std::size_t bus_index);

struct SelectedAction {
  bool found = false;
  std::size_t bus_index = 0, amod_index = 0, bike_index = 0;
  double municipal_payoff = 0.0;
};

/// Backward induction: the municipality scores each bus fare by the payoff
/// -rho_cost*avg_cost - rho_co2*co2 + rho_revenue*bus_revenue at the Nash
/// cell chosen by tie_rule (pessimistic: worst for the municipality), then
/// picks the argmax with lowest-index tie-breaking.
SelectedAction backward_induction(const PayoffTensor& tensor,
                                  const std::vector<std::vector<std::pair<std::size_t, std::size_t>>>& nash,
                                  const MunicipalWeights& weights, TieRule tie_rule = TieRule::Pessimistic);

struct FrontierPoint {
  double avg_cost = 0.0;     // minimized
  double co2 = 0.0;          // minimized
  double bus_revenue = 0.0;  // maximized
};

/// Indices of the non-dominated points, stable input order. A point
/// dominates another when it is at least as good on all three criteria and
/// strictly better on one.
std::vector<std::size_t> pareto_frontier(const std::vector<FrontierPoint>& points);

struct GameOutcome {
  PayoffTensor tensor;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> nash_cells; // per bus action
  SelectedAction selected;
  // every Nash equilibrium of every bus action, frontier over municipal metrics
  struct EquilibriumRecord {
    std::size_t bus_index, amod_index, bike_index;
    FrontierPoint point;
  };
  std::vector<EquilibriumRecord> equilibria;
  std::vector<std::size_t> frontier; // indices into equilibria
};

GameOutcome solve_stakeholder_game(const ScenarioBundle& base, const ActionGrid& grid,
                                   const MunicipalWeights& weights, TieRule tie_rule,
                                   const SolveOptions& options, int workers = 1);

} // namespace mmg

#endif // MMG_STAKEHOLDER_GAME_HPP

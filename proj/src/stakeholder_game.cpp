// SPDX-License-Identifier: Apache-2.0

#include "mmg/stakeholder_game.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "mmg/metrics.hpp"

namespace mmg {

namespace {

constexpr double kRevenueTie = 1e-9;

std::vector<double> price_ladder(double lo, double hi, double step) {
  std::vector<double> v;
  for (double p = lo; p <= hi + 1e-12; p += step) v.push_back(p);
  return v;
}

int mode_index_by_name(const ScenarioConfig& config, const std::string& name) {
  for (std::size_t m = 0; m < config.modes.size(); ++m)
    if (config.modes[m].name == name) return static_cast<int>(m);
  throw std::invalid_argument("stakeholder game requires a mode named '" + name + "'");
}

} // namespace

ActionGrid ActionGrid::defaults() {
  ActionGrid g;
  g.municipality_prices = price_ladder(0.0, 4.0, 0.5);
  g.amod_prices = price_ladder(0.0, 4.0, 0.5);
  g.bike_prices = price_ladder(0.0, 1.2, 0.4);
  return g;
}

void ActionGrid::validate() const {
  auto check = [](const std::vector<double>& v, const char* what) {
    if (v.empty()) throw std::invalid_argument(std::string(what) + " price list must not be empty");
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i] < 0.0) throw std::invalid_argument(std::string(what) + " prices must be >= 0");
      if (i > 0 && v[i] <= v[i - 1])
        throw std::invalid_argument(std::string(what) + " prices must be strictly increasing");
    }
  };
  check(municipality_prices, "municipality");
  check(amod_prices, "amod");
  check(bike_prices, "bike");
}

void MunicipalWeights::validate() const {
  if (rho_cost < 0.0 || rho_co2 < 0.0 || rho_revenue < 0.0)
    throw std::invalid_argument("municipal weights must be >= 0");
  if (rho_cost == 0.0 && rho_co2 == 0.0 && rho_revenue == 0.0)
    throw std::invalid_argument("municipal weights must not all be zero");
}

PayoffTensor build_payoff_tensor(const ScenarioBundle& base, const ActionGrid& grid,
                                 const SolveOptions& options, int workers) {
  grid.validate();
  if (!base.rebuildable())
    throw std::invalid_argument("stakeholder game requires a config-built scenario (repricing)");
  const ScenarioConfig& config = *base.config;
  const int bus = mode_index_by_name(config, "bus");
  const int amod = mode_index_by_name(config, "amod");
  const int bike = mode_index_by_name(config, "bike");
  const int n = base.scenario.dims.n_locations;

  PayoffTensor tensor;
  tensor.grid = grid;
  tensor.cells.assign(
      grid.municipality_prices.size() * grid.amod_prices.size() * grid.bike_prices.size(), PayoffCell{});

  std::atomic<std::size_t> cursor{0};
  auto run_cell = [&](std::size_t flat) {
    PayoffCell& cell = tensor.cells[flat];
    const std::size_t nb = grid.bike_prices.size();
    const std::size_t na = grid.amod_prices.size();
    const std::size_t b = flat / (na * nb);
    const std::size_t a = (flat / nb) % na;
    const std::size_t k = flat % nb;
    try {
      ScenarioConfig priced = config;
      priced.modes[bus].pricing = {PricingKind::FlatPerRide, grid.municipality_prices[b]};
      priced.modes[amod].pricing = {PricingKind::PerKm, grid.amod_prices[a]};
      priced.modes[bike].pricing = {PricingKind::PerKm, grid.bike_prices[k]};
      const Scenario scenario = build_scenario(priced, base.demand_total, n, base.distances_km);
      const SolveReport report = solve_equilibrium(scenario, options);
      if (!report.converged()) {
        cell.diagnostic = std::string("solve status ") + to_string(report.status);
        return;
      }
      const MetricsReport metrics = compute_metrics(scenario, report.flows);
      cell.valid = true;
      cell.amod_revenue = metrics.revenue_usd[amod];
      cell.bike_revenue = metrics.revenue_usd[bike];
      cell.bus_revenue = metrics.revenue_usd[bus];
      cell.avg_cost = metrics.avg_cost_total_usd;
      cell.co2 = metrics.emissions_total_kg;
    } catch (const std::exception& e) {
      cell.valid = false;
      cell.diagnostic = e.what();
    }
  };
  auto worker = [&] {
    for (;;) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= tensor.cells.size()) break;
      run_cell(i);
    }
  };
  const int extra = std::max(0, workers - 1);
  std::vector<std::thread> pool;
  pool.reserve(extra);
  for (int t = 0; t < extra; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return tensor;
}

std::vector<std::pair<std::size_t, std::size_t>> pure_nash_equilibria(const BimatrixSlice& slice) {
  if (slice.n_rows == 0 || slice.n_cols == 0) throw std::invalid_argument("empty payoff slice");
  std::vector<std::pair<std::size_t, std::size_t>> nash;
  for (std::size_t r = 0; r < slice.n_rows; ++r) {
    for (std::size_t c = 0; c < slice.n_cols; ++c) {
      if (!slice.valid[slice.index(r, c)]) continue;
      bool row_best = true;
      for (std::size_t r2 = 0; r2 < slice.n_rows && row_best; ++r2) {
        if (!slice.valid[slice.index(r2, c)]) continue;
        if (slice.row_payoff[slice.index(r2, c)] > slice.row_payoff[slice.index(r, c)] + kRevenueTie)
          row_best = false;
      }
      if (!row_best) continue;
      bool col_best = true;
      for (std::size_t c2 = 0; c2 < slice.n_cols && col_best; ++c2) {
        if (!slice.valid[slice.index(r, c2)]) continue;
        if (slice.col_payoff[slice.index(r, c2)] > slice.col_payoff[slice.index(r, c)] + kRevenueTie)
          col_best = false;
      }
      if (col_best) nash.emplace_back(r, c);
    }
  }
  return nash;
}

std::vector<std::pair<std::size_t, std::size_t>> pure_nash_equilibria(const PayoffTensor& tensor,
                                                                      std::size_t bus_index) {
  BimatrixSlice slice;
  slice.n_rows = tensor.grid.amod_prices.size();
  slice.n_cols = tensor.grid.bike_prices.size();
  slice.row_payoff.resize(slice.n_rows * slice.n_cols);
  slice.col_payoff.resize(slice.n_rows * slice.n_cols);
  slice.valid.resize(slice.n_rows * slice.n_cols);
  for (std::size_t a = 0; a < slice.n_rows; ++a)
    for (std::size_t k = 0; k < slice.n_cols; ++k) {
      const PayoffCell& cell = tensor.at(bus_index, a, k);
      slice.row_payoff[slice.index(a, k)] = cell.amod_revenue;
      slice.col_payoff[slice.index(a, k)] = cell.bike_revenue;
      slice.valid[slice.index(a, k)] = cell.valid ? 1 : 0;
    }
  return pure_nash_equilibria(slice);
}

namespace {

double municipal_payoff(const PayoffCell& cell, const MunicipalWeights& w) {
  return -w.rho_cost * cell.avg_cost - w.rho_co2 * cell.co2 + w.rho_revenue * cell.bus_revenue;
}

} // namespace

SelectedAction backward_induction(const PayoffTensor& tensor,
                                  const std::vector<std::vector<std::pair<std::size_t, std::size_t>>>& nash,
                                  const MunicipalWeights& weights, TieRule tie_rule) {
  weights.validate();
  if (nash.size() != tensor.grid.municipality_prices.size())
    throw std::invalid_argument("nash cell list size disagrees with the action grid");

  SelectedAction selected;
  for (std::size_t b = 0; b < nash.size(); ++b) {
    if (nash[b].empty()) continue;
    bool have = false;
    double value = 0.0;
    std::pair<std::size_t, std::size_t> chosen{0, 0};
    for (const auto& cell_idx : nash[b]) {
      const PayoffCell& cell = tensor.at(b, cell_idx.first, cell_idx.second);
      const double payoff = municipal_payoff(cell, weights);
      const bool better = tie_rule == TieRule::Pessimistic ? payoff < value : payoff > value;
      if (!have || better) {
        have = true;
        value = payoff;
        chosen = cell_idx;
      }
    }
    if (!selected.found || value > selected.municipal_payoff) {
      selected.found = true;
      selected.bus_index = b;
      selected.amod_index = chosen.first;
      selected.bike_index = chosen.second;
      selected.municipal_payoff = value;
    }
  }
  return selected;
}

std::vector<std::size_t> pareto_frontier(const std::vector<FrontierPoint>& points) {
  if (points.empty()) throw std::invalid_argument("pareto_frontier requires a non-empty point list");
  auto dominates = [](const FrontierPoint& a, const FrontierPoint& b) {
    const bool no_worse = a.avg_cost <= b.avg_cost && a.co2 <= b.co2 && a.bus_revenue >= b.bus_revenue;
    const bool strictly = a.avg_cost < b.avg_cost || a.co2 < b.co2 || a.bus_revenue > b.bus_revenue;
    return no_worse && strictly;
  };
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < points.size(); ++i) {
    bool dominated = false;
    for (std::size_t j = 0; j < points.size() && !dominated; ++j)
      if (j != i && dominates(points[j], points[i])) dominated = true;
    if (!dominated) kept.push_back(i);
  }
  return kept;
}

GameOutcome solve_stakeholder_game(const ScenarioBundle& base, const ActionGrid& grid,
                                   const MunicipalWeights& weights, TieRule tie_rule,
                                   const SolveOptions& options, int workers) {
  GameOutcome outcome;
  outcome.tensor = build_payoff_tensor(base, grid, options, workers);
  for (std::size_t b = 0; b < grid.municipality_prices.size(); ++b)
    outcome.nash_cells.push_back(pure_nash_equilibria(outcome.tensor, b));
  outcome.selected = backward_induction(outcome.tensor, outcome.nash_cells, weights, tie_rule);

  std::vector<FrontierPoint> points;
  for (std::size_t b = 0; b < outcome.nash_cells.size(); ++b)
    for (const auto& cell_idx : outcome.nash_cells[b]) {
      const PayoffCell& cell = outcome.tensor.at(b, cell_idx.first, cell_idx.second);
      outcome.equilibria.push_back({b, cell_idx.first, cell_idx.second,
                                    FrontierPoint{cell.avg_cost, cell.co2, cell.bus_revenue}});
      points.push_back(outcome.equilibria.back().point);
    }
  if (!points.empty()) outcome.frontier = pareto_frontier(points);
  return outcome;
}

} // namespace mmg

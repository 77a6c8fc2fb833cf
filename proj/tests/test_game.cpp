// SPDX-License-Identifier: Apache-2.0

#include "mmg/stakeholder_game.hpp"

#include <cmath>

#include <stdexcept>

#include "doctest.h"
#include "mmg/metrics.hpp"
#include "mmg/rng.hpp"

using namespace mmg;

namespace {

// tiny rebuildable city: two locations, one population, walk/bus/amod/bike
ScenarioBundle tiny_city() {
  ScenarioBundle b;
  ScenarioConfig c;
  c.name = "tiny";
  c.window_hours = 3.0;
  c.populations = {{"all", 10.0, 1.0}};
  ModeConfig walk{"walk", {PricingKind::Free, 0.0}, 4.5, {CongestionKind::Constant, 0, 1, 1}, {}, 0.0};
  ModeConfig bus{"bus", {PricingKind::FlatPerRide, 2.5}, 20.0, {CongestionKind::Constant, 0, 1, 1}, {}, 0.0};
  ModeConfig amod{"amod", {PricingKind::PerKm, 2.5}, 40.0, {CongestionKind::Bpr, 0.15, 4.0, 50.0}, {}, 0.1381};
  amod.fleet = {FleetPolicyKind::UniformTotal, 60.0, {}, 0.0, 1.0};
  ModeConfig bike{"bike", {PricingKind::PerKm, 0.4}, 15.0, {CongestionKind::Constant, 0, 1, 1}, {}, 0.0205};
  bike.fleet = {FleetPolicyKind::UniformTotal, 60.0, {}, 0.0, 1.0};
  c.modes = {walk, bus, amod, bike};
  b.config = c;
  b.demand_total = {0, 100, 80, 0};
  b.distances_km = {0, 3, 3, 0};
  b.scenario = build_scenario(c, b.demand_total, 2, b.distances_km);
  return b;
}

BimatrixSlice slice_from(const std::vector<std::vector<double>>& row_payoff,
                         const std::vector<std::vector<double>>& col_payoff) {
  BimatrixSlice s;
  s.n_rows = row_payoff.size();
  s.n_cols = row_payoff[0].size();
  s.row_payoff.resize(s.n_rows * s.n_cols);
  s.col_payoff.resize(s.n_rows * s.n_cols);
  s.valid.assign(s.n_rows * s.n_cols, 1);
  for (std::size_t r = 0; r < s.n_rows; ++r)
    for (std::size_t c = 0; c < s.n_cols; ++c) {
      s.row_payoff[s.index(r, c)] = row_payoff[r][c];
      s.col_payoff[s.index(r, c)] = col_payoff[r][c];
    }
  return s;
}

// independent double-loop best-response oracle
std::vector<std::pair<std::size_t, std::size_t>> nash_oracle(const BimatrixSlice& s) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t r = 0; r < s.n_rows; ++r)
    for (std::size_t c = 0; c < s.n_cols; ++c) {
      if (!s.valid[s.index(r, c)]) continue;
      double best_row = -1e300, best_col = -1e300;
      for (std::size_t r2 = 0; r2 < s.n_rows; ++r2)
        if (s.valid[s.index(r2, c)]) best_row = std::max(best_row, s.row_payoff[s.index(r2, c)]);
      for (std::size_t c2 = 0; c2 < s.n_cols; ++c2)
        if (s.valid[s.index(r, c2)]) best_col = std::max(best_col, s.col_payoff[s.index(r, c2)]);
      if (s.row_payoff[s.index(r, c)] >= best_row - 1e-9 && s.col_payoff[s.index(r, c)] >= best_col - 1e-9)
        out.emplace_back(r, c);
    }
  return out;
}

} // namespace

TEST_CASE("strictly dominant cells are the unique pure equilibrium") {
  const BimatrixSlice s = slice_from({{1, 2}, {3, 4}}, {{1, 3}, {2, 4}});
  const auto nash = pure_nash_equilibria(s);
  REQUIRE(nash.size() == 1);
  CHECK(nash[0] == std::pair<std::size_t, std::size_t>{1, 1});
}

TEST_CASE("total indifference returns every cell") {
  const BimatrixSlice s = slice_from({{5, 5}, {5, 5}}, {{7, 7}, {7, 7}});
  CHECK(pure_nash_equilibria(s).size() == 4);
}

TEST_CASE("random integer slices agree with the double-loop oracle") {
  SplitMix64 rng(555);
  for (int trial = 0; trial < 200; ++trial) {
    BimatrixSlice s;
    s.n_rows = 4;
    s.n_cols = 4;
    s.row_payoff.resize(16);
    s.col_payoff.resize(16);
    s.valid.assign(16, 1);
    for (int i = 0; i < 16; ++i) {
      s.row_payoff[i] = static_cast<double>(rng.next_u64() % 5);
      s.col_payoff[i] = static_cast<double>(rng.next_u64() % 5);
      if (rng.next_u64() % 8 == 0) s.valid[i] = 0;
    }
    CHECK(pure_nash_equilibria(s) == nash_oracle(s));
  }
}

TEST_CASE("empty slices are rejected") {
  BimatrixSlice s;
  CHECK_THROWS_AS(pure_nash_equilibria(s), std::invalid_argument);
}

namespace {

PayoffTensor synthetic_tensor(const std::vector<double>& bus_revenue,
                              const std::vector<double>& avg_cost) {
  PayoffTensor t;
  t.grid.municipality_prices = {0.0, 1.0, 2.0};
  t.grid.amod_prices = {0.0};
  t.grid.bike_prices = {0.0};
  t.cells.resize(3);
  for (int b = 0; b < 3; ++b) {
    t.cells[b].valid = true;
    t.cells[b].bus_revenue = bus_revenue[b];
    t.cells[b].avg_cost = avg_cost[b];
    t.cells[b].co2 = 1.0;
  }
  return t;
}

} // namespace

TEST_CASE("backward induction maximizes the weighted municipal payoff") {
  const PayoffTensor t = synthetic_tensor({10, 30, 20}, {5, 9, 7});
  const std::vector<std::vector<std::pair<std::size_t, std::size_t>>> nash(3, {{0, 0}});

  SUBCASE("revenue-only weights pick the revenue maximizer") {
    const auto sel = backward_induction(t, nash, {0, 0, 1});
    REQUIRE(sel.found);
    CHECK(sel.bus_index == 1);
  }
  SUBCASE("cost-only weights pick the cheapest city") {
    const auto sel = backward_induction(t, nash, {1, 0, 0});
    REQUIRE(sel.found);
    CHECK(sel.bus_index == 0);
  }
  SUBCASE("positive scaling leaves the argmax unchanged") {
    const auto a = backward_induction(t, nash, {0.3, 0.2, 0.5});
    const auto b = backward_induction(t, nash, {3.0, 2.0, 5.0});
    REQUIRE(a.found);
    CHECK(a.bus_index == b.bus_index);
    CHECK(a.amod_index == b.amod_index);
    CHECK(a.bike_index == b.bike_index);
  }
  SUBCASE("no equilibria anywhere") {
    const std::vector<std::vector<std::pair<std::size_t, std::size_t>>> none(3);
    CHECK_FALSE(backward_induction(t, none, {0, 0, 1}).found);
  }
}

TEST_CASE("tie rules pick the worst or best equilibrium for the municipality") {
  PayoffTensor t;
  t.grid.municipality_prices = {1.0};
  t.grid.amod_prices = {0.0, 1.0};
  t.grid.bike_prices = {0.0};
  t.cells.resize(2);
  for (auto& c : t.cells) {
    c.valid = true;
    c.co2 = 0.0;
    c.avg_cost = 0.0;
  }
  t.cells[t.index(0, 0, 0)].bus_revenue = 10.0;
  t.cells[t.index(0, 1, 0)].bus_revenue = 30.0;
  const std::vector<std::vector<std::pair<std::size_t, std::size_t>>> nash = {{{0, 0}, {1, 0}}};

  const auto pess = backward_induction(t, nash, {0, 0, 1}, TieRule::Pessimistic);
  REQUIRE(pess.found);
  CHECK(pess.municipal_payoff == doctest::Approx(10.0));
  CHECK(pess.amod_index == 0);

  const auto opt = backward_induction(t, nash, {0, 0, 1}, TieRule::Optimistic);
  CHECK(opt.municipal_payoff == doctest::Approx(30.0));
  CHECK(opt.amod_index == 1);
}

TEST_CASE("the pareto frontier keeps exactly the non-dominated points") {
  SUBCASE("dominated point drops, incomparable points stay") {
    // A=(5,10,3) is dominated by B=(4,9,4); C=(6,8,2) is incomparable
    const std::vector<FrontierPoint> pts = {{5, 10, 3}, {4, 9, 4}, {6, 8, 2}};
    const auto kept = pareto_frontier(pts);
    CHECK(kept == std::vector<std::size_t>{1, 2});
  }
  SUBCASE("single point survives") {
    CHECK(pareto_frontier({{1, 1, 1}}) == std::vector<std::size_t>{0});
  }
  SUBCASE("duplicates never dominate each other") {
    const std::vector<FrontierPoint> pts = {{2, 2, 2}, {2, 2, 2}};
    CHECK(pareto_frontier(pts).size() == 2);
  }
  SUBCASE("soundness and completeness against the dominance oracle") {
    SplitMix64 rng(77);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<FrontierPoint> pts;
      for (int i = 0; i < 20; ++i)
        pts.push_back({static_cast<double>(rng.next_u64() % 6), static_cast<double>(rng.next_u64() % 6),
                       static_cast<double>(rng.next_u64() % 6)});
      const auto kept = pareto_frontier(pts);
      auto dominates = [](const FrontierPoint& a, const FrontierPoint& b) {
        return a.avg_cost <= b.avg_cost && a.co2 <= b.co2 && a.bus_revenue >= b.bus_revenue &&
               (a.avg_cost < b.avg_cost || a.co2 < b.co2 || a.bus_revenue > b.bus_revenue);
      };
      std::vector<char> in_front(pts.size(), 0);
      for (std::size_t i : kept) in_front[i] = 1;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        bool dominated = false;
        for (std::size_t j = 0; j < pts.size(); ++j) dominated = dominated || (j != i && dominates(pts[j], pts[i]));
        CHECK(static_cast<bool>(in_front[i]) == !dominated);
      }
    }
  }
}

TEST_CASE("a degenerate one-cell grid reproduces the nominal solve") {
  const ScenarioBundle base = tiny_city();
  ActionGrid grid;
  grid.municipality_prices = {2.5};
  grid.amod_prices = {2.5};
  grid.bike_prices = {0.4};
  const PayoffTensor tensor = build_payoff_tensor(base, grid, SolveOptions{});
  REQUIRE(tensor.cells.size() == 1);
  REQUIRE(tensor.cells[0].valid);

  const SolveReport nominal = solve_equilibrium(base.scenario);
  REQUIRE(nominal.converged());
  const MetricsReport metrics = compute_metrics(base.scenario, nominal.flows);
  CHECK(tensor.cells[0].avg_cost == doctest::Approx(metrics.avg_cost_total_usd).epsilon(1e-6));
  CHECK(tensor.cells[0].bus_revenue == doctest::Approx(metrics.revenue_usd[1]).epsilon(1e-6));
  CHECK(tensor.cells[0].co2 == doctest::Approx(metrics.emissions_total_kg).epsilon(1e-6));

  const auto outcome = solve_stakeholder_game(base, grid, {0, 0, 1}, TieRule::Pessimistic, SolveOptions{});
  REQUIRE(outcome.selected.found);
  CHECK(outcome.selected.bus_index == 0);
  CHECK(outcome.frontier.size() == 1);
}

TEST_CASE("raising the amod price never raises the amod share") {
  const ScenarioBundle base = tiny_city();
  ActionGrid grid;
  grid.municipality_prices = {2.5};
  grid.amod_prices = {0.5, 1.5, 3.0};
  grid.bike_prices = {0.4};
  const PayoffTensor tensor = build_payoff_tensor(base, grid, SolveOptions{}, 2);
  double previous_share = 1e300;
  for (std::size_t a = 0; a < grid.amod_prices.size(); ++a) {
    const PayoffCell& cell = tensor.at(0, a, 0);
    REQUIRE(cell.valid);
    const double share = cell.amod_revenue / std::max(grid.amod_prices[a], 1e-9);
    CHECK(share <= previous_share + 1e-6);
    previous_share = share;
  }
}

TEST_CASE("tensor cells are deterministic across worker counts") {
  const ScenarioBundle base = tiny_city();
  ActionGrid grid;
  grid.municipality_prices = {0.0, 2.5};
  grid.amod_prices = {1.0, 2.5};
  grid.bike_prices = {0.4};
  const PayoffTensor seq = build_payoff_tensor(base, grid, SolveOptions{}, 1);
  const PayoffTensor par = build_payoff_tensor(base, grid, SolveOptions{}, 4);
  REQUIRE(seq.cells.size() == par.cells.size());
  for (std::size_t i = 0; i < seq.cells.size(); ++i) {
    CHECK(seq.cells[i].valid == par.cells[i].valid);
    CHECK(seq.cells[i].bus_revenue == par.cells[i].bus_revenue);
    CHECK(seq.cells[i].amod_revenue == par.cells[i].amod_revenue);
    CHECK(seq.cells[i].avg_cost == par.cells[i].avg_cost);
  }
}

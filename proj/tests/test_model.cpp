// SPDX-License-Identifier: Apache-2.0

#include "mmg/model.hpp"

#include <cmath>

#include <stdexcept>

#include "doctest.h"
#include "mmg/rng.hpp"
#include "support/instances.hpp"

using namespace mmg;

TEST_CASE("eval_cost matches the closed forms of the three families") {
  Dims dims{2, 1, 3};
  CostModel model = CostModel::zeros(dims);
  model.constant[dims.ijkm(0, 1, 0, 0)] = 2.5 / 15.0;
  model.congestion[dims.ijm(0, 1, 0)] = CongestionFamily::affine(0.2, 0.1);
  model.congestion[dims.ijm(0, 1, 1)] = CongestionFamily::bpr(0.2, 0.15, 4.0, 250.0);

  CHECK(eval_cost(model, 0, 1, 0, 0, 5.0) == doctest::Approx(0.2 * 1.5 + 2.5 / 15.0).epsilon(1e-9));
  CHECK(eval_cost(model, 0, 1, 0, 1, 0.0) == doctest::Approx(0.2));
  CHECK(eval_cost(model, 0, 1, 0, 1, 250.0) == doctest::Approx(0.23));
}

TEST_CASE("eval_cost rejects bad indices and loads") {
  Dims dims{2, 1, 2};
  CostModel model = CostModel::zeros(dims);
  CHECK_THROWS_AS(eval_cost(model, 0, 1, 0, 5, 1.0), std::out_of_range);
  CHECK_THROWS_AS(eval_cost(model, 0, 1, 2, 0, 1.0), std::out_of_range);
  CHECK_THROWS_AS(eval_cost(model, 0, 1, 0, 0, -1.0), std::invalid_argument);
}

TEST_CASE("eval_potential_term is the closed-form antiderivative") {
  Dims dims{2, 1, 3};
  CostModel model = CostModel::zeros(dims);
  model.congestion[dims.ijm(0, 1, 0)] = CongestionFamily::affine(1.0, 1.0);
  model.congestion[dims.ijm(0, 1, 1)] = CongestionFamily::constant(5.0);
  model.congestion[dims.ijm(0, 1, 2)] = CongestionFamily::bpr(1.0, 0.15, 4.0, 1.0);

  CHECK(eval_potential_term(model, 0, 1, 0, 2.0) == doctest::Approx(4.0));
  CHECK(eval_potential_term(model, 0, 1, 1, 2.0) == doctest::Approx(10.0));
  CHECK(eval_potential_term(model, 0, 1, 2, 1.0) == doctest::Approx(1.03));
}

TEST_CASE("potential of the capacitated pair reproduces the analytic values") {
  const Scenario s = testing::capacitated_three_mode_pair();

  // x2 = 1 on the capacitated mode: objective 7/2
  CHECK(eval_potential(s, testing::capacitated_pair_flows(0.5, 1.0)) == doctest::Approx(3.5).epsilon(1e-8));
  CHECK(eval_potential(s, testing::capacitated_pair_flows(0.0, 1.0)) == doctest::Approx(3.5).epsilon(1e-8));
  // x2 = 0: objective 2 + x2 + (2 - x2)^2 / 2 = 4
  CHECK(eval_potential(s, testing::capacitated_pair_flows(2.0, 0.0)) == doctest::Approx(4.0).epsilon(1e-8));
  // zero demand sums to zero
  Scenario empty = s;
  empty.demand.assign(empty.dims.size_ijk(), 0.0);
  CHECK(eval_potential(empty, FlowConfiguration::zeros(s.dims)) == 0.0);
}

TEST_CASE("costs are non-decreasing in the load for every family") {
  SplitMix64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    CongestionFamily family;
    switch (rng.next_u64() % 3) {
      case 0: family = CongestionFamily::constant(rng.next_unit() * 3.0); break;
      case 1: family = CongestionFamily::affine(rng.next_unit() * 3.0, rng.next_unit() * 2.0); break;
      default:
        family = CongestionFamily::bpr(rng.next_unit() * 3.0, rng.next_unit(), 1.0 + rng.next_unit() * 5.0,
                                       0.1 + rng.next_unit() * 10.0);
    }
    double a = rng.next_unit() * 10.0;
    double b = rng.next_unit() * 10.0;
    if (a > b) std::swap(a, b);
    CHECK(family.value(a) <= family.value(b) + 1e-12);
  }
}

namespace {

FlowConfiguration random_feasible_flows(const Scenario& s, SplitMix64& rng) {
  FlowConfiguration f = FlowConfiguration::zeros(s.dims);
  const Dims& d = s.dims;
  for (int i = 0; i < d.n_locations; ++i)
    for (int j = 0; j < d.n_locations; ++j) {
      if (i == j) continue;
      for (int k = 0; k < d.n_populations; ++k) {
        double left = s.demand[d.ijk(i, j, k)];
        for (int m = 0; m < d.n_modes - 1; ++m) {
          const double part = left * rng.next_unit();
          f.at(i, j, k, m) = part;
          left -= part;
        }
        f.at(i, j, k, d.n_modes - 1) = left;
      }
    }
  return f;
}

} // namespace

TEST_CASE("potential gradient equals the cost at the group load") {
  const Scenario s = testing::capacitated_three_mode_pair();
  SplitMix64 rng(7);
  const double h = 1e-6;
  for (int trial = 0; trial < 25; ++trial) {
    FlowConfiguration f = random_feasible_flows(s, rng);
    for (int k = 0; k < 2; ++k)
      for (int m = 0; m < 3; ++m) {
        FlowConfiguration up = f, down = f;
        up.at(0, 1, k, m) += h;
        down.at(0, 1, k, m) -= h;
        if (down.at(0, 1, k, m) < 0.0) continue;
        const double fd = (eval_potential(s, up) - eval_potential(s, down)) / (2.0 * h);
        const double cost = eval_cost(s.cost_model, 0, 1, k, m, f.group_load(0, 1, m));
        CHECK(fd == doctest::Approx(cost).epsilon(1e-4));
      }
  }
}

TEST_CASE("potential is convex along random segments") {
  const Scenario s = testing::capacitated_three_mode_pair();
  SplitMix64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const FlowConfiguration a = random_feasible_flows(s, rng);
    const FlowConfiguration b = random_feasible_flows(s, rng);
    const double lambda = rng.next_unit();
    FlowConfiguration mix = a;
    for (std::size_t v = 0; v < mix.x.size(); ++v) mix.x[v] = lambda * a.x[v] + (1.0 - lambda) * b.x[v];
    CHECK(eval_potential(s, mix) <=
          lambda * eval_potential(s, a) + (1.0 - lambda) * eval_potential(s, b) + 1e-9);
  }
}

TEST_CASE("regularization adds the weighted square sum") {
  Scenario s = testing::identical_linear_modes_pair(0.001);
  FlowConfiguration f = FlowConfiguration::zeros(s.dims);
  f.at(0, 1, 0, 0) = 2.0;
  f.at(0, 1, 1, 1) = 2.0;
  const double base = eval_potential(s, f, 0.0);
  CHECK(eval_potential(s, f) == doctest::Approx(base + 0.001 * 8.0).epsilon(1e-12));
}

TEST_CASE("scenario validation names the broken invariant") {
  Scenario s = testing::capacitated_three_mode_pair();
  SUBCASE("diagonal demand") {
    s.demand[s.dims.ijk(0, 0, 0)] = 1.0;
    CHECK_THROWS_WITH_AS(s.validate(), "diagonal demand d[i][i][k] must be zero", std::invalid_argument);
  }
  SUBCASE("negative demand") {
    s.demand[s.dims.ijk(0, 1, 0)] = -1.0;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  }
  SUBCASE("capacitated walking") {
    s.capacities.ride[s.dims.ijm(0, 1, 0)] = 10.0;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  }
  SUBCASE("bad bpr parameters") {
    CHECK_THROWS_AS(CongestionFamily::bpr(1.0, 0.15, 0.5, 250.0), std::invalid_argument);
    CHECK_THROWS_AS(CongestionFamily::bpr(1.0, 0.15, 4.0, 0.0), std::invalid_argument);
  }
}

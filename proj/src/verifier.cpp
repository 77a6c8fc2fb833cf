// SPDX-License-Identifier: Apache-2.0

#include "mmg/verifier.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

namespace mmg {

namespace {

double group_load_of(const FlowConfiguration& flows, int i, int j, int m) {
  return flows.group_load(i, j, m);
}

// loads of the three capacity families at a configuration
struct Loads {
  std::vector<double> ride;      // [i][j][m]
  std::vector<double> departing; // [i][m]
  std::vector<double> arriving;  // [j][m]
};

Loads compute_loads(const Scenario& s, const FlowConfiguration& flows) {
  const Dims& d = s.dims;
  Loads l;
  l.ride.assign(d.size_ijm(), 0.0);
  l.departing.assign(static_cast<std::size_t>(d.n_locations) * d.n_modes, 0.0);
  l.arriving.assign(static_cast<std::size_t>(d.n_locations) * d.n_modes, 0.0);
  for (int i = 0; i < d.n_locations; ++i)
    for (int j = 0; j < d.n_locations; ++j) {
      if (i == j) continue;
      for (int m = 0; m < d.n_modes; ++m) {
        const double load = group_load_of(flows, i, j, m);
        l.ride[d.ijm(i, j, m)] = load;
        l.departing[d.im(i, m)] += load;
        l.arriving[d.im(j, m)] += load;
      }
    }
  return l;
}

bool saturated_at(double cap, double load, double tol_sat) {
  if (is_unbounded(cap)) return false;
  return cap - load <= tol_sat * cap;
}

} // namespace

FeasibilityReport check_feasible(const Scenario& scenario, const FlowConfiguration& flows, double tol_eq,
                                 double tol_cap) {
  if (!(scenario.dims == flows.dims)) throw std::invalid_argument("flow dimensions disagree with scenario");
  const Dims& d = scenario.dims;
  FeasibilityReport report;
  report.tol_eq = tol_eq;
  report.tol_cap = tol_cap;

  for (int i = 0; i < d.n_locations; ++i)
    for (int j = 0; j < d.n_locations; ++j) {
      if (i == j) continue;
      for (int k = 0; k < d.n_populations; ++k) {
        double served = 0.0;
        for (int m = 0; m < d.n_modes; ++m) {
          const double xv = flows.x[d.ijkm(i, j, k, m)];
          served += xv;
          if (xv < -tol_eq)
            report.violations.push_back({FeasibilityKind::NonNegativity, i, j, k, m, -xv});
        }
        const double dem = scenario.demand[d.ijk(i, j, k)];
        if (std::abs(served - dem) > tol_eq * std::max(1.0, dem))
          report.violations.push_back({FeasibilityKind::Demand, i, j, k, -1, served - dem});
      }
    }

  const Loads loads = compute_loads(scenario, flows);
  for (int i = 0; i < d.n_locations; ++i)
    for (int j = 0; j < d.n_locations; ++j) {
      if (i == j) continue;
      for (int m = 0; m < d.n_modes; ++m) {
        const double cap = scenario.capacities.ride[d.ijm(i, j, m)];
        const double load = loads.ride[d.ijm(i, j, m)];
        if (!is_unbounded(cap) && load > cap * (1.0 + tol_cap) + tol_cap * 1e-3)
          report.violations.push_back({FeasibilityKind::Ride, i, j, -1, m, load - cap});
      }
    }
  for (int i = 0; i < d.n_locations; ++i)
    for (int m = 0; m < d.n_modes; ++m) {
      const double ca = scenario.capacities.available[d.im(i, m)];
      if (!is_unbounded(ca) && loads.departing[d.im(i, m)] > ca * (1.0 + tol_cap) + tol_cap * 1e-3)
        report.violations.push_back({FeasibilityKind::Available, i, -1, -1, m, loads.departing[d.im(i, m)] - ca});
      const double cd = scenario.capacities.displace[d.im(i, m)];
      if (!is_unbounded(cd) && loads.arriving[d.im(i, m)] > cd * (1.0 + tol_cap) + tol_cap * 1e-3)
        report.violations.push_back({FeasibilityKind::Displace, -1, i, -1, m, loads.arriving[d.im(i, m)] - cd});
    }

  report.feasible = report.violations.empty();
  return report;
}

CheckReport check_equilibrium(const Scenario& scenario, const FlowConfiguration& flows, double tol_cost,
                              double tol_sat) {
  CheckReport report;
  report.tol_cost = tol_cost;
  report.tol_sat = tol_sat;

  FeasibilityReport feas = check_feasible(scenario, flows);
  report.feasible = feas.feasible;
  report.feasibility_violations = std::move(feas.violations);
  if (!report.feasible) {
    report.is_equilibrium = false;
    return report;
  }

  const Dims& d = scenario.dims;
  const Loads loads = compute_loads(scenario, flows);

  for (int i = 0; i < d.n_locations; ++i) {
    for (int j = 0; j < d.n_locations; ++j) {
      if (i == j) continue;
      for (int k = 0; k < d.n_populations; ++k) {
        for (int m = 0; m < d.n_modes; ++m) {
          if (flows.x[d.ijkm(i, j, k, m)] <= tol_cost) continue; // unused
          const double own = eval_cost(scenario.cost_model, i, j, k, m, loads.ride[d.ijm(i, j, m)]);
          for (int alt = 0; alt < d.n_modes; ++alt) {
            if (alt == m) continue;
            const double other = eval_cost(scenario.cost_model, i, j, k, alt, loads.ride[d.ijm(i, j, alt)]);
            if (own <= other + tol_cost) continue;
            const bool sat =
                saturated_at(scenario.capacities.ride[d.ijm(i, j, alt)], loads.ride[d.ijm(i, j, alt)], tol_sat) ||
                saturated_at(scenario.capacities.available[d.im(i, alt)], loads.departing[d.im(i, alt)], tol_sat) ||
                saturated_at(scenario.capacities.displace[d.im(j, alt)], loads.arriving[d.im(j, alt)], tol_sat);
            if (sat) continue;
            report.violations.push_back({i, j, k, m, alt, own - other, false});
          }
        }
      }
    }
  }
  report.is_equilibrium = report.violations.empty();
  return report;
}

namespace {

// Grid points of one demand simplex: allocations in whole grid steps plus the
// fractional remainder of d assigned to each mode in turn, so that simplex
// vertices are represented exactly.
std::vector<std::vector<double>> simplex_grid(double demand, int n_modes, double step) {
  const long long units = static_cast<long long>(std::floor(demand / step + 1e-9));
  const double remainder = demand - static_cast<double>(units) * step;
  const bool has_remainder = remainder > 1e-12 * std::max(1.0, demand);

  std::vector<std::vector<double>> points;
  std::vector<long long> alloc(n_modes, 0);
  std::function<void(int, long long)> rec = [&](int mode, long long left) {
    if (mode == n_modes - 1) {
      alloc[mode] = left;
      const int rem_modes = has_remainder ? n_modes : 1;
      for (int rho = 0; rho < rem_modes; ++rho) {
        std::vector<double> x(n_modes);
        for (int m = 0; m < n_modes; ++m) x[m] = static_cast<double>(alloc[m]) * step;
        x[rho] += remainder;
        points.push_back(std::move(x));
      }
      return;
    }
    for (long long a = 0; a <= left; ++a) {
      alloc[mode] = a;
      rec(mode + 1, left - a);
    }
  };
  rec(0, units);
  return points;
}

} // namespace

std::vector<FlowConfiguration> brute_force_equilibria(const Scenario& scenario, double grid_step) {
  scenario.validate();
  if (!(grid_step > 0.0)) throw std::invalid_argument("grid_step must be > 0");
  const Dims& d = scenario.dims;
  if (d.n_locations > 2 || d.n_populations > 2 || d.n_modes > 3)
    throw std::invalid_argument("instance too large for brute-force enumeration");
  if (scenario.total_demand() > 6.0 + 1e-9)
    throw std::invalid_argument("total demand too large for brute-force enumeration");

  struct TripleRef {
    int i, j, k;
    std::vector<std::vector<double>> candidates;
  };
  std::vector<TripleRef> triples;
  double combination_estimate = 1.0;
  for (int i = 0; i < d.n_locations; ++i)
    for (int j = 0; j < d.n_locations; ++j) {
      if (i == j) continue;
      for (int k = 0; k < d.n_populations; ++k) {
        const double dem = scenario.demand[d.ijk(i, j, k)];
        if (dem <= 0.0) continue;
        TripleRef t{i, j, k, simplex_grid(dem, d.n_modes, grid_step)};
        combination_estimate *= static_cast<double>(t.candidates.size());
        triples.push_back(std::move(t));
      }
    }
  if (combination_estimate > 5e7) throw std::invalid_argument("grid too fine for brute-force enumeration");

  std::vector<FlowConfiguration> found;
  FlowConfiguration current = FlowConfiguration::zeros(d);
  std::function<void(std::size_t)> rec = [&](std::size_t ti) {
    if (ti == triples.size()) {
      if (!check_feasible(scenario, current, 1e-9, 1e-9).feasible) return;
      if (check_equilibrium(scenario, current).is_equilibrium) found.push_back(current);
      return;
    }
    const TripleRef& t = triples[ti];
    for (const auto& cand : t.candidates) {
      for (int m = 0; m < d.n_modes; ++m) current.x[d.ijkm(t.i, t.j, t.k, m)] = cand[m];
      rec(ti + 1);
    }
    for (int m = 0; m < d.n_modes; ++m) current.x[d.ijkm(t.i, t.j, t.k, m)] = 0.0;
  };
  rec(0);

  std::sort(found.begin(), found.end(),
            [](const FlowConfiguration& a, const FlowConfiguration& b) { return a.x < b.x; });
  found.erase(std::unique(found.begin(), found.end(),
                          [](const FlowConfiguration& a, const FlowConfiguration& b) { return a.x == b.x; }),
              found.end());
  return found;
}

} // namespace mmg

// SPDX-License-Identifier: Apache-2.0
//
// Independent oracle: exhaustive grid minimization of the potential over the
// demand simplices, capacity-filtered. Deliberately shares no code with the
// interior-point solver. Valid for N <= 2 only, where no capacity couples
// distinct origin-destination pairs; demands must be whole multiples of the
// grid step.

#ifndef MMG_TESTS_GRID_ORACLE_HPP
#define MMG_TESTS_GRID_ORACLE_HPP

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "mmg/model.hpp"

namespace mmg::testing {

namespace detail {

inline long long units_of(double value, double step) {
  const double raw = value / step;
  const long long units = static_cast<long long>(std::llround(raw));
  if (std::abs(raw - static_cast<double>(units)) > 1e-6)
    throw std::invalid_argument("grid oracle requires demands aligned to the step");
  return units;
}

// all compositions of `total` units into `parts` slots
inline void compositions(long long total, int parts, std::vector<long long>& work,
                         const std::function<void(const std::vector<long long>&)>& emit, int slot = 0) {
  if (slot == parts - 1) {
    work[slot] = total;
    emit(work);
    return;
  }
  for (long long a = 0; a <= total; ++a) {
    work[slot] = a;
    compositions(total - a, parts, work, emit, slot + 1);
  }
}

} // namespace detail

/// Minimum potential over the product of per-triple simplex grids, or +inf
/// when no grid point satisfies the capacities.
inline double grid_min_potential(const Scenario& s, double step) {
  const Dims& d = s.dims;
  if (d.n_locations > 2) throw std::invalid_argument("grid oracle supports N <= 2 only");

  double total = 0.0;
  for (int i = 0; i < d.n_locations; ++i) {
    for (int j = 0; j < d.n_locations; ++j) {
      if (i == j) continue;
      // per-mode upper bound: with N = 2 every capacity constrains only this
      // pair, so ride/available/displace bounds collapse to one box
      std::vector<double> ub(d.n_modes, std::numeric_limits<double>::infinity());
      for (int m = 0; m < d.n_modes; ++m) {
        ub[m] = std::min(ub[m], s.capacities.ride[d.ijm(i, j, m)]);
        ub[m] = std::min(ub[m], s.capacities.available[d.im(i, m)]);
        ub[m] = std::min(ub[m], s.capacities.displace[d.im(j, m)]);
      }

      std::vector<int> pops;
      for (int k = 0; k < d.n_populations; ++k)
        if (s.demand[d.ijk(i, j, k)] > 0.0) pops.push_back(k);
      if (pops.empty()) continue;
      if (pops.size() > 2) throw std::invalid_argument("grid oracle supports K <= 2 only");

      const int k1 = pops[0];
      const long long units1 = detail::units_of(s.demand[d.ijk(i, j, k1)], step);

      auto pair_value = [&](const std::vector<double>& load, const std::vector<double>& c0_weighted) {
        double v = 0.0;
        for (int m = 0; m < d.n_modes; ++m) {
          v += c0_weighted[m];
          v += s.cost_model.congestion[d.ijm(i, j, m)].integral(load[m]);
        }
        return v;
      };

      double best = std::numeric_limits<double>::infinity();
      std::vector<long long> work(d.n_modes, 0);
      detail::compositions(units1, d.n_modes, work, [&](const std::vector<long long>& alloc1) {
        std::vector<double> x1(d.n_modes);
        for (int m = 0; m < d.n_modes; ++m) {
          x1[m] = static_cast<double>(alloc1[m]) * step;
          if (x1[m] > ub[m] + 1e-9) return;
        }
        if (pops.size() == 1) {
          std::vector<double> c0w(d.n_modes);
          for (int m = 0; m < d.n_modes; ++m)
            c0w[m] = s.cost_model.constant[d.ijkm(i, j, k1, m)] * x1[m];
          best = std::min(best, pair_value(x1, c0w));
          return;
        }
        // exact inner minimum over the second population: marginal
        // allocation on a separable convex objective with box bounds
        const int k2 = pops[1];
        const long long units2 = detail::units_of(s.demand[d.ijk(i, j, k2)], step);
        std::vector<double> x2(d.n_modes, 0.0);
        std::vector<long long> room(d.n_modes);
        for (int m = 0; m < d.n_modes; ++m) {
          const double headroom = ub[m] - x1[m];
          if (std::isinf(headroom)) {
            room[m] = units2;
          } else if (headroom <= 0.0) {
            room[m] = 0;
          } else {
            room[m] = static_cast<long long>(std::floor(headroom / step + 1e-9));
          }
        }
        long long room_total = 0;
        for (int m = 0; m < d.n_modes; ++m) room_total += room[m];
        if (room_total < units2) return; // capacity-infeasible for this x1
        for (long long placed = 0; placed < units2; ++placed) {
          int arg = -1;
          double best_marginal = std::numeric_limits<double>::infinity();
          for (int m = 0; m < d.n_modes; ++m) {
            if (room[m] <= 0) continue;
            const auto& family = s.cost_model.congestion[d.ijm(i, j, m)];
            const double load = x1[m] + x2[m];
            const double marginal = s.cost_model.constant[d.ijkm(i, j, k2, m)] * step +
                                    family.integral(load + step) - family.integral(load);
            if (marginal < best_marginal) {
              best_marginal = marginal;
              arg = m;
            }
          }
          x2[arg] += step;
          room[arg] -= 1;
        }
        std::vector<double> load(d.n_modes), c0w(d.n_modes);
        for (int m = 0; m < d.n_modes; ++m) {
          load[m] = x1[m] + x2[m];
          c0w[m] = s.cost_model.constant[d.ijkm(i, j, k1, m)] * x1[m] +
                   s.cost_model.constant[d.ijkm(i, j, k2, m)] * x2[m];
        }
        best = std::min(best, pair_value(load, c0w));
      });
      total += best;
    }
  }
  return total;
}

} // namespace mmg::testing

#endif // MMG_TESTS_GRID_ORACLE_HPP

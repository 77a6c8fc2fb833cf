// SPDX-License-Identifier: Apache-2.0

#include "mmg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mmg {

namespace {

void check_dims(const Scenario& s, const FlowConfiguration& f) {
  if (!(s.dims == f.dims)) throw std::invalid_argument("flow dimensions disagree with scenario");
}

std::vector<double> group_loads(const Scenario& s, const FlowConfiguration& f) {
  const Dims& d = s.dims;
  std::vector<double> load(d.size_ijm(), 0.0);
  for (int i = 0; i < d.n_locations; ++i)
    for (int j = 0; j < d.n_locations; ++j)
      if (i != j)
        for (int m = 0; m < d.n_modes; ++m) load[d.ijm(i, j, m)] = f.group_load(i, j, m);
  return load;
}

} // namespace

std::vector<double> modal_split(const Scenario& scenario, const FlowConfiguration& flows, bool& defined) {
  check_dims(scenario, flows);
  const Dims& d = scenario.dims;
  std::vector<double> split(d.n_modes, 0.0);
  const double total = scenario.total_demand();
  defined = total > 0.0;
  if (!defined) return split;
  for (int i = 0; i < d.n_locations; ++i)
    for (int j = 0; j < d.n_locations; ++j) {
      if (i == j) continue;
      for (int k = 0; k < d.n_populations; ++k)
        for (int m = 0; m < d.n_modes; ++m) split[m] += flows.x[d.ijkm(i, j, k, m)];
    }
  for (double& v : split) v /= total;
  return split;
}

void average_cost(const Scenario& scenario, const FlowConfiguration& flows, double& total_usd,
                  std::vector<double>& per_population_usd) {
  check_dims(scenario, flows);
  if (!scenario.meta.has_value_of_time()) throw std::invalid_argument("value-of-time metadata missing");
  const Dims& d = scenario.dims;
  const std::vector<double> load = group_loads(scenario, flows);

  per_population_usd.assign(d.n_populations, 0.0);
  std::vector<double> pop_demand(d.n_populations, 0.0);
  for (int i = 0; i < d.n_locations; ++i)
    for (int j = 0; j < d.n_locations; ++j) {
      if (i == j) continue;
      for (int k = 0; k < d.n_populations; ++k) {
        pop_demand[k] += scenario.demand[d.ijk(i, j, k)];
        for (int m = 0; m < d.n_modes; ++m) {
          const double xv = flows.x[d.ijkm(i, j, k, m)];
          if (xv == 0.0) continue;
          const double hours = eval_cost(scenario.cost_model, i, j, k, m, load[d.ijm(i, j, m)]);
          per_population_usd[k] += xv * hours * scenario.meta.value_of_time[k];
        }
      }
    }
  double usd_sum = 0.0, demand_sum = 0.0;
  for (int k = 0; k < d.n_populations; ++k) {
    usd_sum += per_population_usd[k];
    demand_sum += pop_demand[k];
    per_population_usd[k] = pop_demand[k] > 0.0 ? per_population_usd[k] / pop_demand[k] : 0.0;
  }
  total_usd = demand_sum > 0.0 ? usd_sum / demand_sum : 0.0;
}

std::vector<double> revenue(const Scenario& scenario, const FlowConfiguration& flows) {
  check_dims(scenario, flows);
  if (!scenario.meta.has_prices()) throw std::invalid_argument("pricing metadata missing");
  const Dims& d = scenario.dims;
  std::vector<double> rev(d.n_modes, 0.0);
  for (int i = 0; i < d.n_locations; ++i)
    for (int j = 0; j < d.n_locations; ++j) {
      if (i == j) continue;
      for (int m = 1; m < d.n_modes; ++m) {
        const double price = scenario.meta.price_usd[d.ijm(i, j, m)];
        if (price == 0.0) continue;
        for (int k = 0; k < d.n_populations; ++k) rev[m] += price * flows.x[d.ijkm(i, j, k, m)];
      }
    }
  return rev;
}

std::vector<double> emissions(const Scenario& scenario, const FlowConfiguration& flows) {
  check_dims(scenario, flows);
  if (!scenario.meta.has_distances()) throw std::invalid_argument("distance metadata missing");
  const Dims& d = scenario.dims;
  std::vector<double> out(d.n_modes, 0.0);
  for (int m = 0; m < d.n_modes; ++m) {
    const double factor =
        m < static_cast<int>(scenario.meta.emission_kg_per_km.size()) ? scenario.meta.emission_kg_per_km[m] : 0.0;
    if (factor == 0.0) continue;
    double pax_km = 0.0;
    for (int i = 0; i < d.n_locations; ++i)
      for (int j = 0; j < d.n_locations; ++j) {
        if (i == j) continue;
        pax_km += flows.group_load(i, j, m) * scenario.meta.distance_km[d.ij(i, j)];
      }
    out[m] = factor * pax_km;
  }
  return out;
}

std::vector<HistogramEntry> cost_histogram(const Scenario& scenario, const FlowConfiguration& flows) {
  check_dims(scenario, flows);
  if (!scenario.meta.has_value_of_time()) throw std::invalid_argument("value-of-time metadata missing");
  const Dims& d = scenario.dims;
  const std::vector<double> load = group_loads(scenario, flows);

  std::vector<HistogramEntry> hist;
  for (int i = 0; i < d.n_locations; ++i)
    for (int j = 0; j < d.n_locations; ++j) {
      if (i == j) continue;
      for (int k = 0; k < d.n_populations; ++k) {
        const double dem = scenario.demand[d.ijk(i, j, k)];
        if (dem <= 0.0) continue;
        double usd = 0.0;
        for (int m = 0; m < d.n_modes; ++m) {
          const double xv = flows.x[d.ijkm(i, j, k, m)];
          if (xv == 0.0) continue;
          usd += xv * eval_cost(scenario.cost_model, i, j, k, m, load[d.ijm(i, j, m)]) *
                 scenario.meta.value_of_time[k];
        }
        hist.push_back({i, j, k, usd / dem, dem});
      }
    }
  std::sort(hist.begin(), hist.end(), [](const HistogramEntry& a, const HistogramEntry& b) {
    if (a.avg_cost_usd != b.avg_cost_usd) return a.avg_cost_usd < b.avg_cost_usd;
    if (a.i != b.i) return a.i < b.i;
    if (a.j != b.j) return a.j < b.j;
    return a.k < b.k;
  });
  return hist;
}

MetricsReport compute_metrics(const Scenario& scenario, const FlowConfiguration& flows) {
  MetricsReport r;
  r.modal_split = modal_split(scenario, flows, r.split_defined);
  if (scenario.meta.has_value_of_time()) {
    average_cost(scenario, flows, r.avg_cost_total_usd, r.avg_cost_usd);
    r.histogram = cost_histogram(scenario, flows);
    r.costs_defined = true;
  }
  if (scenario.meta.has_prices()) {
    r.revenue_usd = revenue(scenario, flows);
    r.revenue_defined = true;
  }
  if (scenario.meta.has_distances()) {
    r.emissions_kg = emissions(scenario, flows);
    r.emissions_total_kg = 0.0;
    for (double e : r.emissions_kg) r.emissions_total_kg += e;
    r.emissions_defined = true;
  }
  return r;
}

double histogram_quantile(const std::vector<HistogramEntry>& histogram, double q) {
  if (histogram.empty()) return 0.0;
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile must lie in [0,1]");
  double total = 0.0;
  for (const auto& h : histogram) total += h.weight;
  const double target = q * total;
  double acc = 0.0;
  for (const auto& h : histogram) {
    acc += h.weight;
    if (acc >= target) return h.avg_cost_usd;
  }
  return histogram.back().avg_cost_usd;
}

} // namespace mmg

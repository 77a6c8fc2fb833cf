// SPDX-License-Identifier: Apache-2.0

#ifndef MMG_METRICS_HPP
#define MMG_METRICS_HPP

#include <vector>

#include "mmg/model.hpp"

namespace mmg {

struct HistogramEntry {
  int i, j, k;
  double avg_cost_usd; // demand-weighted over the modes the group uses
  double weight;       // group demand
};

struct MetricsReport {
  bool split_defined = false;        // false when total demand is zero
  std::vector<double> modal_split;   // per mode, sums to 1 when defined
  bool costs_defined = false;        // requires value-of-time metadata
  double avg_cost_total_usd = 0.0;
  std::vector<double> avg_cost_usd;  // per population
  bool revenue_defined = false;      // requires pricing metadata
  std::vector<double> revenue_usd;   // per mode
  bool emissions_defined = false;    // requires distances
  std::vector<double> emissions_kg;  // per mode
  double emissions_total_kg = 0.0;
  std::vector<HistogramEntry> histogram; // sorted by cost, then indices
};

/// Fraction of all travelers on each mode; undefined for zero total demand.
std::vector<double> modal_split(const Scenario& scenario, const FlowConfiguration& flows, bool& defined);

/// Demand-weighted per-traveler cost in USD (fare plus monetary value of
/// travel time): per population and overall. Requires value-of-time metadata.
void average_cost(const Scenario& scenario, const FlowConfiguration& flows, double& total_usd,
                  std::vector<double>& per_population_usd);

/// Fare revenue per mode operator; walking contributes zero. Requires
/// pricing metadata (throws std::invalid_argument without it).
std::vector<double> revenue(const Scenario& scenario, const FlowConfiguration& flows);

/// kg CO2 per mode: emission factor times passenger-km. Requires distances.
std::vector<double> emissions(const Scenario& scenario, const FlowConfiguration& flows);

/// One entry per (i,j,k) group with demand, its demand-weighted average USD
/// cost across used modes; sorted by cost for plotting.
std::vector<HistogramEntry> cost_histogram(const Scenario& scenario, const FlowConfiguration& flows);

/// Everything above in one pass, skipping pieces whose metadata is missing.
MetricsReport compute_metrics(const Scenario& scenario, const FlowConfiguration& flows);

/// Demand-weighted quantile of a histogram (q in [0,1]).
double histogram_quantile(const std::vector<HistogramEntry>& histogram, double q);

} // namespace mmg

#endif // MMG_METRICS_HPP

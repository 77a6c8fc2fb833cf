// SPDX-License-Identifier: Apache-2.0

#ifndef MMG_SCENARIO_IO_HPP
#define MMG_SCENARIO_IO_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mmg/model.hpp"
#include "mmg/solver.hpp"

namespace mmg {

struct MetricsReport; // metrics.hpp

enum class PricingKind { Free, FlatPerRide, PerKm };

struct Pricing {
  PricingKind kind = PricingKind::Free;
  double amount = 0.0; // USD per ride or per km

  double fare_usd(double distance_km) const {
    switch (kind) {
      case PricingKind::Free: return 0.0;
      case PricingKind::FlatPerRide: return amount;
      case PricingKind::PerKm: return amount * distance_km;
    }
    return 0.0;
  }
};

enum class FleetPolicyKind { None, UniformTotal, PerLocation, DemandFraction };

struct FleetPolicy {
  FleetPolicyKind kind = FleetPolicyKind::None;
  double uniform_total = 0.0;
  std::vector<double> per_location;
  double demand_fraction = 0.0;
  double seats_per_vehicle = 1.0;
};

/// Congestion family shape for one mode; nominal times come from
/// distance / speed at build time.
struct CongestionSpec {
  CongestionKind kind = CongestionKind::Constant;
  double alpha = 0.0;
  double beta = 1.0;
  double kappa = 1.0;
};

struct ModeConfig {
  std::string name;
  Pricing pricing;
  double speed_kmh = 0.0;
  CongestionSpec congestion;
  FleetPolicy fleet;
  double emission_kg_per_km = 0.0;
};

struct PopulationConfig {
  std::string name;
  double value_of_time_usd_per_hour = 0.0;
  double share = 0.0;
};

enum class SplitMode { Deterministic, Random };

struct ScenarioConfig {
  std::string name;
  std::vector<ModeConfig> modes; // mode 0 must be the free, fleetless "walk"
  std::vector<PopulationConfig> populations;
  double window_hours = 3.0;
  std::uint64_t rng_seed = 0;
  double regularization_weight = 0.0;
  SplitMode split_mode = SplitMode::Deterministic;
  double detour_factor = 1.3; // road distance over euclidean

  void validate() const;
};

/// Parses the TNTP trips format: optional "<KEY> value" metadata lines,
/// "Origin i" block headers, and "j : value ;" entries. Returns the dense
/// N x N matrix with the diagonal forced to zero; diagonal entries are
/// dropped with a warning.
std::vector<double> parse_tntp_trips(const std::string& text, int& n_out,
                                     std::vector<std::string>* warnings = nullptr);

std::string write_tntp_trips(const std::vector<double>& d_total, int n);

/// Splits the pair totals across populations. Deterministic mode assigns the
/// exact proportional share; random mode draws proportions per pair from a
/// seeded splitmix64 substream (share-weighted exponentials, normalized).
/// The last population absorbs the remainder so the split conserves totals
/// exactly.
std::vector<double> split_populations(const std::vector<double>& d_total, int n,
                                      const std::vector<double>& shares, std::uint64_t rng_seed,
                                      SplitMode mode = SplitMode::Deterministic);

/// Euclidean distances scaled by the detour factor, in km.
std::vector<double> distances_from_coordinates(const std::vector<std::pair<double, double>>& xy_km,
                                               double detour_factor);

/// Assembles a validated Scenario from a config, pair demand totals, and a
/// distance matrix: fares divided by the value of time populate the constant
/// cost terms, nominal times come from distances and mode speeds, and fleet
/// policies become availability capacities.
Scenario build_scenario(const ScenarioConfig& config, const std::vector<double>& d_total, int n,
                        const std::vector<double>& distances_km);

/// Concentrates every uniform-total fleet onto the max(1, round(fraction*N))
/// locations with the most departing trips; other policies are unchanged.
ScenarioConfig concentrate_fleets(const ScenarioConfig& config, const std::vector<double>& d_total,
                                  int n, double fraction);

/// A scenario together with whatever is needed to rebuild it under different
/// prices (stakeholder game) or fleet allocations (relocation sweep).
struct ScenarioBundle {
  Scenario scenario;
  std::optional<ScenarioConfig> config; // engaged for config-built scenarios
  std::vector<double> demand_total;     // N x N, config scenarios only
  std::vector<double> distances_km;     // N x N, config scenarios only
  std::uint64_t source_hash = 0;        // FNV-1a of the scenario document
  std::string source_path;

  bool rebuildable() const { return config.has_value(); }
};

/// Loads a scenario JSON document ("type": "config" or "raw"; see README for
/// the schema). Relative trips/coordinates paths resolve against the
/// document's directory. Throws std::runtime_error naming the offending
/// field.
ScenarioBundle load_scenario_file(const std::string& path);

ScenarioBundle scenario_bundle_from_json(const std::string& json_text, const std::string& base_dir);

/// flows.csv round-trip used by the check subcommand.
std::string write_flows_csv(const Scenario& scenario, const FlowConfiguration& flows);
FlowConfiguration read_flows_csv(const Scenario& scenario, const std::string& csv_text);

struct RunManifest {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  SolveOptions options;
  std::string tool_version;
  std::string status;
  double potential = 0.0;
  double kkt_residual = 0.0;
  int barrier_stages = 0;
};

/// Writes flows.csv, metrics.csv, histogram.csv, and manifest.json into an
/// existing directory. Files are staged with temporary names and renamed, so
/// failures leave no partial artifacts. Identical inputs produce identical
/// bytes.
void write_results(const Scenario& scenario, const SolveReport& report, const MetricsReport& metrics,
                   const RunManifest& manifest, const std::string& out_dir);

/// Shortest round-trip decimal rendering, used by every CSV/JSON writer.
std::string format_double(double v);

std::uint64_t fnv1a64(const std::string& bytes);

std::string read_text_file(const std::string& path);
void write_text_file_atomic(const std::string& path, const std::string& content);

} // namespace mmg

#endif // MMG_SCENARIO_IO_HPP

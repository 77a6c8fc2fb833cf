// SPDX-License-Identifier: Apache-2.0

#ifndef MMG_MODEL_HPP
#define MMG_MODEL_HPP

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

namespace mmg {

/// Sentinel for an unbounded capacity. Kept as IEEE infinity so it is
/// representable, propagates through comparisons, and is never confused
/// with a large finite fleet size.
inline constexpr double kUnbounded = std::numeric_limits<double>::infinity();

inline bool is_unbounded(double c) { return c == kUnbounded; }

/// Tensor dimensions shared by all per-scenario arrays.
/// Locations i,j in [0,N), populations k in [0,K), modes m in [0,M1)
/// with mode 0 reserved for walking.
struct Dims {
  int n_locations = 0;   // N
  int n_populations = 0; // K
  int n_modes = 0;       // M+1, including walking at index 0

  std::size_t ijkm(int i, int j, int k, int m) const {
    return ((static_cast<std::size_t>(i) * n_locations + j) * n_populations + k) * n_modes + m;
  }
  std::size_t ijm(int i, int j, int m) const {
    return (static_cast<std::size_t>(i) * n_locations + j) * static_cast<std::size_t>(n_modes) + m;
  }
  std::size_t ijk(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * n_locations + j) * static_cast<std::size_t>(n_populations) + k;
  }
  std::size_t ij(int i, int j) const {
    return static_cast<std::size_t>(i) * n_locations + j;
  }
  std::size_t im(int i, int m) const {
    return static_cast<std::size_t>(i) * n_modes + m;
  }
  std::size_t size_ijkm() const {
    return static_cast<std::size_t>(n_locations) * n_locations * n_populations * n_modes;
  }
  std::size_t size_ijm() const {
    return static_cast<std::size_t>(n_locations) * n_locations * n_modes;
  }
  std::size_t size_ijk() const {
    return static_cast<std::size_t>(n_locations) * n_locations * n_populations;
  }
  bool operator==(const Dims&) const = default;
};

enum class CongestionKind { Constant, Affine, Bpr };

/// Load-coupled part of a travel cost, one of the three smooth families
///   Constant: t
///   Affine:   t * (1 + a*x)
///   Bpr:      t * (1 + a*(x/kappa)^beta)
/// All times in hours, loads in travelers per analysis window.
struct CongestionFamily {
  CongestionKind kind = CongestionKind::Constant;
  double t_nom = 0.0;
  double alpha = 0.0;
  double beta = 1.0;
  double kappa = 1.0;

  static CongestionFamily constant(double t_nom);
  static CongestionFamily affine(double t_nom, double alpha);
  static CongestionFamily bpr(double t_nom, double alpha, double beta, double kappa);

  double value(double load) const;      // c(load) in hours
  double integral(double load) const;   // closed-form antiderivative at load
  double derivative(double load) const; // dc/dload

  void validate() const; // throws std::invalid_argument on bad parameters
};

/// Decomposed cost c_ijk^m + c_ij^m(load): a population-dependent constant
/// term (fares already divided by the value of time, so everything is in
/// hours) plus a shared congestion family per (i,j,m).
struct CostModel {
  Dims dims;
  std::vector<double> constant;              // [i][j][k][m], hours, >= 0
  std::vector<CongestionFamily> congestion;  // [i][j][m]

  static CostModel zeros(const Dims& dims);
  void validate() const;
};

/// Three capacity surfaces of the game. Walking (mode 0) must be unbounded
/// in all three.
struct Capacities {
  std::vector<double> available; // C_a[i][m]: departures from i by mode m
  std::vector<double> displace;  // C_d[j][m]: arrivals at j by mode m
  std::vector<double> ride;      // C_r[i][j][m]: customers on ride i->j

  static Capacities unbounded(const Dims& dims);
  void validate(const Dims& dims) const;
};

struct ScenarioMeta {
  std::vector<std::string> mode_names;       // size n_modes or empty
  std::vector<std::string> population_names; // size n_populations or empty
  std::vector<double> value_of_time;         // USD/h per population, empty if unknown
  std::vector<double> price_usd;             // [i][j][m], empty if unknown
  std::vector<double> distance_km;           // [i][j], empty if unknown
  std::vector<double> emission_kg_per_km;    // per mode, empty if unknown

  bool has_prices() const { return !price_usd.empty(); }
  bool has_distances() const { return !distance_km.empty(); }
  bool has_value_of_time() const { return !value_of_time.empty(); }
};

/// A full game instance. Immutable after validate(); all evaluation
/// routines are pure and safe to share across threads.
struct Scenario {
  Dims dims;
  std::vector<double> demand; // d[i][j][k] travelers per window, zero diagonal
  Capacities capacities;
  CostModel cost_model;
  double window_hours = 1.0;
  double regularization_weight = 0.0; // opt-in reproducibility device
  ScenarioMeta meta;                  // optional reporting metadata

  double demand_at(int i, int j, int k) const { return demand[dims.ijk(i, j, k)]; }
  double total_demand() const;

  void validate() const; // throws std::invalid_argument with the offending field
};

/// Decision variables x[i][j][k][m], travelers per window.
struct FlowConfiguration {
  Dims dims;
  std::vector<double> x;

  static FlowConfiguration zeros(const Dims& dims);
  double at(int i, int j, int k, int m) const { return x[dims.ijkm(i, j, k, m)]; }
  double& at(int i, int j, int k, int m) { return x[dims.ijkm(i, j, k, m)]; }
  /// Total load sum_k x[i][j][k][m] seen by the congestion term.
  double group_load(int i, int j, int m) const;

  void validate() const;
};

/// Cost experienced by population k on (i,j,m) when the mode carries `load`
/// travelers in total.
double eval_cost(const CostModel& model, int i, int j, int k, int m, double load);

/// Antiderivative of the congestion family of (i,j,m) evaluated at
/// total_load; the integral term of the potential.
double eval_potential_term(const CostModel& model, int i, int j, int m, double total_load);

/// Beckmann potential of a configuration: linear constant-cost terms plus
/// congestion integrals at the group loads, plus the scenario's quadratic
/// regularizer when enabled.
double eval_potential(const Scenario& scenario, const FlowConfiguration& flows);

/// Same with an explicit regularization weight (the solver's objective).
double eval_potential(const Scenario& scenario, const FlowConfiguration& flows, double reg_weight);

} // namespace mmg

#endif // MMG_MODEL_HPP

// SPDX-License-Identifier: Apache-2.0

#include "mmg/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mmg {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

bool finite_nonneg(double v) { return std::isfinite(v) && v >= 0.0; }

} // namespace

CongestionFamily CongestionFamily::constant(double t_nom) {
  CongestionFamily f;
  f.kind = CongestionKind::Constant;
  f.t_nom = t_nom;
  f.validate();
  return f;
}

CongestionFamily CongestionFamily::affine(double t_nom, double alpha) {
  CongestionFamily f;
  f.kind = CongestionKind::Affine;
  f.t_nom = t_nom;
  f.alpha = alpha;
  f.validate();
  return f;
}

CongestionFamily CongestionFamily::bpr(double t_nom, double alpha, double beta, double kappa) {
  CongestionFamily f;
  f.kind = CongestionKind::Bpr;
  f.t_nom = t_nom;
  f.alpha = alpha;
  f.beta = beta;
  f.kappa = kappa;
  f.validate();
  return f;
}

void CongestionFamily::validate() const {
  require(finite_nonneg(t_nom), "congestion t_nom must be finite and >= 0");
  switch (kind) {
    case CongestionKind::Constant:
      break;
    case CongestionKind::Affine:
      require(finite_nonneg(alpha), "affine alpha must be finite and >= 0");
      break;
    case CongestionKind::Bpr:
      require(finite_nonneg(alpha), "bpr alpha must be finite and >= 0");
      require(std::isfinite(beta) && beta >= 1.0, "bpr beta must be >= 1");
      require(std::isfinite(kappa) && kappa > 0.0, "bpr kappa must be > 0");
      break;
  }
}

double CongestionFamily::value(double load) const {
  switch (kind) {
    case CongestionKind::Constant:
      return t_nom;
    case CongestionKind::Affine:
      return t_nom * (1.0 + alpha * load);
    case CongestionKind::Bpr:
      return t_nom * (1.0 + alpha * std::pow(load / kappa, beta));
  }
  return 0.0;
}

double CongestionFamily::integral(double load) const {
  switch (kind) {
    case CongestionKind::Constant:
      return t_nom * load;
    case CongestionKind::Affine:
      return t_nom * (load + 0.5 * alpha * load * load);
    case CongestionKind::Bpr:
      return t_nom * (load + alpha * std::pow(load / kappa, beta) * load / (beta + 1.0));
  }
  return 0.0;
}

double CongestionFamily::derivative(double load) const {
  switch (kind) {
    case CongestionKind::Constant:
      return 0.0;
    case CongestionKind::Affine:
      return t_nom * alpha;
    case CongestionKind::Bpr:
      if (load <= 0.0) return beta > 1.0 ? 0.0 : t_nom * alpha / kappa;
      return t_nom * alpha * beta * std::pow(load / kappa, beta - 1.0) / kappa;
  }
  return 0.0;
}

CostModel CostModel::zeros(const Dims& dims) {
  CostModel m;
  m.dims = dims;
  m.constant.assign(dims.size_ijkm(), 0.0);
  m.congestion.assign(dims.size_ijm(), CongestionFamily{});
  return m;
}

void CostModel::validate() const {
  require(dims.n_locations > 0, "n_locations must be positive");
  require(dims.n_populations > 0, "n_populations must be positive");
  require(dims.n_modes > 0, "n_modes must be positive");
  require(constant.size() == dims.size_ijkm(), "cost constant tensor has wrong size");
  require(congestion.size() == dims.size_ijm(), "congestion tensor has wrong size");
  for (double c : constant) require(finite_nonneg(c), "cost constants must be finite and >= 0");
  for (const auto& f : congestion) f.validate();
}

Capacities Capacities::unbounded(const Dims& dims) {
  Capacities c;
  c.available.assign(static_cast<std::size_t>(dims.n_locations) * dims.n_modes, kUnbounded);
  c.displace.assign(static_cast<std::size_t>(dims.n_locations) * dims.n_modes, kUnbounded);
  c.ride.assign(dims.size_ijm(), kUnbounded);
  return c;
}

void Capacities::validate(const Dims& dims) const {
  const std::size_t nm = static_cast<std::size_t>(dims.n_locations) * dims.n_modes;
  require(available.size() == nm, "available capacity has wrong size");
  require(displace.size() == nm, "displace capacity has wrong size");
  require(ride.size() == dims.size_ijm(), "ride capacity has wrong size");
  auto check_value = [&](double v) { require(v >= 0.0 && !std::isnan(v), "capacities must be >= 0 or unbounded"); };
  for (double v : available) check_value(v);
  for (double v : displace) check_value(v);
  for (double v : ride) check_value(v);
  // walking never runs out
  for (int i = 0; i < dims.n_locations; ++i) {
    require(is_unbounded(available[dims.im(i, 0)]), "walking availability must be unbounded");
    require(is_unbounded(displace[dims.im(i, 0)]), "walking displacement must be unbounded");
    for (int j = 0; j < dims.n_locations; ++j)
      require(is_unbounded(ride[dims.ijm(i, j, 0)]), "walking ride capacity must be unbounded");
  }
}

double Scenario::total_demand() const {
  double total = 0.0;
  for (double d : demand) total += d;
  return total;
}

void Scenario::validate() const {
  cost_model.validate();
  require(dims == cost_model.dims, "cost model dimensions disagree with scenario");
  require(demand.size() == dims.size_ijk(), "demand tensor has wrong size");
  require(std::isfinite(window_hours) && window_hours > 0.0, "window_hours must be positive");
  require(finite_nonneg(regularization_weight), "regularization_weight must be >= 0");
  for (double d : demand) require(finite_nonneg(d), "demands must be finite and >= 0");
  for (int i = 0; i < dims.n_locations; ++i)
    for (int k = 0; k < dims.n_populations; ++k)
      require(demand[dims.ijk(i, i, k)] == 0.0, "diagonal demand d[i][i][k] must be zero");
  capacities.validate(dims);
}

FlowConfiguration FlowConfiguration::zeros(const Dims& dims) {
  FlowConfiguration f;
  f.dims = dims;
  f.x.assign(dims.size_ijkm(), 0.0);
  return f;
}

double FlowConfiguration::group_load(int i, int j, int m) const {
  double load = 0.0;
  for (int k = 0; k < dims.n_populations; ++k) load += x[dims.ijkm(i, j, k, m)];
  return load;
}

void FlowConfiguration::validate() const {
  require(x.size() == dims.size_ijkm(), "flow tensor has wrong size");
  for (double v : x) require(std::isfinite(v), "flows must be finite");
  for (int i = 0; i < dims.n_locations; ++i)
    for (int k = 0; k < dims.n_populations; ++k)
      for (int m = 0; m < dims.n_modes; ++m)
        require(x[dims.ijkm(i, i, k, m)] == 0.0, "diagonal flows must be zero");
}

namespace {

void check_indices(const Dims& d, int i, int j, int k, int m) {
  if (i < 0 || i >= d.n_locations || j < 0 || j >= d.n_locations)
    throw std::out_of_range("location index out of range");
  if (k < 0 || k >= d.n_populations) throw std::out_of_range("population index out of range");
  if (m < 0 || m >= d.n_modes) throw std::out_of_range("mode index out of range");
}

void check_load(double load) {
  if (!(load >= 0.0) || !std::isfinite(load)) throw std::invalid_argument("load must be finite and >= 0");
}

} // namespace

double eval_cost(const CostModel& model, int i, int j, int k, int m, double load) {
  check_indices(model.dims, i, j, k, m);
  check_load(load);
  return model.constant[model.dims.ijkm(i, j, k, m)] + model.congestion[model.dims.ijm(i, j, m)].value(load);
}

double eval_potential_term(const CostModel& model, int i, int j, int m, double total_load) {
  check_indices(model.dims, i, j, 0, m);
  check_load(total_load);
  return model.congestion[model.dims.ijm(i, j, m)].integral(total_load);
}

double eval_potential(const Scenario& scenario, const FlowConfiguration& flows, double reg_weight) {
  if (!(scenario.dims == flows.dims)) throw std::invalid_argument("flow dimensions disagree with scenario");
  const Dims& d = scenario.dims;
  double total = 0.0;
  for (int i = 0; i < d.n_locations; ++i) {
    for (int j = 0; j < d.n_locations; ++j) {
      if (i == j) continue;
      for (int m = 0; m < d.n_modes; ++m) {
        double load = 0.0;
        for (int k = 0; k < d.n_populations; ++k) {
          const double xv = flows.x[d.ijkm(i, j, k, m)];
          total += scenario.cost_model.constant[d.ijkm(i, j, k, m)] * xv;
          if (reg_weight > 0.0) total += reg_weight * xv * xv;
          load += xv;
        }
        total += scenario.cost_model.congestion[d.ijm(i, j, m)].integral(load);
      }
    }
  }
  return total;
}

double eval_potential(const Scenario& scenario, const FlowConfiguration& flows) {
  return eval_potential(scenario, flows, scenario.regularization_weight);
}

} // namespace mmg

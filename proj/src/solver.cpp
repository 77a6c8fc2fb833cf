// SPDX-License-Identifier: Apache-2.0

#include "mmg/solver.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mmg/linalg.hpp"

namespace mmg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Mirrors of the verifier defaults: the barrier is driven deep enough that
// every finite capacity ends up either inside the saturation band or with a
// shadow price too small to excuse a cost gap at the check tolerance.
constexpr double kVerifierSatTol = 1e-6;
constexpr double kVerifierCostTol = 1e-4;
constexpr double kMuFloor = 1e-13;

struct ActiveVar {
  int i, j, k, m;
  std::size_t flat; // index into the ijkm tensors
  int triple;       // owning active triple
  int pair;         // owning active pair
};

struct ActiveTriple {
  int i, j, k;
  double d;
  std::size_t flat; // index into ijk tensors
  int pair;
  int var_begin, var_end;
};

struct ActivePair {
  int i, j;
  int var_begin, var_end;
  int triple_begin, triple_end;
  // local var indices per mode, for the rank-one congestion/ride curvature
  std::vector<std::vector<int>> mode_vars;
  int rows() const { return (var_end - var_begin) + (triple_end - triple_begin); }
};

enum class ConKind { Ride, Available, Displace };

struct CapacityCon {
  ConKind kind;
  int i, j, m; // j unused for Available, i unused for Displace
  double cap;
  std::vector<int> vars; // global active var indices
  int pair;              // owning pair for ride constraints, -1 for cross
};

// Static description of the active optimization problem: zero-demand triples
// and zero-capacity modes are eliminated up front.
struct Problem {
  const Scenario* scenario = nullptr;
  double reg_weight = 0.0;
  std::vector<ActiveVar> vars;
  std::vector<ActiveTriple> triples;
  std::vector<ActivePair> pairs;
  std::vector<CapacityCon> cons; // ride first, then cross constraints
  int n_cross = 0;

  int rows() const { return static_cast<int>(vars.size() + triples.size()); }
};

bool mode_blocked(const Scenario& s, int i, int j, int m) {
  if (m == 0) return false;
  const Dims& d = s.dims;
  return s.capacities.ride[d.ijm(i, j, m)] == 0.0 || s.capacities.available[d.im(i, m)] == 0.0 ||
         s.capacities.displace[d.im(j, m)] == 0.0;
}

Problem build_problem(const Scenario& s, double reg_weight) {
  Problem p;
  p.scenario = &s;
  p.reg_weight = reg_weight;
  const Dims& d = s.dims;

  std::vector<int> var_of_flat(d.size_ijkm(), -1);
  for (int i = 0; i < d.n_locations; ++i) {
    for (int j = 0; j < d.n_locations; ++j) {
      if (i == j) continue;
      const int pair_triple_begin = static_cast<int>(p.triples.size());
      const int pair_var_begin = static_cast<int>(p.vars.size());
      for (int k = 0; k < d.n_populations; ++k) {
        const double dem = s.demand[d.ijk(i, j, k)];
        if (dem <= 0.0) continue;
        ActiveTriple t;
        t.i = i;
        t.j = j;
        t.k = k;
        t.d = dem;
        t.flat = d.ijk(i, j, k);
        t.pair = static_cast<int>(p.pairs.size());
        t.var_begin = static_cast<int>(p.vars.size());
        for (int m = 0; m < d.n_modes; ++m) {
          if (mode_blocked(s, i, j, m)) continue;
          ActiveVar v;
          v.i = i;
          v.j = j;
          v.k = k;
          v.m = m;
          v.flat = d.ijkm(i, j, k, m);
          v.triple = static_cast<int>(p.triples.size());
          v.pair = t.pair;
          var_of_flat[v.flat] = static_cast<int>(p.vars.size());
          p.vars.push_back(v);
        }
        t.var_end = static_cast<int>(p.vars.size());
        p.triples.push_back(t);
      }
      if (p.triples.size() == static_cast<std::size_t>(pair_triple_begin)) continue;
      ActivePair pr;
      pr.i = i;
      pr.j = j;
      pr.triple_begin = pair_triple_begin;
      pr.triple_end = static_cast<int>(p.triples.size());
      pr.var_begin = pair_var_begin;
      pr.var_end = static_cast<int>(p.vars.size());
      pr.mode_vars.assign(d.n_modes, {});
      for (int v = pr.var_begin; v < pr.var_end; ++v)
        pr.mode_vars[p.vars[v].m].push_back(v - pr.var_begin);
      p.pairs.push_back(pr);
    }
  }

  // ride constraints (within a pair)
  for (std::size_t pi = 0; pi < p.pairs.size(); ++pi) {
    const ActivePair& pr = p.pairs[pi];
    for (int m = 0; m < d.n_modes; ++m) {
      if (pr.mode_vars[m].empty()) continue;
      const double cap = s.capacities.ride[d.ijm(pr.i, pr.j, m)];
      if (is_unbounded(cap) || cap == 0.0) continue;
      CapacityCon c;
      c.kind = ConKind::Ride;
      c.i = pr.i;
      c.j = pr.j;
      c.m = m;
      c.cap = cap;
      c.pair = static_cast<int>(pi);
      for (int lv : pr.mode_vars[m]) c.vars.push_back(pr.var_begin + lv);
      p.cons.push_back(std::move(c));
    }
  }
  // availability / displacement constraints (couple pairs)
  for (int loc = 0; loc < d.n_locations; ++loc) {
    for (int m = 1; m < d.n_modes; ++m) {
      const double ca = s.capacities.available[d.im(loc, m)];
      if (!is_unbounded(ca) && ca > 0.0) {
        CapacityCon c;
        c.kind = ConKind::Available;
        c.i = loc;
        c.j = -1;
        c.m = m;
        c.cap = ca;
        c.pair = -1;
        for (int j = 0; j < d.n_locations; ++j) {
          if (j == loc) continue;
          for (int k = 0; k < d.n_populations; ++k) {
            const int v = var_of_flat[d.ijkm(loc, j, k, m)];
            if (v >= 0) c.vars.push_back(v);
          }
        }
        if (!c.vars.empty()) {
          p.cons.push_back(std::move(c));
          p.n_cross++;
        }
      }
      const double cd = s.capacities.displace[d.im(loc, m)];
      if (!is_unbounded(cd) && cd > 0.0) {
        CapacityCon c;
        c.kind = ConKind::Displace;
        c.i = -1;
        c.j = loc;
        c.m = m;
        c.cap = cd;
        c.pair = -1;
        for (int i = 0; i < d.n_locations; ++i) {
          if (i == loc) continue;
          for (int k = 0; k < d.n_populations; ++k) {
            const int v = var_of_flat[d.ijkm(i, loc, k, m)];
            if (v >= 0) c.vars.push_back(v);
          }
        }
        if (!c.vars.empty()) {
          p.cons.push_back(std::move(c));
          p.n_cross++;
        }
      }
    }
  }
  return p;
}

// Strictly feasible start: a common share of every demand on each open
// non-walking mode, sized so each finite capacity keeps 50% headroom, with
// the rest on walking.
std::vector<double> interior_start(const Problem& p) {
  const int n_modes = p.scenario->dims.n_modes;
  double share = 0.5 / n_modes;
  for (const CapacityCon& c : p.cons) {
    double demand_sum = 0.0;
    for (int v : c.vars) demand_sum += p.triples[p.vars[v].triple].d;
    if (demand_sum > 0.0) share = std::min(share, 0.5 * c.cap / demand_sum);
  }
  share = std::max(share, 1e-250);

  std::vector<double> x(p.vars.size(), 0.0);
  for (const ActiveTriple& t : p.triples) {
    const int n_open = t.var_end - t.var_begin;
    // walking is always open, so n_open >= 1; give it the remainder
    for (int v = t.var_begin; v < t.var_end; ++v)
      x[v] = p.vars[v].m == 0 ? t.d * (1.0 - share * (n_open - 1)) : t.d * share;
  }
  return x;
}

struct IterateState {
  std::vector<double> group_load; // per (i,j,m) flat
  std::vector<double> con_load;   // per constraint
  std::vector<double> con_slack;
};

void refresh_state(const Problem& p, const std::vector<double>& x, IterateState& st) {
  const Dims& d = p.scenario->dims;
  st.group_load.assign(d.size_ijm(), 0.0);
  for (std::size_t v = 0; v < p.vars.size(); ++v) {
    const ActiveVar& av = p.vars[v];
    st.group_load[d.ijm(av.i, av.j, av.m)] += x[v];
  }
  st.con_load.assign(p.cons.size(), 0.0);
  st.con_slack.assign(p.cons.size(), 0.0);
  for (std::size_t c = 0; c < p.cons.size(); ++c) {
    double load = 0.0;
    for (int v : p.cons[c].vars) load += x[v];
    st.con_load[c] = load;
    st.con_slack[c] = p.cons[c].cap - load;
  }
}

// Potential restricted to the active variables, with an explicit weight for
// the quadratic regularizer.
double active_potential(const Problem& p, const std::vector<double>& x, const IterateState& st,
                        double reg_weight) {
  const Scenario& s = *p.scenario;
  const Dims& d = s.dims;
  double total = 0.0;
  for (std::size_t v = 0; v < p.vars.size(); ++v) {
    total += s.cost_model.constant[p.vars[v].flat] * x[v];
    if (reg_weight > 0.0) total += reg_weight * x[v] * x[v];
  }
  for (const ActivePair& pr : p.pairs)
    for (int m = 0; m < d.n_modes; ++m)
      if (!pr.mode_vars[m].empty())
        total += s.cost_model.congestion[d.ijm(pr.i, pr.j, m)].integral(st.group_load[d.ijm(pr.i, pr.j, m)]);
  return total;
}

double barrier_merit(const Problem& p, const std::vector<double>& x, const IterateState& st, double mu) {
  double merit = active_potential(p, x, st, p.reg_weight);
  for (double xv : x) merit -= mu * std::log(xv);
  for (double s : st.con_slack) merit -= mu * std::log(s);
  return merit;
}

void gradient(const Problem& p, const std::vector<double>& x, const IterateState& st, double mu,
              std::vector<double>& g) {
  const Scenario& s = *p.scenario;
  const Dims& d = s.dims;
  g.resize(p.vars.size());
  for (std::size_t v = 0; v < p.vars.size(); ++v) {
    const ActiveVar& av = p.vars[v];
    g[v] = s.cost_model.constant[av.flat] +
           s.cost_model.congestion[d.ijm(av.i, av.j, av.m)].value(st.group_load[d.ijm(av.i, av.j, av.m)]) +
           2.0 * p.reg_weight * x[v] - mu / x[v];
  }
  for (std::size_t c = 0; c < p.cons.size(); ++c) {
    const double push = mu / st.con_slack[c];
    for (int v : p.cons[c].vars) g[v] += push;
  }
}

// One damped Newton step on the equality-constrained barrier problem.
//
// Within an origin-destination pair the Hessian is diagonal plus one
// rank-one term per mode group (congestion slope and ride barriers share the
// group support, and groups are disjoint), so H^{-1} has a closed
// Sherman-Morrison form in well-scaled positive quantities; the demand
// equalities are eliminated by a tiny primal Schur complement per pair.
// Cross-pair capacity barriers (availability, displacement) are rank-one
// corrections handled with the Woodbury identity on top. The two-level
// structure avoids factoring indefinite blocks whose entries span the
// extreme scales of a nearly converged barrier iterate.
struct NewtonStep {
  std::vector<double> dx;
  std::vector<double> nu;
  double slope = 0.0;
};

namespace {

struct PairFactor {
  struct Group {
    double sigma = 0.0;
    double denom = 1.0;           // 1 + sigma * sum dinv
    std::vector<int> members;     // local vars, at most one per triple
  };
  int var_begin = 0, n_vars = 0;
  int triple_begin = 0, n_triples = 0;
  std::vector<double> dinv;  // 1 / (mu/x^2 + 2w), per local var
  std::vector<int> group_of; // membership in the pair's sigma groups, -1 if none
  std::vector<Group> groups;
  std::vector<int> triple_of; // local triple per local var
  LuFactor schur;             // A H^{-1} A^T, n_triples x n_triples

  // y = H^{-1} r, in the cancellation-free difference form
  //   y_v = dinv_v * (r_v + sigma * sum_u dinv_u (r_v - r_u)) / denom
  void apply_hinv(const std::vector<double>& r, std::vector<double>& y) const {
    for (int v = 0; v < n_vars; ++v)
      if (group_of[v] < 0) y[v] = dinv[v] * r[v];
    for (const Group& g : groups) {
      for (int v : g.members) {
        double acc = r[v];
        for (int u : g.members) acc += g.sigma * dinv[u] * (r[v] - r[u]);
        y[v] = dinv[v] * acc / g.denom;
      }
    }
  }

  // solves [H A^T; A 0][yx; yn] = [rv; rt]
  void solve(const std::vector<double>& rv, const std::vector<double>& rt, std::vector<double>& yx,
             std::vector<double>& yn, std::vector<double>& scratch) const {
    apply_hinv(rv, yx); // yx = H^{-1} rv for now
    yn.assign(n_triples, 0.0);
    for (int v = 0; v < n_vars; ++v) yn[triple_of[v]] += yx[v];
    for (int t = 0; t < n_triples; ++t) yn[t] -= rt[t];
    schur.solve(yn); // yn = S^{-1}(A H^{-1} rv - rt)
    scratch.resize(n_vars);
    for (int v = 0; v < n_vars; ++v) scratch[v] = rv[v] - yn[triple_of[v]];
    apply_hinv(scratch, yx); // yx = H^{-1}(rv - A^T yn)
  }
};

} // namespace

bool newton_direction(const Problem& p, const std::vector<double>& x, const IterateState& st, double mu,
                      const std::vector<double>& g, NewtonStep& out) {
  const Scenario& s = *p.scenario;
  const Dims& d = s.dims;
  const int n_vars = static_cast<int>(p.vars.size());

  // accumulated rank-one curvature per (i,j,m) group: congestion slope plus
  // any ride barrier on the same support
  std::vector<double> group_sigma(d.size_ijm(), 0.0);
  for (const ActivePair& pr : p.pairs)
    for (int m = 0; m < d.n_modes; ++m)
      if (!pr.mode_vars[m].empty()) {
        const std::size_t gi = d.ijm(pr.i, pr.j, m);
        group_sigma[gi] = s.cost_model.congestion[gi].derivative(st.group_load[gi]);
      }
  std::vector<const CapacityCon*> cross;
  std::vector<double> cross_sigma;
  for (std::size_t c = 0; c < p.cons.size(); ++c) {
    const double sigma = mu / (st.con_slack[c] * st.con_slack[c]);
    if (p.cons[c].pair >= 0) {
      group_sigma[d.ijm(p.cons[c].i, p.cons[c].j, p.cons[c].m)] += sigma;
    } else {
      cross.push_back(&p.cons[c]);
      cross_sigma.push_back(sigma);
    }
  }

  std::vector<PairFactor> factors(p.pairs.size());
  for (std::size_t pi = 0; pi < p.pairs.size(); ++pi) {
    const ActivePair& pr = p.pairs[pi];
    PairFactor& f = factors[pi];
    f.var_begin = pr.var_begin;
    f.n_vars = pr.var_end - pr.var_begin;
    f.triple_begin = pr.triple_begin;
    f.n_triples = pr.triple_end - pr.triple_begin;
    f.dinv.resize(f.n_vars);
    f.group_of.assign(f.n_vars, -1);
    f.triple_of.resize(f.n_vars);
    for (int lv = 0; lv < f.n_vars; ++lv) {
      const int v = pr.var_begin + lv;
      f.dinv[lv] = 1.0 / (mu / (x[v] * x[v]) + 2.0 * p.reg_weight);
      f.triple_of[lv] = p.vars[v].triple - pr.triple_begin;
    }
    for (int m = 0; m < d.n_modes; ++m) {
      const auto& group = pr.mode_vars[m];
      if (group.empty()) continue;
      const double sigma = group_sigma[d.ijm(pr.i, pr.j, m)];
      if (sigma == 0.0) continue;
      PairFactor::Group g;
      g.sigma = sigma;
      g.members = group;
      double dsum = 0.0;
      for (int lv : group) dsum += f.dinv[lv];
      g.denom = 1.0 + sigma * dsum;
      const int gidx = static_cast<int>(f.groups.size());
      for (int lv : group) f.group_of[lv] = gidx;
      f.groups.push_back(std::move(g));
    }
    // S = A H^{-1} A^T assembled in the same cancellation-free form: a group
    // member contributes dinv_v (1 + sigma * sum_{u != v} dinv_u) / denom to
    // its own triple and -dinv_v dinv_u sigma / denom across triples
    DenseMatrix schur(f.n_triples);
    for (int lv = 0; lv < f.n_vars; ++lv)
      if (f.group_of[lv] < 0) schur.at(f.triple_of[lv], f.triple_of[lv]) += f.dinv[lv];
    for (const PairFactor::Group& g : f.groups) {
      for (int lv : g.members) {
        const int t = f.triple_of[lv];
        double others = 0.0;
        for (int lu : g.members)
          if (lu != lv) others += f.dinv[lu];
        schur.at(t, t) += f.dinv[lv] * (1.0 + g.sigma * others) / g.denom;
        for (int lu : g.members) {
          if (lu == lv) continue;
          schur.at(t, f.triple_of[lu]) -= f.dinv[lv] * f.dinv[lu] * g.sigma / g.denom;
        }
      }
    }
    f.schur = LuFactor::factor(std::move(schur));
    if (f.schur.singular) return false;
  }

  std::vector<double> rhs_x(n_vars);
  for (int v = 0; v < n_vars; ++v) rhs_x[v] = -g[v];
  std::vector<double> rhs_t(p.triples.size());
  for (std::size_t t = 0; t < p.triples.size(); ++t) {
    double sum = 0.0;
    for (int v = p.triples[t].var_begin; v < p.triples[t].var_end; ++v) sum += x[v];
    rhs_t[t] = p.triples[t].d - sum;
  }

  // solves the block-diagonal system in place on (vx, vt)
  std::vector<double> lrv, lrt, lyx, lyn, scratch;
  auto block_solve = [&](std::vector<double>& vx, std::vector<double>& vt) {
    for (const PairFactor& f : factors) {
      lrv.assign(vx.begin() + f.var_begin, vx.begin() + f.var_begin + f.n_vars);
      lrt.assign(vt.begin() + f.triple_begin, vt.begin() + f.triple_begin + f.n_triples);
      lyx.resize(f.n_vars);
      f.solve(lrv, lrt, lyx, lyn, scratch);
      std::copy(lyx.begin(), lyx.end(), vx.begin() + f.var_begin);
      std::copy(lyn.begin(), lyn.end(), vt.begin() + f.triple_begin);
    }
  };

  std::vector<double> yx = rhs_x, yt = rhs_t;
  block_solve(yx, yt);

  const int nc = static_cast<int>(cross.size());
  if (nc > 0) {
    std::vector<std::vector<double>> wx(nc), wt(nc);
    for (int c = 0; c < nc; ++c) {
      wx[c].assign(n_vars, 0.0);
      wt[c].assign(p.triples.size(), 0.0);
      for (int v : cross[c]->vars) wx[c][v] = 1.0;
      block_solve(wx[c], wt[c]);
    }
    DenseMatrix cap(nc);
    std::vector<double> beta(nc, 0.0);
    for (int r = 0; r < nc; ++r) {
      for (int c = 0; c < nc; ++c) {
        double dot = 0.0;
        for (int v : cross[r]->vars) dot += wx[c][v];
        cap.at(r, c) = dot + (r == c ? 1.0 / cross_sigma[r] : 0.0);
      }
      double dot = 0.0;
      for (int v : cross[r]->vars) dot += yx[v];
      beta[r] = dot;
    }
    LuFactor cap_lu = LuFactor::factor(std::move(cap));
    if (cap_lu.singular) return false;
    cap_lu.solve(beta);
    for (int c = 0; c < nc; ++c) {
      for (int v = 0; v < n_vars; ++v) yx[v] -= wx[c][v] * beta[c];
      for (std::size_t t = 0; t < p.triples.size(); ++t) yt[t] -= wt[c][t] * beta[c];
    }
  }

  out.dx = std::move(yx);
  out.nu = std::move(yt);
  out.slope = 0.0;
  for (int v = 0; v < n_vars; ++v) out.slope += g[v] * out.dx[v];
  return true;
}

double stationarity_inf(const Problem& p, const std::vector<double>& g, const std::vector<double>& nu) {
  double worst = 0.0;
  for (std::size_t v = 0; v < p.vars.size(); ++v)
    worst = std::max(worst, std::abs(g[v] + nu[p.vars[v].triple]));
  return worst;
}

// Largest step keeping x and all slacks strictly positive, with the usual
// 0.99 fraction-to-boundary margin.
double max_step(const Problem& p, const std::vector<double>& x, const IterateState& st,
                const std::vector<double>& dx) {
  double tau = 1.0;
  for (std::size_t v = 0; v < x.size(); ++v)
    if (dx[v] < 0.0) tau = std::min(tau, 0.99 * x[v] / -dx[v]);
  for (std::size_t c = 0; c < p.cons.size(); ++c) {
    double dload = 0.0;
    for (int v : p.cons[c].vars) dload += dx[v];
    if (dload > 0.0) tau = std::min(tau, 0.99 * st.con_slack[c] / dload);
  }
  return tau;
}

struct BarrierResult {
  std::vector<double> x;
  std::vector<double> nu;
  double final_mu = 0.0;
  std::vector<BarrierStage> trace;
};

BarrierResult run_barrier(const Problem& p, const SolveOptions& opt) {
  BarrierResult res;
  res.x = interior_start(p);
  res.nu.assign(p.triples.size(), 0.0);

  const std::size_t m_ineq = p.vars.size() + p.cons.size();
  const double mu_target = opt.kkt_tolerance / (10.0 * static_cast<double>(m_ineq));
  // the barrier continues past the duality-gap target until every finite
  // capacity is classified: saturated within the verifier band, or shadow
  // price too small to block anything at the cost tolerance
  auto saturation_settled = [&](const IterateState& state, double mu_now) {
    for (std::size_t c = 0; c < p.cons.size(); ++c) {
      const double slack = state.con_slack[c];
      if (slack <= 0.5 * kVerifierSatTol * p.cons[c].cap) continue;
      if (mu_now / slack <= 0.25 * kVerifierCostTol) continue;
      return false;
    }
    return true;
  };

  IterateState st;
  std::vector<double> g;
  std::vector<double> x_trial;
  IterateState st_trial;
  double mu = opt.barrier_initial_mu;

  auto demand_residual_inf = [&](const std::vector<double>& x) {
    double worst = 0.0;
    for (const ActiveTriple& t : p.triples) {
      double sum = 0.0;
      for (int v = t.var_begin; v < t.var_end; ++v) sum += x[v];
      worst = std::max(worst, std::abs(sum - t.d));
    }
    return worst;
  };

  for (int stage = 0; stage < opt.max_outer_iterations; ++stage) {
    const double inner_tol = std::max(0.5 * opt.kkt_tolerance, std::min(0.1 * mu, 1.0));
    int steps = 0;
    int unmeasured_streak = 0;
    std::vector<double> step_decreases;
    refresh_state(p, res.x, st);
    double merit = barrier_merit(p, res.x, st, mu);
    for (; steps < opt.newton_max_steps; ++steps) {
      gradient(p, res.x, st, mu, g);
      if (stationarity_inf(p, g, res.nu) <= inner_tol) break;
      NewtonStep step;
      if (!newton_direction(p, res.x, st, mu, g, step)) break;
      double tau = max_step(p, res.x, st, step.dx);
      // Once the Newton decrement falls below the rounding noise of the
      // merit, the Armijo test (and even the sign of the computed slope) is
      // meaningless; plain capped Newton steps are contractive near the
      // central path, so take them as-is with a streak guard.
      const bool rounding_limited = -step.slope * tau <= 1e-12 * (1.0 + std::abs(merit));
      unmeasured_streak = rounding_limited ? unmeasured_streak + 1 : 0;
      if (!rounding_limited && !(step.slope < 0.0)) break; // defensive; H is positive definite
      bool accepted = false;
      const double merit_before = merit;
      const double eq_before = demand_residual_inf(res.x);
      for (int backtrack = 0; backtrack < 60 && tau > 1e-14; ++backtrack) {
        x_trial = res.x;
        for (std::size_t v = 0; v < x_trial.size(); ++v) x_trial[v] += tau * step.dx[v];
        refresh_state(p, x_trial, st_trial);
        bool admissible = true;
        for (double xv : x_trial)
          if (!(xv > 0.0)) admissible = false;
        for (double sv : st_trial.con_slack)
          if (!(sv > 0.0)) admissible = false;
        // the merit is blind to the demand equalities; a step computed from a
        // degraded linear solve must not be allowed to drift off them
        if (admissible && demand_residual_inf(x_trial) > std::max(1.2 * eq_before, 1e-9))
          admissible = false;
        if (admissible) {
          const double trial_merit = barrier_merit(p, x_trial, st_trial, mu);
          if (rounding_limited || trial_merit <= merit + 1e-4 * tau * step.slope) {
            res.x.swap(x_trial);
            st = st_trial;
            merit = trial_merit;
            accepted = true;
            break;
          }
        }
        tau *= 0.5;
      }
      res.nu = step.nu;
      if (!accepted) break;
      if (!rounding_limited) step_decreases.push_back(merit_before - merit);
      if (unmeasured_streak >= 30) {
        // rounding-limited; the recovered KKT certificate decides convergence
        ++steps;
        break;
      }
    }
    BarrierStage rec;
    rec.mu = mu;
    rec.newton_steps = steps;
    rec.potential = active_potential(p, res.x, st, 0.0);
    rec.merit = merit;
    rec.step_decreases = std::move(step_decreases);
    res.trace.push_back(rec);
    if (mu <= mu_target && (saturation_settled(st, mu) || mu <= kMuFloor)) {
      res.final_mu = mu;
      return res;
    }
    if (mu <= mu_target) {
      mu *= opt.barrier_shrink; // keep shrinking until saturation settles
    } else {
      mu = std::max(mu * opt.barrier_shrink, mu_target);
    }
    mu = std::max(mu, kMuFloor);
  }
  res.final_mu = mu;
  return res;
}

} // namespace

void SolveOptions::validate() const {
  if (!(kkt_tolerance > 0.0)) throw std::invalid_argument("kkt_tolerance must be > 0");
  if (max_outer_iterations <= 0) throw std::invalid_argument("max_outer_iterations must be > 0");
  if (!(barrier_initial_mu > 0.0)) throw std::invalid_argument("barrier_initial_mu must be > 0");
  if (!(barrier_shrink > 0.0 && barrier_shrink < 1.0)) throw std::invalid_argument("barrier_shrink must lie in (0,1)");
  if (newton_max_steps <= 0) throw std::invalid_argument("newton_max_steps must be > 0");
  if (!(regularization_weight >= 0.0)) throw std::invalid_argument("regularization_weight must be >= 0");
}

const char* to_string(SolveStatus status) {
  switch (status) {
    case SolveStatus::Converged: return "Converged";
    case SolveStatus::IterationLimit: return "IterationLimit";
    case SolveStatus::Infeasible: return "Infeasible";
  }
  return "Unknown";
}

DualVariables DualVariables::zeros(const Dims& dims) {
  DualVariables d;
  d.available.assign(static_cast<std::size_t>(dims.n_locations) * dims.n_modes, 0.0);
  d.displace.assign(static_cast<std::size_t>(dims.n_locations) * dims.n_modes, 0.0);
  d.ride.assign(dims.size_ijm(), 0.0);
  d.nonneg.assign(dims.size_ijkm(), 0.0);
  d.demand.assign(dims.size_ijk(), 0.0);
  return d;
}

SolveReport solve_equilibrium(const Scenario& scenario, const SolveOptions& options) {
  options.validate();
  SolveReport report;
  report.flows = FlowConfiguration::zeros(scenario.dims);
  report.duals = DualVariables::zeros(scenario.dims);
  try {
    scenario.validate();
  } catch (const std::exception& e) {
    report.status = SolveStatus::Infeasible;
    report.message = e.what();
    return report;
  }

  const Problem p = build_problem(scenario, options.regularization_weight);
  if (p.vars.empty()) {
    report.status = SolveStatus::Converged;
    report.potential = 0.0;
    report.kkt_residual = 0.0;
    return report;
  }

  BarrierResult br = run_barrier(p, options);

  // Boundary crossover: a constraint the barrier left near its bound but not
  // inside the saturation band is closed exactly, shifting the deficit of
  // each member variable from a capacity-free mode of the same triple. The
  // multiplier is then recovered by the least-squares fit below instead of
  // the (meaningless) mu/slack.
  {
    std::vector<char> var_in_finite_con(p.vars.size(), 0);
    std::vector<int> cons_per_var(p.vars.size(), 0);
    for (const CapacityCon& con : p.cons)
      for (int v : con.vars) {
        var_in_finite_con[v] = 1;
        cons_per_var[v] += 1;
      }
    for (std::size_t c = 0; c < p.cons.size(); ++c) {
      double load = 0.0;
      for (int v : p.cons[c].vars) load += br.x[v];
      const double slack = p.cons[c].cap - load;
      if (!(slack > 0.0) || slack > 1e-4 * std::max(1.0, p.cons[c].cap)) continue;
      if (load <= 0.0) continue;
      // members must not sit in overlapping capacity constraints, and every
      // member needs a free-mode donor with enough mass
      bool snappable = true;
      std::vector<int> donor(p.cons[c].vars.size(), -1);
      for (std::size_t idx = 0; idx < p.cons[c].vars.size() && snappable; ++idx) {
        const int v = p.cons[c].vars[idx];
        if (cons_per_var[v] > 1) {
          snappable = false;
          break;
        }
        const double need = slack * br.x[v] / load;
        const ActiveTriple& t = p.triples[p.vars[v].triple];
        int best = -1;
        for (int u = t.var_begin; u < t.var_end; ++u) {
          if (u == v || var_in_finite_con[u]) continue;
          if (br.x[u] > 2.0 * need && (best < 0 || br.x[u] > br.x[best])) best = u;
        }
        if (best < 0) snappable = false;
        donor[idx] = best;
      }
      if (!snappable) continue;
      for (std::size_t idx = 0; idx < p.cons[c].vars.size(); ++idx) {
        const int v = p.cons[c].vars[idx];
        const double need = slack * br.x[v] / load;
        br.x[v] += need;
        br.x[donor[idx]] -= need;
      }
    }
  }

  // exact projection onto the demand simplices
  for (const ActiveTriple& t : p.triples) {
    double sum = 0.0;
    for (int v = t.var_begin; v < t.var_end; ++v) sum += br.x[v];
    const double scale = t.d / sum;
    for (int v = t.var_begin; v < t.var_end; ++v) br.x[v] *= scale;
  }

  for (std::size_t v = 0; v < p.vars.size(); ++v) report.flows.x[p.vars[v].flat] = br.x[v];

  IterateState st;
  refresh_state(p, br.x, st);
  const Dims& d = scenario.dims;

  // Dual recovery. Near-binding capacity multipliers are hypersensitive to
  // the slack at double precision (lambda = mu/s with s of order 1e-11), so
  // instead of reading them off the barrier they are refit, together with
  // the demand multipliers, by mass-weighted least squares on the
  // stationarity equations. Inactive constraints keep their barrier value.
  const double mu = br.final_mu;
  std::vector<double> lambda(p.cons.size());
  std::vector<char> active(p.cons.size(), 0);
  for (std::size_t c = 0; c < p.cons.size(); ++c) {
    // mu/slack is unreliable when the slack approaches the resolution of the
    // load (the exact demand projection can even push a binding load past
    // the bound), and inaccurate when the multiplier is large but the inner
    // polish stopped at the rounding wall; both cases go through the refit
    if (st.con_slack[c] <= 1e-7 * std::max(1.0, p.cons[c].cap) || mu / st.con_slack[c] >= 1e-3) {
      active[c] = 1;
      lambda[c] = 0.0;
    } else {
      lambda[c] = mu / st.con_slack[c];
    }
  }
  {
    const int n_triples = static_cast<int>(p.triples.size());

    // stationarity targets b_v = -(cost terms) + mu/x - inactive lambdas
    std::vector<double> b(p.vars.size());
    for (std::size_t v = 0; v < p.vars.size(); ++v) {
      const ActiveVar& av = p.vars[v];
      b[v] = -(scenario.cost_model.constant[av.flat] +
               scenario.cost_model.congestion[d.ijm(av.i, av.j, av.m)].value(st.group_load[d.ijm(av.i, av.j, av.m)]) +
               2.0 * p.reg_weight * br.x[v]) +
             mu / br.x[v];
    }
    for (std::size_t c = 0; c < p.cons.size(); ++c)
      if (!active[c])
        for (int v : p.cons[c].vars) b[v] -= lambda[c];

    std::vector<double> weight_t(n_triples, 0.0), rhs_t(n_triples, 0.0);
    for (std::size_t v = 0; v < p.vars.size(); ++v) {
      weight_t[p.vars[v].triple] += br.x[v];
      rhs_t[p.vars[v].triple] += br.x[v] * b[v];
    }

    // weighted least squares over (nu, lambda_active), with the diagonal nu
    // block eliminated; constraints whose multiplier comes out negative are
    // dropped and the fit repeats (small non-negative least squares)
    std::vector<int> refit;
    for (std::size_t c = 0; c < p.cons.size(); ++c)
      if (active[c]) refit.push_back(static_cast<int>(c));
    for (int round = 0; round <= static_cast<int>(p.cons.size()); ++round) {
      const int n_refit = static_cast<int>(refit.size());
      if (n_refit == 0) break;
      std::vector<double> m_flat(static_cast<std::size_t>(n_triples) * n_refit, 0.0);
      std::vector<double> rhs_r(n_refit, 0.0);
      for (int r = 0; r < n_refit; ++r)
        for (int v : p.cons[refit[r]].vars) {
          m_flat[static_cast<std::size_t>(p.vars[v].triple) * n_refit + r] += br.x[v];
          rhs_r[r] += br.x[v] * b[v];
        }
      DenseMatrix schur(n_refit);
      for (int r = 0; r < n_refit; ++r)
        for (int r2 = r; r2 < n_refit; ++r2) {
          // mass of the variables shared by the two constraints
          const auto& vr = p.cons[refit[r]].vars;
          const auto& vr2 = p.cons[refit[r2]].vars;
          double dot = 0.0;
          std::size_t a = 0, bb = 0;
          while (a < vr.size() && bb < vr2.size()) {
            if (vr[a] == vr2[bb]) {
              dot += br.x[vr[a]];
              ++a;
              ++bb;
            } else if (vr[a] < vr2[bb]) {
              ++a;
            } else {
              ++bb;
            }
          }
          schur.at(r, r2) = dot;
          schur.at(r2, r) = dot;
        }
      std::vector<double> rhs_s = rhs_r;
      for (int t = 0; t < n_triples; ++t) {
        if (weight_t[t] <= 0.0) continue;
        for (int r = 0; r < n_refit; ++r) {
          const double mtr = m_flat[static_cast<std::size_t>(t) * n_refit + r];
          if (mtr == 0.0) continue;
          for (int r2 = 0; r2 < n_refit; ++r2)
            schur.at(r, r2) -= mtr * m_flat[static_cast<std::size_t>(t) * n_refit + r2] / weight_t[t];
          rhs_s[r] -= mtr * rhs_t[t] / weight_t[t];
        }
      }
      for (int r = 0; r < n_refit; ++r) schur.at(r, r) += 1e-10 * (1.0 + schur.at(r, r));
      LuFactor lu = LuFactor::factor(std::move(schur));
      if (lu.singular) break;
      lu.solve(rhs_s);
      std::vector<int> kept;
      for (int r = 0; r < n_refit; ++r) {
        if (rhs_s[r] >= 0.0) {
          lambda[refit[r]] = rhs_s[r];
          kept.push_back(refit[r]);
        } else {
          lambda[refit[r]] = 0.0;
        }
      }
      if (static_cast<int>(kept.size()) == n_refit) break;
      for (int r : refit) lambda[r] = 0.0;
      refit.swap(kept);
    }

    // demand multipliers given the refit lambdas
    std::vector<double> lam_load_t(n_triples, 0.0);
    for (int r : refit)
      for (int v : p.cons[r].vars) lam_load_t[p.vars[v].triple] += br.x[v] * lambda[r];
    for (int t = 0; t < n_triples; ++t)
      if (weight_t[t] > 0.0) br.nu[t] = (rhs_t[t] - lam_load_t[t]) / weight_t[t];
  }

  for (std::size_t c = 0; c < p.cons.size(); ++c) {
    const CapacityCon& con = p.cons[c];
    switch (con.kind) {
      case ConKind::Ride: report.duals.ride[d.ijm(con.i, con.j, con.m)] = lambda[c]; break;
      case ConKind::Available: report.duals.available[d.im(con.i, con.m)] = lambda[c]; break;
      case ConKind::Displace: report.duals.displace[d.im(con.j, con.m)] = lambda[c]; break;
    }
  }
  for (std::size_t t = 0; t < p.triples.size(); ++t) report.duals.demand[p.triples[t].flat] = br.nu[t];

  // z completes stationarity exactly wherever the reduced cost is
  // non-negative; clipping at zero leaves only the (tiny) fit residual
  {
    std::vector<double> lam_sum_v(p.vars.size(), 0.0);
    for (std::size_t c = 0; c < p.cons.size(); ++c)
      for (int v : p.cons[c].vars) lam_sum_v[v] += lambda[c];
    for (std::size_t v = 0; v < p.vars.size(); ++v) {
      const ActiveVar& av = p.vars[v];
      const double completion =
          scenario.cost_model.constant[av.flat] +
          scenario.cost_model.congestion[d.ijm(av.i, av.j, av.m)].value(st.group_load[d.ijm(av.i, av.j, av.m)]) +
          2.0 * p.reg_weight * br.x[v] + br.nu[av.triple] + lam_sum_v[v];
      report.duals.nonneg[av.flat] = std::max(0.0, completion);
    }
  }

  // complete the certificate for modes eliminated by zero capacities: pick
  // multipliers for the zero-capacity constraints that make the reduced
  // costs of their variables non-negative, then set z to those reduced costs
  {
    auto reduced = [&](int i, int j, int k, int m) {
      double r = scenario.cost_model.constant[d.ijkm(i, j, k, m)] +
                 scenario.cost_model.congestion[d.ijm(i, j, m)].value(report.flows.group_load(i, j, m)) +
                 report.duals.demand[d.ijk(i, j, k)];
      const double cr = scenario.capacities.ride[d.ijm(i, j, m)];
      if (!is_unbounded(cr)) r += report.duals.ride[d.ijm(i, j, m)];
      const double ca = scenario.capacities.available[d.im(i, m)];
      if (!is_unbounded(ca)) r += report.duals.available[d.im(i, m)];
      const double cd = scenario.capacities.displace[d.im(j, m)];
      if (!is_unbounded(cd)) r += report.duals.displace[d.im(j, m)];
      return r;
    };
    auto lift = [&](double& lambda, auto&& touches) {
      double need = 0.0;
      for (int i = 0; i < d.n_locations; ++i)
        for (int j = 0; j < d.n_locations; ++j) {
          if (i == j) continue;
          for (int k = 0; k < d.n_populations; ++k)
            for (int m = 1; m < d.n_modes; ++m)
              if (touches(i, j, m) && scenario.demand[d.ijk(i, j, k)] > 0.0 && mode_blocked(scenario, i, j, m))
                need = std::max(need, -reduced(i, j, k, m));
        }
      if (need > 0.0) lambda += need; // reduced() reads the bumped multiplier from now on
    };
    for (int i = 0; i < d.n_locations; ++i)
      for (int m = 1; m < d.n_modes; ++m) {
        if (scenario.capacities.available[d.im(i, m)] == 0.0)
          lift(report.duals.available[d.im(i, m)],
               [&](int vi, int, int vm) { return vi == i && vm == m; });
        if (scenario.capacities.displace[d.im(i, m)] == 0.0)
          lift(report.duals.displace[d.im(i, m)],
               [&](int, int vj, int vm) { return vj == i && vm == m; });
      }
    for (int i = 0; i < d.n_locations; ++i)
      for (int j = 0; j < d.n_locations; ++j) {
        if (i == j) continue;
        for (int m = 1; m < d.n_modes; ++m)
          if (scenario.capacities.ride[d.ijm(i, j, m)] == 0.0)
            lift(report.duals.ride[d.ijm(i, j, m)],
                 [&](int vi, int vj, int vm) { return vi == i && vj == j && vm == m; });
      }
    for (int i = 0; i < d.n_locations; ++i)
      for (int j = 0; j < d.n_locations; ++j) {
        if (i == j) continue;
        for (int k = 0; k < d.n_populations; ++k) {
          if (scenario.demand[d.ijk(i, j, k)] <= 0.0) continue;
          for (int m = 0; m < d.n_modes; ++m)
            if (mode_blocked(scenario, i, j, m))
              report.duals.nonneg[d.ijkm(i, j, k, m)] = std::max(0.0, reduced(i, j, k, m));
        }
      }
  }

  report.iterations = std::move(br.trace);
  report.potential = eval_potential(scenario, report.flows, 0.0);
  report.kkt_residual = kkt_residual(scenario, report.flows, report.duals, options.regularization_weight);
  // the recomputed certificate is the sole convergence criterion
  report.status = report.kkt_residual <= options.kkt_tolerance ? SolveStatus::Converged
                                                               : SolveStatus::IterationLimit;
  return report;
}

SolveReport solve_decomposed(const Scenario& scenario, const SolveOptions& options) {
  options.validate();
  scenario.validate();
  const Dims& d = scenario.dims;
  for (int loc = 0; loc < d.n_locations; ++loc)
    for (int m = 0; m < d.n_modes; ++m)
      if (!is_unbounded(scenario.capacities.available[d.im(loc, m)]) ||
          !is_unbounded(scenario.capacities.displace[d.im(loc, m)]))
        throw std::invalid_argument("solve_decomposed requires unbounded availability and displacement capacities");

  SolveReport report;
  report.flows = FlowConfiguration::zeros(d);
  report.duals = DualVariables::zeros(d);
  report.status = SolveStatus::Converged;

  for (int i = 0; i < d.n_locations; ++i) {
    for (int j = 0; j < d.n_locations; ++j) {
      if (i == j) continue;
      bool any = false;
      for (int k = 0; k < d.n_populations; ++k) any = any || scenario.demand[d.ijk(i, j, k)] > 0.0;
      if (!any) continue;

      Dims sub_dims{2, d.n_populations, d.n_modes};
      Scenario sub;
      sub.dims = sub_dims;
      sub.demand.assign(sub_dims.size_ijk(), 0.0);
      sub.capacities = Capacities::unbounded(sub_dims);
      sub.cost_model = CostModel::zeros(sub_dims);
      sub.window_hours = scenario.window_hours;
      for (int k = 0; k < d.n_populations; ++k)
        sub.demand[sub_dims.ijk(0, 1, k)] = scenario.demand[d.ijk(i, j, k)];
      for (int m = 0; m < d.n_modes; ++m) {
        sub.capacities.ride[sub_dims.ijm(0, 1, m)] = scenario.capacities.ride[d.ijm(i, j, m)];
        sub.cost_model.congestion[sub_dims.ijm(0, 1, m)] = scenario.cost_model.congestion[d.ijm(i, j, m)];
        for (int k = 0; k < d.n_populations; ++k)
          sub.cost_model.constant[sub_dims.ijkm(0, 1, k, m)] = scenario.cost_model.constant[d.ijkm(i, j, k, m)];
      }

      SolveReport sub_report = solve_equilibrium(sub, options);
      if (!sub_report.converged() && report.status == SolveStatus::Converged) report.status = sub_report.status;
      for (int k = 0; k < d.n_populations; ++k) {
        report.duals.demand[d.ijk(i, j, k)] = sub_report.duals.demand[sub_dims.ijk(0, 1, k)];
        for (int m = 0; m < d.n_modes; ++m) {
          report.flows.x[d.ijkm(i, j, k, m)] = sub_report.flows.x[sub_dims.ijkm(0, 1, k, m)];
          report.duals.nonneg[d.ijkm(i, j, k, m)] = sub_report.duals.nonneg[sub_dims.ijkm(0, 1, k, m)];
        }
      }
      for (int m = 0; m < d.n_modes; ++m)
        report.duals.ride[d.ijm(i, j, m)] = sub_report.duals.ride[sub_dims.ijm(0, 1, m)];
      for (const BarrierStage& st : sub_report.iterations) report.iterations.push_back(st);
    }
  }

  report.potential = eval_potential(scenario, report.flows, 0.0);
  report.kkt_residual = kkt_residual(scenario, report.flows, report.duals, options.regularization_weight);
  if (report.status == SolveStatus::Converged && report.kkt_residual > options.kkt_tolerance)
    report.status = SolveStatus::IterationLimit;
  return report;
}

double kkt_residual(const Scenario& scenario, const FlowConfiguration& flows, const DualVariables& duals,
                    double regularization_weight) {
  if (!(scenario.dims == flows.dims)) throw std::invalid_argument("flow dimensions disagree with scenario");
  const Dims& d = scenario.dims;
  double worst = 0.0;
  auto bump = [&](double v) { worst = std::max(worst, std::abs(v)); };

  std::vector<double> load(d.size_ijm(), 0.0);
  for (int i = 0; i < d.n_locations; ++i)
    for (int j = 0; j < d.n_locations; ++j)
      for (int m = 0; m < d.n_modes; ++m)
        if (i != j) load[d.ijm(i, j, m)] = flows.group_load(i, j, m);

  for (int i = 0; i < d.n_locations; ++i) {
    for (int j = 0; j < d.n_locations; ++j) {
      if (i == j) continue;
      for (int k = 0; k < d.n_populations; ++k) {
        const double dem = scenario.demand[d.ijk(i, j, k)];
        double served = 0.0;
        for (int m = 0; m < d.n_modes; ++m) served += flows.x[d.ijkm(i, j, k, m)];
        bump(served - dem);
        if (dem == 0.0) continue; // the triple has no decision variables
        for (int m = 0; m < d.n_modes; ++m) {
          const std::size_t f = d.ijkm(i, j, k, m);
          const double xv = flows.x[f];
          double stat = scenario.cost_model.constant[f] +
                        scenario.cost_model.congestion[d.ijm(i, j, m)].value(load[d.ijm(i, j, m)]) +
                        2.0 * regularization_weight * xv + duals.demand[d.ijk(i, j, k)] - duals.nonneg[f];
          if (!is_unbounded(scenario.capacities.ride[d.ijm(i, j, m)])) stat += duals.ride[d.ijm(i, j, m)];
          if (!is_unbounded(scenario.capacities.available[d.im(i, m)])) stat += duals.available[d.im(i, m)];
          if (!is_unbounded(scenario.capacities.displace[d.im(j, m)])) stat += duals.displace[d.im(j, m)];
          bump(stat);
          if (xv < 0.0) bump(xv);
          if (duals.nonneg[f] < 0.0) bump(duals.nonneg[f]);
          bump(duals.nonneg[f] * xv);
        }
      }
    }
  }

  auto capacity_terms = [&](double cap, double used, double lambda) {
    if (is_unbounded(cap)) return;
    if (used > cap) bump(used - cap);
    if (lambda < 0.0) bump(lambda);
    bump(lambda * (cap - used));
  };
  for (int i = 0; i < d.n_locations; ++i) {
    for (int m = 0; m < d.n_modes; ++m) {
      double departing = 0.0, arriving = 0.0;
      for (int j = 0; j < d.n_locations; ++j) {
        if (j == i) continue;
        departing += load[d.ijm(i, j, m)];
        arriving += load[d.ijm(j, i, m)];
      }
      capacity_terms(scenario.capacities.available[d.im(i, m)], departing, duals.available[d.im(i, m)]);
      capacity_terms(scenario.capacities.displace[d.im(i, m)], arriving, duals.displace[d.im(i, m)]);
    }
  }
  for (int i = 0; i < d.n_locations; ++i)
    for (int j = 0; j < d.n_locations; ++j)
      for (int m = 0; m < d.n_modes; ++m)
        if (i != j)
          capacity_terms(scenario.capacities.ride[d.ijm(i, j, m)], load[d.ijm(i, j, m)],
                         duals.ride[d.ijm(i, j, m)]);

  return worst;
}

} // namespace mmg

// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one hard pass/fail line per criterion, with soft
// (calibration-sensitive) comparisons logged as [soft] lines that do not
// affect the exit code. Tolerances are fixed here, not configurable.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include "mmg/metrics.hpp"
#include "mmg/rng.hpp"
#include "mmg/scenario_io.hpp"
#include "mmg/solver.hpp"
#include "mmg/stakeholder_game.hpp"
#include "mmg/verifier.hpp"
#include "support/grid_oracle.hpp"
#include "support/instances.hpp"

namespace fs = std::filesystem;
using namespace mmg;

namespace {

int failures = 0;

void report(int criterion, const char* name, bool pass, const std::string& detail) {
  std::printf("criterion %2d %-28s %s  %s\n", criterion, name, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

void soft(const std::string& what, bool within, const std::string& detail) {
  std::printf("  [soft] %-34s %s  %s\n", what.c_str(), within ? "in-window" : "OUT-OF-WINDOW", detail.c_str());
  std::fflush(stdout);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int worker_count() {
  if (const char* env = std::getenv("MMG_WORKERS")) {
    const int req = std::atoi(env);
    if (req > 0) return req;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// --------------------------------------------------------------------------

void criterion_1_reference_instance() {
  const Scenario s = testing::capacitated_three_mode_pair();
  const auto t0 = std::chrono::steady_clock::now();
  const SolveReport r = solve_equilibrium(s);
  const double secs = elapsed_s(t0);
  const double pop2_flow = r.flows.at(0, 1, 1, 1);
  const bool pass = r.converged() && std::abs(pop2_flow - 1.0) <= 1e-3 &&
                    std::abs(r.potential - 3.5) <= 1e-4 && secs < 0.1;
  report(1, "reference instance", pass,
         "potential=" + fmt(r.potential) + " pop2_flow=" + fmt(pop2_flow) + " time=" + fmt(secs) + "s");
}

void criterion_2_converse_failure() {
  const Scenario s = testing::capacitated_three_mode_pair();
  const auto equilibria = brute_force_equilibria(s, 0.25);
  double best_above = 0.0;
  int above = 0;
  for (const auto& e : equilibria) {
    const double value = eval_potential(s, e);
    if (value > 3.5 + 1e-3 && check_equilibrium(s, e).is_equilibrium) {
      ++above;
      best_above = std::max(best_above, value);
    }
  }
  report(2, "converse failure", above > 0,
         "equilibria=" + std::to_string(equilibria.size()) + " above_optimum=" + std::to_string(above) +
             " max_potential=" + fmt(best_above));
}

void criterion_3_non_uniqueness() {
  const Scenario s = testing::identical_linear_modes_pair();
  const auto equilibria = brute_force_equilibria(s, 0.5);
  bool costs_ok = !equilibria.empty();
  for (const auto& e : equilibria)
    for (int k = 0; k < 2 && costs_ok; ++k)
      for (int m = 0; m < 2 && costs_ok; ++m)
        if (e.at(0, 1, k, m) > 1e-9)
          costs_ok = std::abs(eval_cost(s.cost_model, 0, 1, k, m, e.group_load(0, 1, m)) - 2.0) <= 1e-4;

  SolveOptions reg;
  reg.regularization_weight = 0.001;
  const SolveReport r = solve_equilibrium(s, reg);
  bool symmetric = r.converged();
  for (int k = 0; k < 2; ++k)
    for (int m = 0; m < 2; ++m) symmetric = symmetric && std::abs(r.flows.at(0, 1, k, m) - 1.0) <= 1e-3;
  report(3, "non-uniqueness", costs_ok && symmetric,
         "oracle_equilibria=" + std::to_string(equilibria.size()) +
             " symmetric_split=" + std::string(symmetric ? "yes" : "no"));
}

void criterion_4_theorem_suite(std::vector<Scenario>& instances, std::vector<SolveReport>& reports) {
  SplitMix64 rng(987654321);
  int converged = 0, verified = 0, matched = 0;
  double worst_gap = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    instances.push_back(testing::random_small_instance(rng));
    const Scenario& s = instances.back();
    reports.push_back(solve_equilibrium(s));
    const SolveReport& r = reports.back();
    if (!r.converged()) continue;
    ++converged;
    if (check_equilibrium(s, r.flows, 1e-4).is_equilibrium) ++verified;
    const double oracle = testing::grid_min_potential(s, 0.01);
    const double gap = std::abs(r.potential - oracle);
    worst_gap = std::max(worst_gap, gap);
    if (gap <= 1e-3) ++matched;
  }
  const bool pass = converged == 200 && verified == 200 && matched == 200;
  report(4, "equilibrium theorem suite", pass,
         "converged=" + std::to_string(converged) + "/200 verified=" + std::to_string(verified) +
             " oracle_matched=" + std::to_string(matched) + " worst_gap=" + fmt(worst_gap));
}

void criterion_5_decomposition() {
  SplitMix64 rng(1357911);
  int agree = 0, verified = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Scenario s = testing::random_uncapacitated_instance(rng, 4);
    const SolveReport full = solve_equilibrium(s);
    const SolveReport split = solve_decomposed(s);
    if (!full.converged() || !split.converged()) continue;
    const double gap = std::abs(full.potential - split.potential);
    worst = std::max(worst, gap);
    if (gap <= 1e-6) ++agree;
    if (check_equilibrium(s, full.flows).is_equilibrium && check_equilibrium(s, split.flows).is_equilibrium)
      ++verified;
  }
  report(5, "decomposition agreement", agree == 50 && verified == 50,
         "agree=" + std::to_string(agree) + "/50 verified=" + std::to_string(verified) +
             " worst_gap=" + fmt(worst));
}

void criterion_6_kkt_and_gradients(const std::vector<Scenario>& instances,
                                   const std::vector<SolveReport>& reports) {
  // finite-difference gradient of the potential against eval_cost
  SplitMix64 rng(24681012);
  int grad_ok = 0, grad_total = 0;
  const Scenario s = testing::capacitated_three_mode_pair();
  const double h = 1e-6;
  while (grad_total < 100) {
    FlowConfiguration f = FlowConfiguration::zeros(s.dims);
    for (int k = 0; k < 2; ++k) {
      double left = s.demand_at(0, 1, k);
      for (int m = 0; m < 2; ++m) {
        const double part = left * rng.next_unit();
        f.at(0, 1, k, m) = part;
        left -= part;
      }
      f.at(0, 1, k, 2) = left;
    }
    const int k = static_cast<int>(rng.next_u64() % 2);
    const int m = static_cast<int>(rng.next_u64() % 3);
    if (f.at(0, 1, k, m) < 2.0 * h) continue;
    ++grad_total;
    FlowConfiguration up = f, down = f;
    up.at(0, 1, k, m) += h;
    down.at(0, 1, k, m) -= h;
    const double fd = (eval_potential(s, up) - eval_potential(s, down)) / (2.0 * h);
    const double cost = eval_cost(s.cost_model, 0, 1, k, m, f.group_load(0, 1, m));
    if (std::abs(fd - cost) <= 1e-4 * std::max(1.0, std::abs(cost))) ++grad_ok;
  }

  int kkt_ok = 0, converged = 0;
  double worst = 0.0;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    if (!reports[i].converged()) continue;
    ++converged;
    const double residual = kkt_residual(instances[i], reports[i].flows, reports[i].duals);
    worst = std::max(worst, residual);
    if (residual <= 1e-6) ++kkt_ok;
  }
  report(6, "gradient and kkt checks", grad_ok == 100 && kkt_ok == converged,
         "gradients=" + std::to_string(grad_ok) + "/100 kkt_ok=" + std::to_string(kkt_ok) + "/" +
             std::to_string(converged) + " worst_kkt=" + fmt(worst));
}

void criterion_7_city_scenario(const std::string& data_dir) {
  const ScenarioBundle bundle = load_scenario_file(data_dir + "/sioux_falls.json");
  SolveOptions options;
  options.regularization_weight = bundle.scenario.regularization_weight;
  const auto t0 = std::chrono::steady_clock::now();
  const SolveReport r = solve_equilibrium(bundle.scenario, options);
  const double secs = elapsed_s(t0);

  bool split_sums = false, capacities_ok = false, ordering = false;
  double split_sum = 0.0;
  MetricsReport metrics;
  if (r.converged()) {
    metrics = compute_metrics(bundle.scenario, r.flows);
    for (double v : metrics.modal_split) split_sum += v;
    split_sums = std::abs(split_sum - 1.0) <= 1e-9;
    capacities_ok = check_feasible(bundle.scenario, r.flows).feasible;
    // populations: students, business, leisure (bundled order)
    ordering = metrics.avg_cost_usd[1] > metrics.avg_cost_usd[0] &&
               metrics.avg_cost_usd[0] > metrics.avg_cost_usd[2];
  }
  const bool pass = r.converged() && secs <= 60.0 && split_sums && capacities_ok && ordering;
  report(7, "city scenario", pass,
         std::string(to_string(r.status)) + " time=" + fmt(secs) + "s split_sum=" + fmt(split_sum) +
             " ordering=" + (ordering ? "business>students>leisure" : "violated"));
  if (r.converged()) {
    soft("bus share 0.499 +/- 0.10", std::abs(metrics.modal_split[1] - 0.499) <= 0.10,
         fmt(metrics.modal_split[1]));
    soft("amod share 0.173 +/- 0.10", std::abs(metrics.modal_split[2] - 0.173) <= 0.10,
         fmt(metrics.modal_split[2]));
    soft("bike share 0.306 +/- 0.10", std::abs(metrics.modal_split[3] - 0.306) <= 0.10,
         fmt(metrics.modal_split[3]));
    soft("walk share 0.022 +/- 0.05", std::abs(metrics.modal_split[0] - 0.022) <= 0.05,
         fmt(metrics.modal_split[0]));
  }
}

void criterion_8_relocation(const std::string& data_dir) {
  const ScenarioBundle bundle = load_scenario_file(data_dir + "/sioux_falls_relocation.json");
  SolveOptions options;
  options.regularization_weight = bundle.scenario.regularization_weight;
  const int n = bundle.scenario.dims.n_locations;

  const Scenario& uniform = bundle.scenario;
  const ScenarioConfig conc_config = concentrate_fleets(*bundle.config, bundle.demand_total, n, 0.66);
  const Scenario concentrated = build_scenario(conc_config, bundle.demand_total, n, bundle.distances_km);

  const SolveReport ru = solve_equilibrium(uniform, options);
  const SolveReport rc = solve_equilibrium(concentrated, options);
  bool pass = ru.converged() && rc.converged();
  double p95_u = 0.0, p95_c = 0.0, amod_delta = 0.0, bike_delta = 0.0;
  if (pass) {
    const MetricsReport mu = compute_metrics(uniform, ru.flows);
    const MetricsReport mc = compute_metrics(concentrated, rc.flows);
    p95_u = histogram_quantile(mu.histogram, 0.95);
    p95_c = histogram_quantile(mc.histogram, 0.95);
    pass = p95_c > p95_u;
    amod_delta = (mc.revenue_usd[2] / mu.revenue_usd[2] - 1.0) * 100.0;
    bike_delta = (mc.revenue_usd[3] / mu.revenue_usd[3] - 1.0) * 100.0;
  }
  report(8, "relocation tail", pass, "p95_uniform=" + fmt(p95_u) + " p95_concentrated=" + fmt(p95_c));
  if (ru.converged() && rc.converged()) {
    soft("amod revenue +5% +/- 4pp", std::abs(amod_delta - 5.0) <= 4.0, fmt(amod_delta) + "%");
    soft("bike revenue +9% +/- 4pp", std::abs(bike_delta - 9.0) <= 4.0, fmt(bike_delta) + "%");
  }
}

void criterion_9_stakeholder_game(const std::string& data_dir) {
  const ScenarioBundle bundle = load_scenario_file(data_dir + "/sioux_falls.json");
  SolveOptions options;
  options.regularization_weight = bundle.scenario.regularization_weight;
  const ActionGrid grid = ActionGrid::defaults();
  const auto t0 = std::chrono::steady_clock::now();
  const GameOutcome outcome =
      solve_stakeholder_game(bundle, grid, {0.0, 0.0, 1.0}, TieRule::Pessimistic, options, worker_count());
  const double secs = elapsed_s(t0);

  int invalid_cells = 0;
  for (const PayoffCell& cell : outcome.tensor.cells)
    if (!cell.valid) ++invalid_cells;

  // unilateral-deviation certificate for every reported Nash cell
  bool nash_ok = true;
  std::size_t nash_count = 0;
  for (std::size_t b = 0; b < outcome.nash_cells.size(); ++b) {
    for (const auto& cell_idx : outcome.nash_cells[b]) {
      ++nash_count;
      const PayoffCell& cell = outcome.tensor.at(b, cell_idx.first, cell_idx.second);
      for (std::size_t a2 = 0; a2 < grid.amod_prices.size(); ++a2) {
        const PayoffCell& dev = outcome.tensor.at(b, a2, cell_idx.second);
        if (dev.valid && dev.amod_revenue > cell.amod_revenue + 1e-9) nash_ok = false;
      }
      for (std::size_t k2 = 0; k2 < grid.bike_prices.size(); ++k2) {
        const PayoffCell& dev = outcome.tensor.at(b, cell_idx.first, k2);
        if (dev.valid && dev.bike_revenue > cell.bike_revenue + 1e-9) nash_ok = false;
      }
    }
  }

  // frontier soundness and completeness against the dominance oracle
  bool frontier_ok = true;
  {
    auto dominates = [](const FrontierPoint& x, const FrontierPoint& y) {
      return x.avg_cost <= y.avg_cost && x.co2 <= y.co2 && x.bus_revenue >= y.bus_revenue &&
             (x.avg_cost < y.avg_cost || x.co2 < y.co2 || x.bus_revenue > y.bus_revenue);
    };
    std::vector<char> in_front(outcome.equilibria.size(), 0);
    for (std::size_t idx : outcome.frontier) in_front[idx] = 1;
    for (std::size_t i = 0; i < outcome.equilibria.size(); ++i) {
      bool dominated = false;
      for (std::size_t j = 0; j < outcome.equilibria.size(); ++j)
        if (j != i && dominates(outcome.equilibria[j].point, outcome.equilibria[i].point)) dominated = true;
      if (static_cast<bool>(in_front[i]) == dominated) frontier_ok = false;
    }
  }

  // with revenue-only weights, the selected action maximizes bus revenue
  // among actions that possess equilibria (pessimistic selection)
  bool selection_ok = outcome.selected.found;
  if (selection_ok) {
    for (std::size_t b = 0; b < outcome.nash_cells.size(); ++b) {
      if (outcome.nash_cells[b].empty()) continue;
      double worst_rev = 0.0;
      bool first = true;
      for (const auto& cell_idx : outcome.nash_cells[b]) {
        const double rev = outcome.tensor.at(b, cell_idx.first, cell_idx.second).bus_revenue;
        if (first || rev < worst_rev) worst_rev = rev;
        first = false;
      }
      if (worst_rev > outcome.selected.municipal_payoff + 1e-9) selection_ok = false;
    }
  }

  const bool pass = secs <= 1800.0 && invalid_cells == 0 && nash_ok && frontier_ok && selection_ok;
  report(9, "stakeholder game", pass,
         "time=" + fmt(secs) + "s cells=" + std::to_string(outcome.tensor.cells.size()) +
             " invalid=" + std::to_string(invalid_cells) + " nash_cells=" + std::to_string(nash_count) +
             " frontier=" + std::to_string(outcome.frontier.size()));

  // soft: average citizen cost non-decreasing in the bus fare, evaluated at
  // each action's pessimistic equilibrium
  {
    int violations = 0;
    double previous = -1e300;
    bool have_prev = false;
    for (std::size_t b = 0; b < outcome.nash_cells.size(); ++b) {
      if (outcome.nash_cells[b].empty()) continue;
      double cost = -1e300;
      for (const auto& cell_idx : outcome.nash_cells[b])
        cost = std::max(cost, outcome.tensor.at(b, cell_idx.first, cell_idx.second).avg_cost);
      if (have_prev && cost < previous - 1e-6) ++violations;
      previous = cost;
      have_prev = true;
    }
    soft("avg cost monotone in bus fare", violations == 0, "violations=" + std::to_string(violations));
  }
}

void criterion_10_determinism(const std::string& data_dir, const std::string& cli_path) {
  bool pass = true;
  std::string detail;

  // library-level: two identical runs, byte-identical artifacts
  const fs::path base = fs::temp_directory_path() / "mmg_acceptance_det";
  std::error_code ec;
  fs::remove_all(base, ec);
  fs::create_directories(base / "a");
  fs::create_directories(base / "b");
  for (const char* sub : {"a", "b"}) {
    const ScenarioBundle bundle = load_scenario_file(data_dir + "/sioux_falls.json");
    SolveOptions options;
    options.regularization_weight = bundle.scenario.regularization_weight;
    const SolveReport r = solve_equilibrium(bundle.scenario, options);
    const MetricsReport metrics = compute_metrics(bundle.scenario, r.flows);
    RunManifest manifest;
    manifest.config_hash = bundle.source_hash;
    manifest.seed = bundle.config->rng_seed;
    manifest.options = options;
    manifest.status = to_string(r.status);
    manifest.potential = r.potential;
    manifest.kkt_residual = r.kkt_residual;
    manifest.barrier_stages = static_cast<int>(r.iterations.size());
    write_results(bundle.scenario, r, metrics, manifest, (base / sub).string());
  }
  for (const char* name : {"flows.csv", "metrics.csv", "histogram.csv", "manifest.json"}) {
    if (read_text_file((base / "a" / name).string()) != read_text_file((base / "b" / name).string())) {
      pass = false;
      detail += std::string(name) + " differs; ";
    }
  }

  // CLI-level on the small bundled instance
  fs::create_directories(base / "c1");
  fs::create_directories(base / "c2");
  for (const char* sub : {"c1", "c2"}) {
    const std::string cmd = "'" + cli_path + "' solve --scenario '" + data_dir + "/example1.json' --out '" +
                            (base / sub).string() + "' > /dev/null 2>&1";
    if (std::system(cmd.c_str()) != 0) {
      pass = false;
      detail += "cli exit nonzero; ";
    }
  }
  for (const char* name : {"flows.csv", "metrics.csv", "manifest.json"}) {
    if (read_text_file((base / "c1" / name).string()) != read_text_file((base / "c2" / name).string())) {
      pass = false;
      detail += std::string("cli ") + name + " differs; ";
    }
  }
  fs::remove_all(base, ec);
  report(10, "determinism", pass, detail.empty() ? "library and cli byte-identical" : detail);
}

} // namespace

int main() {
#ifdef MMG_DATA_DIR
  const std::string data_dir = MMG_DATA_DIR;
#else
  const std::string data_dir = "data";
#endif
#ifdef MMG_CLI_PATH
  const std::string cli_path = MMG_CLI_PATH;
#else
  const std::string cli_path = "./mmg";
#endif

  criterion_1_reference_instance();
  criterion_2_converse_failure();
  criterion_3_non_uniqueness();
  std::vector<Scenario> instances;
  std::vector<SolveReport> reports;
  criterion_4_theorem_suite(instances, reports);
  criterion_5_decomposition();
  criterion_6_kkt_and_gradients(instances, reports);
  criterion_7_city_scenario(data_dir);
  criterion_8_relocation(data_dir);
  criterion_9_stakeholder_game(data_dir);
  criterion_10_determinism(data_dir, cli_path);

  std::printf("%s (%d criteria failed)\n", failures == 0 ? "ACCEPTANCE PASSED" : "ACCEPTANCE FAILED",
              failures);
  return failures == 0 ? 0 : 1;
}

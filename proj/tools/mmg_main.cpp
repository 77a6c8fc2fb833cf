// SPDX-License-Identifier: Apache-2.0
//
// mmg — equilibria of capacitated multi-modal mobility games, plus the
// two-stage municipality / operators pricing game on top of them.
//
// Exit codes: 0 success, 1 input error, 2 iteration limit, 3 infeasible,
// 4 not an equilibrium, 5 no Nash equilibrium in the pricing game.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mmg/metrics.hpp"
#include "mmg/scenario_io.hpp"
#include "mmg/solver.hpp"
#include "mmg/stakeholder_game.hpp"
#include "mmg/verifier.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 1;
constexpr int kExitIterationLimit = 2;
constexpr int kExitInfeasible = 3;
constexpr int kExitNotEquilibrium = 4;
constexpr int kExitNoEquilibrium = 5;

int worker_count() {
  if (const char* env = std::getenv("MMG_WORKERS")) {
    const int req = std::atoi(env);
    if (req > 0) return req;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

struct SolveFlags {
  std::string scenario_path;
  std::string out_dir;
  double tol = 1e-6;
  double reg = -1.0; // <0: take the scenario's weight
  long long seed = -1;
};

mmg::SolveOptions effective_options(const mmg::Scenario& scenario, double tol, double reg) {
  mmg::SolveOptions options;
  options.kkt_tolerance = tol;
  options.regularization_weight = reg >= 0.0 ? reg : scenario.regularization_weight;
  return options;
}

mmg::ScenarioBundle load_bundle_with_seed(const std::string& path, long long seed) {
  mmg::ScenarioBundle bundle = mmg::load_scenario_file(path);
  if (seed >= 0) {
    if (!bundle.rebuildable())
      throw std::runtime_error("--seed applies only to config scenarios (raw scenarios have no split)");
    bundle.config->rng_seed = static_cast<std::uint64_t>(seed);
    bundle.scenario = mmg::build_scenario(*bundle.config, bundle.demand_total,
                                          bundle.scenario.dims.n_locations, bundle.distances_km);
  }
  return bundle;
}

int exit_code_for(mmg::SolveStatus status) {
  switch (status) {
    case mmg::SolveStatus::Converged: return kExitOk;
    case mmg::SolveStatus::IterationLimit: return kExitIterationLimit;
    case mmg::SolveStatus::Infeasible: return kExitInfeasible;
  }
  return kExitInput;
}

void write_solve_outputs(const mmg::ScenarioBundle& bundle, const mmg::SolveReport& report,
                         const mmg::SolveOptions& options, long long seed, const std::string& out_dir) {
  const mmg::MetricsReport metrics = mmg::compute_metrics(bundle.scenario, report.flows);
  mmg::RunManifest manifest;
  manifest.config_hash = bundle.source_hash;
  manifest.seed = seed >= 0 ? static_cast<std::uint64_t>(seed)
                            : (bundle.config ? bundle.config->rng_seed : 0);
  manifest.options = options;
  manifest.status = mmg::to_string(report.status);
  manifest.potential = report.potential;
  manifest.kkt_residual = report.kkt_residual;
  manifest.barrier_stages = static_cast<int>(report.iterations.size());
  mmg::write_results(bundle.scenario, report, metrics, manifest, out_dir);
}

int run_solve(const SolveFlags& flags) {
  const mmg::ScenarioBundle bundle = load_bundle_with_seed(flags.scenario_path, flags.seed);
  const mmg::SolveOptions options = effective_options(bundle.scenario, flags.tol, flags.reg);
  const mmg::SolveReport report = mmg::solve_equilibrium(bundle.scenario, options);
  write_solve_outputs(bundle, report, options, flags.seed, flags.out_dir);
  std::printf("status=%s potential=%s kkt_residual=%s stages=%zu\n", mmg::to_string(report.status),
              mmg::format_double(report.potential).c_str(),
              mmg::format_double(report.kkt_residual).c_str(), report.iterations.size());
  if (!report.message.empty()) std::printf("note: %s\n", report.message.c_str());
  return exit_code_for(report.status);
}

int run_check(const std::string& scenario_path, const std::string& flows_path, double tol_cost,
              double tol_sat) {
  const mmg::ScenarioBundle bundle = mmg::load_scenario_file(scenario_path);
  const mmg::FlowConfiguration flows =
      mmg::read_flows_csv(bundle.scenario, mmg::read_text_file(flows_path));
  const mmg::CheckReport report = mmg::check_equilibrium(bundle.scenario, flows, tol_cost, tol_sat);
  std::printf("feasible=%s is_equilibrium=%s\n", report.feasible ? "true" : "false",
              report.is_equilibrium ? "true" : "false");
  for (const auto& v : report.feasibility_violations)
    std::printf("feasibility violation: kind=%d i=%d j=%d k=%d m=%d amount=%s\n", static_cast<int>(v.kind),
                v.i + 1, v.j + 1, v.k + 1, v.m + 1, mmg::format_double(v.amount).c_str());
  for (const auto& v : report.violations)
    std::printf("violation: origin=%d destination=%d population=%d used_mode=%d better_mode=%d gap=%s\n",
                v.i + 1, v.j + 1, v.k + 1, v.used_mode, v.better_mode,
                mmg::format_double(v.cost_gap).c_str());
  return report.is_equilibrium ? kExitOk : kExitNotEquilibrium;
}

int run_oracle(const std::string& scenario_path, double step, const std::string& out_dir) {
  const mmg::ScenarioBundle bundle = mmg::load_scenario_file(scenario_path);
  const auto equilibria = mmg::brute_force_equilibria(bundle.scenario, step);
  std::printf("equilibria=%zu\n", equilibria.size());
  if (!out_dir.empty()) {
    std::string csv = "equilibrium,origin,destination,population,mode,flow\n";
    for (std::size_t e = 0; e < equilibria.size(); ++e) {
      const std::string body = mmg::write_flows_csv(bundle.scenario, equilibria[e]);
      std::istringstream lines(body);
      std::string line;
      bool header = true;
      while (std::getline(lines, line)) {
        if (header) {
          header = false;
          continue;
        }
        csv += std::to_string(e) + "," + line + "\n";
      }
    }
    mmg::write_text_file_atomic((fs::path(out_dir) / "equilibria.csv").string(), csv);
  }
  return kExitOk;
}

int run_validate(const std::string& scenario_path) {
  const mmg::ScenarioBundle bundle = mmg::load_scenario_file(scenario_path);
  const mmg::Dims& d = bundle.scenario.dims;
  std::printf("valid scenario: %d locations, %d populations, %d modes, total demand %s\n",
              d.n_locations, d.n_populations, d.n_modes,
              mmg::format_double(bundle.scenario.total_demand()).c_str());
  return kExitOk;
}

int run_sweep(const std::string& scenario_path, const std::string& mode, double fraction,
              const std::string& out_dir, double tol, double reg) {
  if (mode != "relocation") throw std::runtime_error("unknown sweep mode: " + mode);
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::runtime_error("--fraction must lie in (0,1]");
  mmg::ScenarioBundle bundle = mmg::load_scenario_file(scenario_path);
  if (!bundle.rebuildable()) throw std::runtime_error("sweep requires a config scenario");
  if (!fs::exists(out_dir)) throw std::runtime_error("output directory does not exist: " + out_dir);

  const int n = bundle.scenario.dims.n_locations;
  const mmg::ScenarioConfig concentrated_config =
      mmg::concentrate_fleets(*bundle.config, bundle.demand_total, n, fraction);
  const mmg::Scenario concentrated =
      mmg::build_scenario(concentrated_config, bundle.demand_total, n, bundle.distances_km);

  struct Run {
    const char* name;
    const mmg::Scenario* scenario;
    mmg::SolveReport report;
    mmg::MetricsReport metrics;
  };
  Run runs[2] = {{"uniform", &bundle.scenario, {}, {}}, {"concentrated", &concentrated, {}, {}}};
  for (Run& r : runs) {
    const mmg::SolveOptions options = effective_options(*r.scenario, tol, reg);
    r.report = mmg::solve_equilibrium(*r.scenario, options);
    if (!r.report.converged()) {
      std::printf("%s allocation failed to converge (%s)\n", r.name, mmg::to_string(r.report.status));
      return exit_code_for(r.report.status);
    }
    r.metrics = mmg::compute_metrics(*r.scenario, r.report.flows);
    const fs::path sub = fs::path(out_dir) / r.name;
    fs::create_directories(sub);
    mmg::RunManifest manifest;
    manifest.config_hash = bundle.source_hash;
    manifest.seed = bundle.config->rng_seed;
    manifest.options = effective_options(*r.scenario, tol, reg);
    manifest.status = mmg::to_string(r.report.status);
    manifest.potential = r.report.potential;
    manifest.kkt_residual = r.report.kkt_residual;
    manifest.barrier_stages = static_cast<int>(r.report.iterations.size());
    mmg::write_results(*r.scenario, r.report, r.metrics, manifest, sub.string());
  }

  auto mode_revenue = [&](const Run& r, const std::string& name) {
    for (std::size_t m = 0; m < bundle.config->modes.size(); ++m)
      if (bundle.config->modes[m].name == name) return r.metrics.revenue_usd[m];
    return 0.0;
  };
  std::string delta = "metric,uniform,concentrated,delta_percent\n";
  for (const char* op : {"amod", "bike"}) {
    const double before = mode_revenue(runs[0], op);
    const double after = mode_revenue(runs[1], op);
    const double pct = before > 0.0 ? (after / before - 1.0) * 100.0 : 0.0;
    delta += std::string("revenue_") + op + "," + mmg::format_double(before) + "," +
             mmg::format_double(after) + "," + mmg::format_double(pct) + "\n";
  }
  const double p95_uniform = mmg::histogram_quantile(runs[0].metrics.histogram, 0.95);
  const double p95_conc = mmg::histogram_quantile(runs[1].metrics.histogram, 0.95);
  delta += "cost_p95," + mmg::format_double(p95_uniform) + "," + mmg::format_double(p95_conc) + "," +
           mmg::format_double(p95_uniform > 0.0 ? (p95_conc / p95_uniform - 1.0) * 100.0 : 0.0) + "\n";
  mmg::write_text_file_atomic((fs::path(out_dir) / "delta.csv").string(), delta);
  std::printf("wrote uniform/, concentrated/, delta.csv under %s\n", out_dir.c_str());
  return kExitOk;
}

mmg::ActionGrid load_grid(const std::string& grid_path) {
  if (grid_path.empty()) return mmg::ActionGrid::defaults();
  const auto j = nlohmann::json::parse(mmg::read_text_file(grid_path));
  mmg::ActionGrid grid;
  for (const auto& v : j.at("municipality_prices")) grid.municipality_prices.push_back(v.get<double>());
  for (const auto& v : j.at("amod_prices")) grid.amod_prices.push_back(v.get<double>());
  for (const auto& v : j.at("bike_prices")) grid.bike_prices.push_back(v.get<double>());
  grid.validate();
  return grid;
}

int run_game(const std::string& scenario_path, const std::string& grid_path, double rho_cost,
             double rho_co2, double rho_revenue, const std::string& tie_rule_name,
             const std::string& out_dir, double tol, double reg) {
  const mmg::ScenarioBundle bundle = mmg::load_scenario_file(scenario_path);
  const mmg::ActionGrid grid = load_grid(grid_path);
  mmg::MunicipalWeights weights{rho_cost, rho_co2, rho_revenue};
  mmg::TieRule tie_rule;
  if (tie_rule_name == "pessimistic") {
    tie_rule = mmg::TieRule::Pessimistic;
  } else if (tie_rule_name == "optimistic") {
    tie_rule = mmg::TieRule::Optimistic;
  } else {
    throw std::runtime_error("--tie-rule must be 'pessimistic' or 'optimistic'");
  }
  if (!fs::exists(out_dir)) throw std::runtime_error("output directory does not exist: " + out_dir);

  const mmg::SolveOptions options = effective_options(bundle.scenario, tol, reg);
  const mmg::GameOutcome outcome =
      mmg::solve_stakeholder_game(bundle, grid, weights, tie_rule, options, worker_count());

  std::string cells = "bus_price,amod_price,bike_price,amod_revenue,bike_revenue,avg_cost,co2,bus_revenue,"
                      "is_nash,valid\n";
  for (std::size_t b = 0; b < grid.municipality_prices.size(); ++b) {
    for (std::size_t a = 0; a < grid.amod_prices.size(); ++a)
      for (std::size_t k = 0; k < grid.bike_prices.size(); ++k) {
        const mmg::PayoffCell& cell = outcome.tensor.at(b, a, k);
        bool is_nash = false;
        for (const auto& nc : outcome.nash_cells[b]) is_nash = is_nash || (nc.first == a && nc.second == k);
        cells += mmg::format_double(grid.municipality_prices[b]) + "," +
                 mmg::format_double(grid.amod_prices[a]) + "," + mmg::format_double(grid.bike_prices[k]) +
                 "," + mmg::format_double(cell.amod_revenue) + "," + mmg::format_double(cell.bike_revenue) +
                 "," + mmg::format_double(cell.avg_cost) + "," + mmg::format_double(cell.co2) + "," +
                 mmg::format_double(cell.bus_revenue) + "," + (is_nash ? "1" : "0") + "," +
                 (cell.valid ? "1" : "0") + "\n";
      }
  }
  mmg::write_text_file_atomic((fs::path(out_dir) / "game_outcome.csv").string(), cells);

  std::string frontier = "bus_price,amod_price,bike_price,avg_cost,co2,bus_revenue\n";
  for (std::size_t idx : outcome.frontier) {
    const auto& rec = outcome.equilibria[idx];
    frontier += mmg::format_double(grid.municipality_prices[rec.bus_index]) + "," +
                mmg::format_double(grid.amod_prices[rec.amod_index]) + "," +
                mmg::format_double(grid.bike_prices[rec.bike_index]) + "," +
                mmg::format_double(rec.point.avg_cost) + "," + mmg::format_double(rec.point.co2) + "," +
                mmg::format_double(rec.point.bus_revenue) + "\n";
  }
  mmg::write_text_file_atomic((fs::path(out_dir) / "frontier.csv").string(), frontier);

  if (!outcome.selected.found) {
    std::printf("no pure Nash equilibrium for any municipality action\n");
    return kExitNoEquilibrium;
  }
  const mmg::PayoffCell& sel =
      outcome.tensor.at(outcome.selected.bus_index, outcome.selected.amod_index, outcome.selected.bike_index);
  ordered_json selected;
  selected["bus_price"] = grid.municipality_prices[outcome.selected.bus_index];
  selected["amod_price"] = grid.amod_prices[outcome.selected.amod_index];
  selected["bike_price"] = grid.bike_prices[outcome.selected.bike_index];
  selected["municipal_payoff"] = outcome.selected.municipal_payoff;
  selected["avg_cost"] = sel.avg_cost;
  selected["co2"] = sel.co2;
  selected["bus_revenue"] = sel.bus_revenue;
  selected["amod_revenue"] = sel.amod_revenue;
  selected["bike_revenue"] = sel.bike_revenue;
  selected["tie_rule"] = tie_rule_name;
  selected["weights"] = {{"rho_cost", rho_cost}, {"rho_co2", rho_co2}, {"rho_revenue", rho_revenue}};
  mmg::write_text_file_atomic((fs::path(out_dir) / "selected.json").string(), selected.dump(2) + "\n");
  std::printf("selected: bus=%s amod=%s bike=%s payoff=%s\n",
              mmg::format_double(grid.municipality_prices[outcome.selected.bus_index]).c_str(),
              mmg::format_double(grid.amod_prices[outcome.selected.amod_index]).c_str(),
              mmg::format_double(grid.bike_prices[outcome.selected.bike_index]).c_str(),
              mmg::format_double(outcome.selected.municipal_payoff).c_str());
  return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"equilibria of capacitated multi-modal mobility games"};
  app.require_subcommand(1);

  SolveFlags solve_flags;
  CLI::App* solve = app.add_subcommand("solve", "solve a scenario to equilibrium and write results");
  solve->add_option("--scenario", solve_flags.scenario_path, "scenario JSON document")->required();
  solve->add_option("--out", solve_flags.out_dir, "existing output directory")->required();
  solve->add_option("--tol", solve_flags.tol, "KKT tolerance");
  solve->add_option("--reg", solve_flags.reg, "quadratic regularization weight (default: scenario's)");
  solve->add_option("--seed", solve_flags.seed, "population split seed override");

  std::string check_scenario, check_flows;
  double tol_cost = 1e-4, tol_sat = 1e-6;
  CLI::App* check = app.add_subcommand("check", "verify a flow file for feasibility and equilibrium");
  check->add_option("--scenario", check_scenario)->required();
  check->add_option("--flows", check_flows, "flows.csv to verify")->required();
  check->add_option("--tol-cost", tol_cost);
  check->add_option("--tol-sat", tol_sat);

  std::string oracle_scenario, oracle_out;
  double oracle_step = 0.25;
  CLI::App* oracle = app.add_subcommand("oracle", "brute-force equilibrium enumeration (tiny instances)");
  oracle->add_option("--scenario", oracle_scenario)->required();
  oracle->add_option("--step", oracle_step, "grid step");
  oracle->add_option("--out", oracle_out, "directory for equilibria.csv");

  std::string sweep_scenario, sweep_mode = "relocation", sweep_out;
  double sweep_fraction = 0.66, sweep_tol = 1e-6, sweep_reg = -1.0;
  CLI::App* sweep = app.add_subcommand("sweep", "uniform vs concentrated fleet relocation study");
  sweep->add_option("--scenario", sweep_scenario)->required();
  sweep->add_option("--mode", sweep_mode, "sweep mode (relocation)");
  sweep->add_option("--fraction", sweep_fraction, "share of densest locations receiving vehicles");
  sweep->add_option("--out", sweep_out)->required();
  sweep->add_option("--tol", sweep_tol);
  sweep->add_option("--reg", sweep_reg);

  std::string game_scenario, game_grid, game_out, game_tie = "pessimistic";
  double rho_cost = 0.0, rho_co2 = 0.0, rho_revenue = 0.0, game_tol = 1e-6, game_reg = -1.0;
  CLI::App* game = app.add_subcommand("game", "two-stage stakeholder pricing game");
  game->add_option("--scenario", game_scenario)->required();
  game->add_option("--grid", game_grid, "action grid JSON (default: the published menu)");
  game->add_option("--rho-cost", rho_cost);
  game->add_option("--rho-co2", rho_co2);
  game->add_option("--rho-revenue", rho_revenue);
  game->add_option("--tie-rule", game_tie, "pessimistic|optimistic");
  game->add_option("--out", game_out)->required();
  game->add_option("--tol", game_tol);
  game->add_option("--reg", game_reg);

  std::string validate_scenario;
  CLI::App* validate = app.add_subcommand("validate-scenario", "parse and validate a scenario document");
  validate->add_option("--scenario", validate_scenario)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (solve->parsed()) return run_solve(solve_flags);
    if (check->parsed()) return run_check(check_scenario, check_flows, tol_cost, tol_sat);
    if (oracle->parsed()) return run_oracle(oracle_scenario, oracle_step, oracle_out);
    if (sweep->parsed())
      return run_sweep(sweep_scenario, sweep_mode, sweep_fraction, sweep_out, sweep_tol, sweep_reg);
    if (game->parsed())
      return run_game(game_scenario, game_grid, rho_cost, rho_co2, rho_revenue, game_tie, game_out,
                      game_tol, game_reg);
    if (validate->parsed()) return run_validate(validate_scenario);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInput;
  }
  return kExitInput;
}

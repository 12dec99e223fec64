// Command-line front end: check, price, solve, oracle, simulate.
//
// Exit status: 0 success, 1 domain validation failure, 2 configuration or
// usage error, 3 resource guard.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "shortfall/config.hpp"
#include "shortfall/csv.hpp"
#include "shortfall/oracle.hpp"
#include "shortfall/shortfall.hpp"

namespace {

using namespace shortfall;

enum Exit { kOk = 0, kDomain = 1, kConfig = 2, kGuard = 3 };

class UsageError : public Error {
 public:
  using Error::Error;
};

struct GridFlags {
  std::optional<std::size_t> M, K, R;
  std::optional<double> y_max;

  void add(CLI::App* cmd) {
    cmd->add_option("--M", M, "wealth grid intervals");
    cmd->add_option("--K", K, "positions per scan");
    cmd->add_option("--R", R, "refinement rounds");
    cmd->add_option("--y-max", y_max, "upper end of the wealth grid");
  }

  SolverOptions apply(SolverOptions o) const {
    if (M) o.wealth_intervals = *M;
    if (K) o.z_points = *K;
    if (R) o.refinements = *R;
    if (y_max) o.y_max = *y_max;
    if (o.wealth_intervals < 1 || o.z_points < 1) throw UsageError("--M and --K must be positive");
    return o;
  }
};

std::string num(double v) { return format_number(v); }

Problem load(const std::string& path) {
  Problem p = load_problem(path);
  for (const auto& w : p.warnings) std::cerr << "warning: " << w << "\n";
  return p;
}

double capital_of(const Problem& p, const std::optional<double>& flag) {
  const std::optional<double> x = flag ? flag : p.capital;
  if (!x) throw UsageError("no capital: pass --capital or set \"capital\" in the config");
  if (!(*x > 0.0) || !std::isfinite(*x)) throw UsageError("capital must be positive, got " + num(*x));
  return *x;
}

int cmd_check(const std::string& path) {
  const Problem p = load(path);
  const auto arb = check_no_arbitrage(p.tree);
  const auto bad = validate_claim(p.claim, p.tree);
  std::cout << "nodes " << p.tree.size() << ", horizon " << p.tree.horizon() << "\n";
  if (arb.empty()) std::cout << "no-arbitrage: ok\n";
  for (const auto& v : arb)
    std::cout << "arbitrage at time " << v.time << " node " << v.index << ": support [" << num(v.bounds.a) << ", "
              << num(v.bounds.b) << "]\n";
  if (bad.empty()) std::cout << "claim: ok\n";
  for (const auto& v : bad)
    std::cout << "claim invalid at time " << v.time << " node " << v.index << ": " << v.reason << " (U=" << num(v.upper)
              << ", W=" << num(v.lower) << ")\n";
  return arb.empty() && bad.empty() ? kOk : kDomain;
}

struct Sweep {
  double lo, hi;
  std::size_t steps;
};

Sweep parse_sweep(const std::string& s) {
  const auto a = s.find(':');
  const auto b = a == std::string::npos ? a : s.find(':', a + 1);
  if (b == std::string::npos) throw UsageError("--capital-sweep expects lo:hi:steps");
  try {
    std::size_t used = 0;
    Sweep sw{std::stod(s.substr(0, a)), std::stod(s.substr(a + 1, b - a - 1)), 0};
    const long steps = std::stol(s.substr(b + 1), &used);
    if (used != s.size() - b - 1 || steps < 1) throw UsageError("sweep steps must be a positive integer");
    sw.steps = static_cast<std::size_t>(steps);
    if (!(sw.lo > 0.0) || !(sw.hi >= sw.lo)) throw UsageError("sweep needs 0 < lo <= hi");
    return sw;
  } catch (const std::logic_error&) {
    throw UsageError("cannot parse --capital-sweep \"" + s + "\"");
  }
}

int cmd_price(const std::string& path, const std::optional<double>& capital, const std::string& sweep,
              const GridFlags& grid) {
  const Problem p = load(path);
  const SolverOptions opt = grid.apply(p.solver);
  if (sweep.empty()) {
    const double x = capital_of(p, capital);
    const auto sol = solve(p.tree, p.claim, p.loss, x, opt);
    std::cout << "x,J0\n" << num(x) << "," << num(sol.risk) << "\n";
    return kOk;
  }
  const Sweep sw = parse_sweep(sweep);
  std::vector<double> xs;
  for (std::size_t i = 0; i < sw.steps; ++i)
    xs.push_back(sw.steps == 1 ? sw.lo : sw.lo + (sw.hi - sw.lo) * static_cast<double>(i) / static_cast<double>(sw.steps - 1));
  const auto sol = solve(p.tree, p.claim, p.loss, sw.hi, opt);
  const auto curve = risk_curve(sol, xs);
  std::cout << "x,J0\n";
  for (std::size_t i = 0; i < xs.size(); ++i) std::cout << num(xs[i]) << "," << num(curve[i].value) << "\n";
  return kOk;
}

int cmd_solve(const std::string& path, const std::optional<double>& capital, const std::string& output,
              const GridFlags& grid) {
  const Problem p = load(path);
  const double x = capital_of(p, capital);
  const auto sol = solve(p.tree, p.claim, p.loss, x, grid.apply(p.solver));
  const auto plan = make_hedge_plan(sol);
  const std::filesystem::path out(output);
  auto stopping = out.parent_path() / (out.stem().string() + "_stopping" + out.extension().string());
  write_atomically(out, value_policy_csv(sol));
  write_atomically(stopping, stopping_csv(p.tree, plan));
  std::cout << "capital " << num(x) << "\n"
            << "J0 " << num(sol.risk) << "\n"
            << "lambda0 " << num(sol.root_position) << "\n"
            << "psi0 " << num(plan.game.risk) << "\n"
            << "seller_stops_at_root " << int{plan.game.seller[0]} << "\n"
            << "wrote " << out.string() << " and " << stopping.string() << "\n";
  return kOk;
}

struct OracleFlags {
  std::size_t grid = 16;
  std::size_t zoom = 8;
  std::uint64_t max_strategies = 2'000'000;
  std::uint64_t max_rules = 5000;
  double tolerance = 1e-2;
};

int cmd_oracle(const std::string& path, const std::optional<double>& capital, const OracleFlags& f,
               const GridFlags& grid) {
  const Problem p = load(path);
  const double x = capital_of(p, capital);
  require_valid_problem(p.tree, p.claim);
  OracleOptions oo;
  oo.grid_points = f.grid;
  oo.zoom_rounds = f.zoom;
  oo.max_strategies = f.max_strategies;
  const auto orc = oracle_risk(p.tree, p.claim, p.loss, x, oo);

  const auto sol = solve(p.tree, p.claim, p.loss, x, grid.apply(p.solver));
  const auto plan = make_hedge_plan(sol);
  const auto game = oracle_dynkin(p.tree, p.claim, p.loss, plan.wealth, f.max_rules);
  const double dynkin_gap = std::abs(game.value - plan.game.risk);
  const double risk_gap = std::abs(sol.risk - orc.value);

  std::cout << "quantity,dp,oracle,gap\n"
            << "dynkin_psi0," << num(plan.game.risk) << "," << num(game.value) << "," << num(dynkin_gap) << "\n"
            << "J0," << num(sol.risk) << "," << num(orc.value) << "," << num(risk_gap) << "\n";
  std::cerr << "oracle strategies " << orc.strategies << ", final position spacing " << num(orc.z_gap) << "\n";
  const bool ok = dynkin_gap <= 1e-12 && risk_gap <= f.tolerance;
  std::cout << (ok ? "agree" : "disagree") << " (tolerance " << num(f.tolerance) << ")\n";
  return ok ? kOk : kDomain;
}

int cmd_simulate(const std::string& path, const std::optional<double>& capital, std::size_t paths, std::uint64_t seed,
                 const std::string& output, const GridFlags& grid) {
  const Problem p = load(path);
  const double x = capital_of(p, capital);
  if (paths < 1) throw UsageError("--paths must be positive");
  const auto sol = solve(p.tree, p.claim, p.loss, x, grid.apply(p.solver));
  const auto plan = make_hedge_plan(sol);
  const auto est = estimate_risk(p.tree, p.claim, p.loss, plan, paths, seed);
  if (!output.empty()) write_atomically(output, simulation_csv(est));
  const double z = est.std_error > 0.0 ? (est.mean - sol.risk) / est.std_error : 0.0;
  std::cout << "paths " << est.paths << "\n"
            << "seed " << seed << "\n"
            << "J0 " << num(sol.risk) << "\n"
            << "mean " << num(est.mean) << "\n"
            << "std_error " << num(est.std_error) << "\n"
            << "z " << num(z) << "\n"
            << "min_wealth " << num(est.min_wealth) << "\n"
            << "positions_admissible " << (est.positions_admissible ? 1 : 0) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shortfall risk minimization for game options on scenario trees"};
  app.require_subcommand(1);

  std::string config;
  std::optional<double> capital;
  GridFlags grid;

  auto* check = app.add_subcommand("check", "validate market and claim");
  check->add_option("config", config, "problem file (JSON)")->required();

  std::string sweep;
  auto* price = app.add_subcommand("price", "J0 at one capital or over a sweep");
  price->add_option("config", config, "problem file (JSON)")->required();
  auto* cap_opt = price->add_option("--capital", capital, "initial capital");
  price->add_option("--capital-sweep", sweep, "lo:hi:steps")->excludes(cap_opt);
  grid.add(price);

  std::string output;
  auto* solve_cmd = app.add_subcommand("solve", "export value function, policy and stopping rule");
  solve_cmd->add_option("config", config, "problem file (JSON)")->required();
  solve_cmd->add_option("--capital", capital, "initial capital");
  solve_cmd->add_option("--output", output, "value/policy CSV; stopping table goes to <stem>_stopping.csv")->required();
  grid.add(solve_cmd);

  OracleFlags of;
  auto* oracle = app.add_subcommand("oracle", "cross-check the solver against brute force");
  oracle->add_option("config", config, "problem file (JSON)")->required();
  oracle->add_option("--capital", capital, "initial capital");
  oracle->add_option("--grid", of.grid, "positions per node and round")->capture_default_str();
  oracle->add_option("--zoom", of.zoom, "zoom rounds")->capture_default_str();
  oracle->add_option("--max-strategies", of.max_strategies, "strategies per round")->capture_default_str();
  oracle->add_option("--max-rules", of.max_rules, "stopping times for the Dynkin check")->capture_default_str();
  oracle->add_option("--tolerance", of.tolerance, "allowed |J0 - oracle|")->capture_default_str();
  grid.add(oracle);

  std::size_t paths = 100000;
  std::uint64_t seed = 1;
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo replay of the optimal hedge");
  simulate->add_option("config", config, "problem file (JSON)")->required();
  simulate->add_option("--capital", capital, "initial capital");
  simulate->add_option("--paths", paths, "number of paths")->capture_default_str();
  simulate->add_option("--seed", seed, "random seed")->capture_default_str();
  simulate->add_option("--output", output, "per-path CSV");
  grid.add(simulate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*check) return cmd_check(config);
    if (*price) return cmd_price(config, capital, sweep, grid);
    if (*solve_cmd) return cmd_solve(config, capital, output, grid);
    if (*oracle) return cmd_oracle(config, capital, of, grid);
    if (*simulate) return cmd_simulate(config, capital, paths, seed, output, grid);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kConfig;
  } catch (const GuardError& e) {
    std::cerr << "resource guard: " << e.what() << "\n";
    return kGuard;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDomain;
  }
  return kOk;
}

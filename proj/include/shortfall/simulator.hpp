#pragma once

/// Monte Carlo replay of the optimal hedge against the buyer's best reply.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "shortfall/dynkin.hpp"
#include "shortfall/errors.hpp"
#include "shortfall/market.hpp"
#include "shortfall/parallel.hpp"
#include "shortfall/payoff.hpp"
#include "shortfall/shortfall_dp.hpp"

namespace shortfall {

/// Sampled paths as atom indices, `horizon` entries per path.
struct PathSet {
  int horizon = 0;
  std::size_t count = 0;
  std::vector<std::uint32_t> branches;

  std::span<const std::uint32_t> path(std::size_t i) const {
    return std::span<const std::uint32_t>(branches).subspan(i * static_cast<std::size_t>(horizon),
                                                            static_cast<std::size_t>(horizon));
  }
};

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent stream per (seed, path index).
class PathStream {
 public:
  PathStream(std::uint64_t seed, std::uint64_t index) : state_(splitmix64(seed) ^ splitmix64(~index)) {}
  double uniform() {
    state_ = splitmix64(state_);
    return static_cast<double>(state_ >> 11) * 0x1.0p-53;
  }

 private:
  std::uint64_t state_;
};

inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}
}  // namespace detail

inline PathSet sample_paths(const MarketTree& tree, std::size_t n_paths, std::uint64_t seed, unsigned threads = 0) {
  PathSet out;
  out.horizon = tree.horizon();
  out.count = n_paths;
  const auto N = static_cast<std::size_t>(tree.horizon());
  out.branches.assign(n_paths * N, 0);
  parallel_for(0, n_paths, threads, [&](std::size_t i) {
    detail::PathStream rng(seed, i);
    NodeId cur = 0;
    for (std::size_t t = 0; t < N; ++t) {
      const auto atoms = tree.node(cur).next.atoms();
      const double u = rng.uniform();
      double cum = 0.0;
      std::size_t b = atoms.size() - 1;
      for (std::size_t k = 0; k + 1 < atoms.size(); ++k) {
        cum += atoms[k].probability;
        if (u < cum) {
          b = k;
          break;
        }
      }
      out.branches[i * N + t] = static_cast<std::uint32_t>(b);
      cur = tree.child(cur, b);
    }
  });
  return out;
}

/// Optimal strategy on the whole tree plus the Dynkin game played on it.
struct HedgePlan {
  WealthProcess wealth;
  DynkinSolution game;
};

template <LossFunction Loss>
HedgePlan make_hedge_plan(const ShortfallSolution<Loss>& sol) {
  HedgePlan plan{strategy_on_tree(sol), {}};
  plan.game = solve_dynkin(sol.tree(), sol.claim(), sol.field.loss(), plan.wealth);
  return plan;
}

struct ReplayResult {
  int stop_time = 0;
  bool seller_cancelled = false;
  double loss = 0.0;
  bool positions_admissible = true;
  std::vector<double> wealth;     // up to and including the stop time
  std::vector<double> positions;  // held from each time to the next
};

/// Walks one path: rebuilds wealth from the plan's positions, stops at the
/// first seller or buyer flag (buyer wins ties), and evaluates
/// l(H(sigma, tau) - X).
template <LossFunction Loss>
ReplayResult replay_hedge(const MarketTree& tree, const GameClaim& claim, const Loss& loss, const HedgePlan& plan,
                          std::span<const std::uint32_t> path) {
  if (path.size() != static_cast<std::size_t>(tree.horizon())) throw StructureError("path length differs from horizon");
  ReplayResult r;
  NodeId id = 0;
  double x = plan.wealth.value.at(0);
  for (int t = 0;; ++t) {
    if (x < -kWealthTolerance) throw AdmissibilityError("replayed portfolio value went negative");
    r.wealth.push_back(x);
    const bool buyer = plan.game.buyer[id] != 0;
    const bool seller = plan.game.seller[id] != 0;
    if (buyer || seller || tree.is_terminal(id)) {
      r.stop_time = t;
      r.seller_cancelled = !buyer && seller;
      r.loss = r.seller_cancelled ? loss(claim.upper(id) - x) : loss(claim.lower(id) - x);
      return r;
    }
    const double z = plan.wealth.position[id];
    r.positions.push_back(z);
    if (!admissible_interval(tree, id, std::max(x, 0.0)).contains(z)) r.positions_admissible = false;
    const NodeId next = tree.child(id, path[static_cast<std::size_t>(t)]);
    x += z * (tree.node(next).price - tree.node(id).price);
    id = next;
  }
}

struct RiskEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t paths = 0;
  double min_wealth = 0.0;
  bool positions_admissible = true;
  std::vector<int> stop_times;
  std::vector<double> losses;
};

template <LossFunction Loss>
RiskEstimate estimate_risk(const MarketTree& tree, const GameClaim& claim, const Loss& loss, const HedgePlan& plan,
                           std::size_t n_paths, std::uint64_t seed, unsigned threads = 0) {
  if (n_paths == 0) throw DomainError("need at least one path");
  const PathSet paths = sample_paths(tree, n_paths, seed, threads);
  RiskEstimate est;
  est.paths = n_paths;
  est.losses.assign(n_paths, 0.0);
  est.stop_times.assign(n_paths, 0);
  std::vector<double> min_wealth(n_paths, 0.0);
  std::vector<std::uint8_t> ok(n_paths, 1);
  parallel_for(0, n_paths, threads, [&](std::size_t i) {
    const ReplayResult r = replay_hedge(tree, claim, loss, plan, paths.path(i));
    est.losses[i] = r.loss;
    est.stop_times[i] = r.stop_time;
    double m = r.wealth.front();
    for (double w : r.wealth) m = std::min(m, w);
    min_wealth[i] = m;
    ok[i] = r.positions_admissible;
  });
  est.mean = detail::pairwise_sum(est.losses) / static_cast<double>(n_paths);
  if (n_paths > 1) {
    std::vector<double> dev(n_paths);
    for (std::size_t i = 0; i < n_paths; ++i) dev[i] = (est.losses[i] - est.mean) * (est.losses[i] - est.mean);
    const double var = detail::pairwise_sum(dev) / static_cast<double>(n_paths - 1);
    est.std_error = std::sqrt(var / static_cast<double>(n_paths));
  }
  est.min_wealth = min_wealth.front();
  for (std::size_t i = 0; i < n_paths; ++i) {
    est.min_wealth = std::min(est.min_wealth, min_wealth[i]);
    if (!ok[i]) est.positions_admissible = false;
  }
  return est;
}

}  // namespace shortfall

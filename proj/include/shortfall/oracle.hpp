#pragma once

/// Exhaustive ground truth on tiny trees.
///
/// Stopping times on a finite tree are finitely many: a stopping time is a
/// set of "first stop" nodes cutting every root-to-leaf path exactly once.
/// oracle_dynkin enumerates all (sigma, tau) pairs; oracle_risk enumerates
/// node-wise positions on a grid over each admissible interval and, for
/// each resulting strategy, the seller's stopping times, with the buyer's
/// best reply by one-sided optimal stopping.
///
/// Everything here uses the claim payoff H(m, n) verbatim (W_N when both
/// players reach the horizon).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "shortfall/dynkin.hpp"
#include "shortfall/errors.hpp"
#include "shortfall/market.hpp"
#include "shortfall/payoff.hpp"

namespace shortfall {

inline constexpr std::uint64_t kMaxStoppingTimes = 1'000'000;

namespace detail {
inline std::uint64_t saturating_mul(std::uint64_t a, std::uint64_t b, std::uint64_t cap) {
  if (a != 0 && b > cap / a) return cap + 1;
  return std::min(a * b, cap + 1);
}

inline std::uint64_t count_from(const MarketTree& tree, NodeId id, std::uint64_t cap) {
  if (tree.is_terminal(id)) return 1;
  std::uint64_t prod = 1;
  for (std::size_t b = 0; b < tree.child_count(id); ++b)
    prod = saturating_mul(prod, count_from(tree, tree.child(id, b), cap), cap);
  return std::min(prod + 1, cap + 1);
}

inline std::vector<std::vector<NodeId>> enumerate_from(const MarketTree& tree, NodeId id) {
  std::vector<std::vector<NodeId>> out{{id}};
  if (tree.is_terminal(id)) return out;
  std::vector<std::vector<NodeId>> partial{{}};
  for (std::size_t b = 0; b < tree.child_count(id); ++b) {
    const auto sub = enumerate_from(tree, tree.child(id, b));
    std::vector<std::vector<NodeId>> next;
    next.reserve(partial.size() * sub.size());
    for (const auto& p : partial)
      for (const auto& s : sub) {
        auto merged = p;
        merged.insert(merged.end(), s.begin(), s.end());
        next.push_back(std::move(merged));
      }
    partial = std::move(next);
  }
  out.insert(out.end(), partial.begin(), partial.end());
  return out;
}
}  // namespace detail

/// Number of stopping times of the subtree rooted at `from`; saturates at cap + 1.
inline std::uint64_t count_stopping_times(const MarketTree& tree, NodeId from = 0,
                                          std::uint64_t cap = std::numeric_limits<std::uint64_t>::max() - 1) {
  return detail::count_from(tree, from, cap);
}

/// All stopping times, each flagged exactly at its first-stop nodes. Order:
/// "stop now" first, then children's choices lexicographically.
inline std::vector<StoppingRule> enumerate_stopping_times(const MarketTree& tree,
                                                          std::uint64_t max_count = kMaxStoppingTimes) {
  const std::uint64_t count = count_stopping_times(tree, 0, max_count);
  if (count > max_count)
    throw GuardError("tree has more than " + std::to_string(max_count) + " stopping times");
  std::vector<StoppingRule> rules;
  rules.reserve(count);
  for (const auto& stops : detail::enumerate_from(tree, 0)) {
    StoppingRule r(tree.size(), 0);
    for (NodeId id : stops) r[id] = 1;
    rules.push_back(std::move(r));
  }
  return rules;
}

struct OracleDynkinResult {
  double value;
  std::size_t sigma_index;  // into enumerate_stopping_times order
  std::uint64_t pairs;
};

/// min over sigma of max over tau of E Q(sigma, tau), all pairs enumerated.
template <LossFunction Loss>
OracleDynkinResult oracle_dynkin(const MarketTree& tree, const GameClaim& claim, const Loss& loss,
                                 const WealthProcess& wealth, std::uint64_t max_rules = 5000) {
  claim.check_topology(tree);
  if (wealth.value.size() != tree.size()) throw StructureError("wealth missing on some nodes");
  const auto rules = enumerate_stopping_times(tree, max_rules);
  const int N = tree.horizon();
  const NodeId first_leaf = tree.layer_begin(N);
  const std::size_t leaves = tree.size() - first_leaf;

  std::vector<double> upper_loss(tree.size()), lower_loss(tree.size());
  for (NodeId id = 0; id < tree.size(); ++id) {
    upper_loss[id] = loss(claim.upper(id) - wealth.value[id]);
    lower_loss[id] = loss(claim.lower(id) - wealth.value[id]);
  }
  std::vector<std::vector<NodeId>> paths(leaves);
  std::vector<double> prob(leaves);
  for (std::size_t l = 0; l < leaves; ++l) {
    paths[l] = tree.ancestry(first_leaf + l);
    prob[l] = tree.node(first_leaf + l).probability;
  }
  // stop[r][l]: (time, node) where rule r stops on leaf path l
  std::vector<std::vector<std::pair<int, NodeId>>> stop(rules.size(), std::vector<std::pair<int, NodeId>>(leaves));
  for (std::size_t r = 0; r < rules.size(); ++r)
    for (std::size_t l = 0; l < leaves; ++l) {
      const int t = detail::stop_time(tree, rules[r], paths[l]);
      stop[r][l] = {t, paths[l][static_cast<std::size_t>(t)]};
    }

  OracleDynkinResult best{std::numeric_limits<double>::infinity(), 0, 0};
  for (std::size_t s = 0; s < rules.size(); ++s) {
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < rules.size(); ++t) {
      double e = 0.0;
      for (std::size_t l = 0; l < leaves; ++l) {
        const auto [m, ms] = stop[s][l];
        const auto [n, ns] = stop[t][l];
        e += prob[l] * (m < n ? upper_loss[ms] : lower_loss[ns]);
      }
      ++best.pairs;
      worst = std::max(worst, e);
    }
    if (worst < best.value) {
      best.value = worst;
      best.sigma_index = s;
    }
  }
  return best;
}

struct OracleOptions {
  std::size_t grid_points = 16;  // positions per node and round, uniform over G
  std::size_t zoom_rounds = 0;   // extra rounds on a shrinking window around the incumbent
  std::uint64_t max_strategies = 2'000'000;  // per round
  int max_horizon = 3;
  std::size_t max_atoms = 3;
};

struct OracleRiskResult {
  double value;
  double z_gap;  // largest position spacing of the final round at the incumbent
  std::uint64_t strategies;
  WealthProcess strategy;
};

namespace detail {

/// Wealth and positions when node j uses fraction t[j] of its admissible
/// interval (positions run from the lower to the upper end).
inline void strategy_from_fractions(const MarketTree& tree, double x, const std::vector<NodeId>& free_nodes,
                                    const std::vector<double>& fraction, WealthProcess& w) {
  w.value.assign(tree.size(), 0.0);
  w.position.assign(tree.size(), 0.0);
  w.value[0] = x;
  std::size_t j = 0;
  for (NodeId id = 0; id < tree.size(); ++id) {
    const auto& node = tree.node(id);
    if (id > 0) {
      w.value[id] = w.value[node.parent] + w.position[node.parent] * (node.price - tree.node(node.parent).price);
    }
    if (j < free_nodes.size() && free_nodes[j] == id) {
      const double y = std::max(w.value[id], 0.0);
      const double a = node.next.atoms().front().value;
      const double b = node.next.atoms().back().value;
      const double lo = -y / (node.price * b);
      const double hi = -y / (node.price * a);
      w.position[id] = lo + fraction[j] * (hi - lo);
      ++j;
    }
  }
}

/// min over sigma of the buyer's best reply, H verbatim.
template <LossFunction Loss>
double min_over_sigma(const MarketTree& tree, const GameClaim& claim, const Loss& loss, const WealthProcess& w,
                      const std::vector<StoppingRule>& sigmas, std::vector<double>& scratch) {
  scratch.resize(tree.size());
  double best = std::numeric_limits<double>::infinity();
  for (const auto& sigma : sigmas) {
    for (NodeId id = tree.size(); id-- > 0;) {
      const double x = w.value[id];
      const double lower = loss(claim.lower(id) - x);
      if (tree.is_terminal(id)) {
        scratch[id] = lower;
      } else if (sigma[id]) {
        scratch[id] = std::max(lower, loss(claim.upper(id) - x));
      } else {
        const auto& node = tree.node(id);
        double cont = 0.0;
        const auto atoms = node.next.atoms();
        for (std::size_t b = 0; b < atoms.size(); ++b) cont += atoms[b].probability * scratch[node.first_child + b];
        scratch[id] = std::max(lower, cont);
      }
    }
    best = std::min(best, scratch[0]);
  }
  return best;
}

}  // namespace detail

/// Approximate inf over admissible strategies of the game's shortfall risk.
template <LossFunction Loss>
OracleRiskResult oracle_risk(const MarketTree& tree, const GameClaim& claim, const Loss& loss, double x,
                             const OracleOptions& opt = {}) {
  claim.check_topology(tree);
  if (!(x > 0.0)) throw DomainError("initial capital must be positive");
  if (tree.horizon() > opt.max_horizon)
    throw GuardError("oracle limited to horizon " + std::to_string(opt.max_horizon));
  if (opt.grid_points < 2 || opt.grid_points > 64) throw GuardError("oracle grid must have 2..64 positions per node");
  if (opt.zoom_rounds > 0 && opt.grid_points < 4) throw DomainError("zooming needs at least 4 positions per node");

  std::vector<NodeId> free_nodes;
  for (NodeId id = 0; id < tree.size(); ++id) {
    if (tree.is_terminal(id)) continue;
    if (tree.child_count(id) > opt.max_atoms)
      throw GuardError("oracle limited to " + std::to_string(opt.max_atoms) + " atoms per node");
    if (!support_bounds(tree, id).degenerate()) free_nodes.push_back(id);
  }
  std::uint64_t per_round = 1;
  for (std::size_t j = 0; j < free_nodes.size(); ++j)
    per_round = detail::saturating_mul(per_round, opt.grid_points, opt.max_strategies);
  if (per_round > opt.max_strategies)
    throw GuardError("oracle would enumerate more than " + std::to_string(opt.max_strategies) + " strategies");

  const auto sigmas = enumerate_stopping_times(tree);
  const std::size_t G = opt.grid_points;
  const std::size_t F = free_nodes.size();

  std::vector<double> scratch;
  WealthProcess w;
  OracleRiskResult result{std::numeric_limits<double>::infinity(), 0.0, 0, {}};
  std::vector<double> best_t(F, 0.0);

  auto run_round = [&](const std::vector<std::vector<double>>& candidates) {
    std::vector<std::size_t> digit(F, 0);
    std::vector<double> t(F);
    while (true) {
      for (std::size_t j = 0; j < F; ++j) t[j] = candidates[j][digit[j]];
      detail::strategy_from_fractions(tree, x, free_nodes, t, w);
      const double v = detail::min_over_sigma(tree, claim, loss, w, sigmas, scratch);
      ++result.strategies;
      if (v < result.value) {
        result.value = v;
        result.strategy = w;
        best_t = t;
      }
      std::size_t j = 0;
      while (j < F && ++digit[j] == candidates[j].size()) digit[j++] = 0;
      if (j == F) break;
    }
  };

  std::vector<std::vector<double>> candidates(F);
  double spacing = 1.0 / static_cast<double>(G - 1);
  for (auto& c : candidates) {
    c.resize(G);
    for (std::size_t i = 0; i < G; ++i) c[i] = static_cast<double>(i) / static_cast<double>(G - 1);
  }
  run_round(candidates);

  for (std::size_t r = 0; r < opt.zoom_rounds; ++r) {
    const double next_spacing = 2.0 * spacing / static_cast<double>(G - 1);
    for (std::size_t j = 0; j < F; ++j) {
      auto& c = candidates[j];
      c.assign(1, best_t[j]);  // incumbent first: a round never loses ground
      for (std::size_t i = 0; i < G; ++i) {
        const double t = std::clamp(best_t[j] - spacing + next_spacing * static_cast<double>(i), 0.0, 1.0);
        if (std::find(c.begin(), c.end(), t) == c.end()) c.push_back(t);
      }
    }
    spacing = next_spacing;
    run_round(candidates);
  }

  for (std::size_t j = 0; j < F; ++j) {
    const NodeId id = free_nodes[j];
    const auto& node = tree.node(id);
    const double y = std::max(result.strategy.value[id], 0.0);
    const double width = y / node.price * (1.0 / node.next.atoms().back().value - 1.0 / node.next.atoms().front().value);
    result.z_gap = std::max(result.z_gap, spacing * width);
  }
  return result;
}

}  // namespace shortfall

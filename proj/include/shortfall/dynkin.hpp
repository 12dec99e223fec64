#pragma once

/// Dynkin stopping game for a fixed hedging strategy.
///
/// Given the portfolio value X_n of a strategy at every node, the seller
/// (minimizer) picks a cancellation time and the buyer (maximizer) an
/// exercise time; the loss is l(U_m - X_m) if the seller stops first and
/// l(W_n - X_n) otherwise. solve_dynkin runs the min/max backward
/// recursion, starting from l(U_N - X_N) at the horizon.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "shortfall/errors.hpp"
#include "shortfall/market.hpp"
#include "shortfall/payoff.hpp"

namespace shortfall {

/// Adapted stopping rule: one stop/continue flag per node. A path stops at
/// its first flagged node; the horizon always stops.
using StoppingRule = std::vector<std::uint8_t>;

/// Relative tolerance for "loss equals game value" first-hitting tests.
inline constexpr double kStopTolerance = 1e-12;
inline constexpr double kSelfFinancingTolerance = 1e-10;
inline constexpr double kWealthTolerance = 1e-10;

inline bool hits(double loss_value, double game_value) {
  return std::abs(loss_value - game_value) <= kStopTolerance * (1.0 + std::abs(game_value));
}

/// Portfolio value per node, with the stock position held from each node
/// into its children when known (zero at the horizon).
struct WealthProcess {
  std::vector<double> value;
  std::vector<double> position;

  bool has_positions() const { return !position.empty(); }

  /// Hold cash only: X == x everywhere.
  static WealthProcess constant(const MarketTree& tree, double x) {
    return {std::vector<double>(tree.size(), x), std::vector<double>(tree.size(), 0.0)};
  }

  /// Self-financing forward recursion X_child = X + position * (S_child - S).
  static WealthProcess from_positions(const MarketTree& tree, double x0, std::vector<double> positions) {
    if (positions.size() != tree.size()) throw StructureError("one position per node required");
    WealthProcess w{std::vector<double>(tree.size(), 0.0), std::move(positions)};
    w.value[0] = x0;
    for (NodeId id = 1; id < tree.size(); ++id) {
      const auto& node = tree.node(id);
      const auto& parent = tree.node(node.parent);
      w.value[id] = w.value[node.parent] + w.position[node.parent] * (node.price - parent.price);
    }
    for (NodeId id = tree.layer_begin(tree.horizon()); id < tree.size(); ++id) w.position[id] = 0.0;
    return w;
  }

  /// Cash in the bond after rebalancing at the node.
  double cash(const MarketTree& tree, NodeId id) const {
    return value.at(id) - (has_positions() ? position.at(id) : 0.0) * tree.node(id).price;
  }
};

struct WealthIssue {
  NodeId node;
  std::string reason;
};

/// Nodes where X < -1e-10 or, when positions are stored, where the
/// self-financing identity fails by more than 1e-10.
inline std::vector<WealthIssue> check_wealth(const MarketTree& tree, const WealthProcess& wealth) {
  if (wealth.value.size() != tree.size()) throw StructureError("wealth process does not cover the tree");
  std::vector<WealthIssue> out;
  for (NodeId id = 0; id < tree.size(); ++id) {
    if (!(wealth.value[id] >= -kWealthTolerance)) out.push_back({id, "negative portfolio value"});
    if (id == 0 || !wealth.has_positions()) continue;
    const auto& node = tree.node(id);
    const double expected =
        wealth.value[node.parent] + wealth.position[node.parent] * (node.price - tree.node(node.parent).price);
    if (std::abs(expected - wealth.value[id]) > kSelfFinancingTolerance * (1.0 + std::abs(expected)))
      out.push_back({id, "self-financing identity violated"});
  }
  return out;
}

struct DynkinSolution {
  std::vector<double> psi;
  double risk = 0.0;
  StoppingRule seller;  // flags where l(U - X) == psi
  StoppingRule buyer;   // flags where l(W - X) == psi
};

namespace detail {
inline void check_inputs(const MarketTree& tree, const GameClaim& claim, const WealthProcess& wealth) {
  claim.check_topology(tree);
  if (wealth.value.size() != tree.size()) throw StructureError("wealth missing on some nodes");
}

/// Stop time along the path ending at `leaf` (first flagged ancestor).
inline int stop_time(const MarketTree& tree, const StoppingRule& rule, std::span<const NodeId> ancestry) {
  for (std::size_t t = 0; t < ancestry.size(); ++t)
    if (rule[ancestry[t]]) return static_cast<int>(t);
  return tree.horizon();
}
}  // namespace detail

/// Q(m, n) = l(U_m - X_m) if m < n, l(W_n - X_n) otherwise, along a return path.
template <LossFunction Loss>
double q_payoff(const MarketTree& tree, const GameClaim& claim, const Loss& loss, const WealthProcess& wealth, int m,
                int n, std::span<const double> path) {
  detail::check_inputs(tree, claim, wealth);
  if (m < 0 || n < 0 || m > tree.horizon() || n > tree.horizon()) throw StructureError("stopping time outside [0, N]");
  if (path.size() < static_cast<std::size_t>(std::max(m, n))) throw StructureError("path shorter than max(m, n)");
  if (m < n) {
    const NodeId id = tree.locate(path.first(static_cast<std::size_t>(m)));
    return loss(claim.upper(id) - wealth.value[id]);
  }
  const NodeId id = tree.locate(path.first(static_cast<std::size_t>(n)));
  return loss(claim.lower(id) - wealth.value[id]);
}

template <LossFunction Loss>
DynkinSolution solve_dynkin(const MarketTree& tree, const GameClaim& claim, const Loss& loss,
                            const WealthProcess& wealth) {
  detail::check_inputs(tree, claim, wealth);
  DynkinSolution sol;
  sol.psi.assign(tree.size(), 0.0);
  sol.seller.assign(tree.size(), 0);
  sol.buyer.assign(tree.size(), 0);
  for (NodeId id = tree.size(); id-- > 0;) {
    const auto& node = tree.node(id);
    const double x = wealth.value[id];
    const double upper_loss = loss(claim.upper(id) - x);
    const double lower_loss = loss(claim.lower(id) - x);
    if (tree.is_terminal(id)) {
      sol.psi[id] = upper_loss;
      sol.seller[id] = sol.buyer[id] = 1;
      continue;
    }
    double cont = 0.0;
    const auto atoms = node.next.atoms();
    for (std::size_t b = 0; b < atoms.size(); ++b) cont += atoms[b].probability * sol.psi[node.first_child + b];
    const double v = std::min(upper_loss, std::max(lower_loss, cont));
    sol.psi[id] = v;
    sol.seller[id] = hits(upper_loss, v);
    sol.buyer[id] = hits(lower_loss, v);
  }
  sol.risk = sol.psi[0];
  return sol;
}

/// sup over buyer stopping times of E Q(sigma, tau) for a fixed seller rule,
/// by a one-sided backward induction. At a seller stop before the
/// horizon the buyer collects max(l(W - X), l(U - X)); at the horizon
/// H(N, N) = W_N applies.
template <LossFunction Loss>
double risk_given_sigma(const MarketTree& tree, const GameClaim& claim, const Loss& loss, const WealthProcess& wealth,
                        const StoppingRule& sigma) {
  detail::check_inputs(tree, claim, wealth);
  if (sigma.size() != tree.size()) throw StructureError("stopping rule does not cover the tree");
  std::vector<double> v(tree.size(), 0.0);
  for (NodeId id = tree.size(); id-- > 0;) {
    const auto& node = tree.node(id);
    const double x = wealth.value[id];
    const double lower_loss = loss(claim.lower(id) - x);
    if (tree.is_terminal(id)) {
      v[id] = lower_loss;
    } else if (sigma[id]) {
      v[id] = std::max(lower_loss, loss(claim.upper(id) - x));
    } else {
      double cont = 0.0;
      const auto atoms = node.next.atoms();
      for (std::size_t b = 0; b < atoms.size(); ++b) cont += atoms[b].probability * v[node.first_child + b];
      v[id] = std::max(lower_loss, cont);
    }
  }
  return v[0];
}

/// E Q(sigma, tau) by exact enumeration of terminal paths.
template <LossFunction Loss>
double stopped_expectation(const MarketTree& tree, const GameClaim& claim, const Loss& loss,
                           const WealthProcess& wealth, const StoppingRule& sigma, const StoppingRule& tau) {
  detail::check_inputs(tree, claim, wealth);
  if (sigma.size() != tree.size() || tau.size() != tree.size())
    throw StructureError("stopping rule does not cover the tree");
  double total = 0.0;
  const int N = tree.horizon();
  for (NodeId leaf = tree.layer_begin(N); leaf < tree.size(); ++leaf) {
    const auto path = tree.ancestry(leaf);
    const int m = detail::stop_time(tree, sigma, path);
    const int n = detail::stop_time(tree, tau, path);
    double q;
    if (m < n) {
      const NodeId id = path[static_cast<std::size_t>(m)];
      q = loss(claim.upper(id) - wealth.value[id]);
    } else {
      const NodeId id = path[static_cast<std::size_t>(n)];
      q = loss(claim.lower(id) - wealth.value[id]);
    }
    total += tree.node(leaf).probability * q;
  }
  return total;
}

}  // namespace shortfall

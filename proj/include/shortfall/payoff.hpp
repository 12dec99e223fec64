#pragma once

/// Game (cancellable) contingent claims and shortfall loss functions.
///
/// The seller may cancel at m paying the upper payoff U_m, the buyer may
/// exercise at n receiving the lower payoff W_n; the claim pays
/// H(m, n) = U_m if m < n and W_n otherwise.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "shortfall/errors.hpp"
#include "shortfall/market.hpp"

namespace shortfall {

/// Convex, nondecreasing, zero on (-inf, 0].
template <class L>
concept LossFunction = std::copy_constructible<L> && requires(const L& loss, double v) {
  { loss(v) } -> std::convertible_to<double>;
};

/// l(v) = (v+)^p / p, p >= 1. p = 1 is the expected-shortfall loss v+.
class PowerLoss {
 public:
  explicit PowerLoss(double p = 1.0) : p_(p) {
    if (!(p >= 1.0) || !std::isfinite(p)) throw DomainError("power loss exponent must be >= 1");
  }

  double operator()(double v) const {
    if (!(v > 0.0)) return 0.0;
    if (p_ == 1.0) return v;
    if (p_ == 2.0) return 0.5 * v * v;
    return std::pow(v, p_) / p_;
  }

  double exponent() const { return p_; }

 private:
  double p_;
};

/// Sampled shape check on [lo, hi]: zero on nonpositives, nondecreasing,
/// midpoint convex within 1e-12.
template <LossFunction Loss>
bool check_loss_shape(const Loss& loss, double lo = -10.0, double hi = 10.0, std::size_t samples = 2001) {
  double prev = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const double v = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(samples - 1);
    const double lv = loss(v);
    if (!std::isfinite(lv) || lv < 0.0) return false;
    if (v <= 0.0 && lv != 0.0) return false;
    if (i > 0 && lv < prev) return false;
    prev = lv;
    if (i + 1 < samples) {
      const double w = lo + (hi - lo) * static_cast<double>(i + 1) / static_cast<double>(samples - 1);
      const double mid = loss(0.5 * (v + w));
      const double chord = 0.5 * (lv + loss(w));
      if (mid > chord + 1e-12 * (1.0 + std::abs(chord))) return false;
    }
  }
  return true;
}

enum class OptionKind { call, put };

inline double vanilla_payoff(OptionKind kind, double price, double strike) {
  return kind == OptionKind::call ? std::max(price - strike, 0.0) : std::max(strike - price, 0.0);
}

/// Upper and lower payoff per tree node.
class GameClaim {
 public:
  GameClaim() = default;

  GameClaim(std::vector<double> upper, std::vector<double> lower) : upper_(std::move(upper)), lower_(std::move(lower)) {
    if (upper_.size() != lower_.size()) throw StructureError("upper and lower payoff tables differ in size");
  }

  /// Per-layer tables, `upper[n][i]` for the i-th time-n node.
  static GameClaim from_tables(const MarketTree& tree, const std::vector<std::vector<double>>& upper,
                               const std::vector<std::vector<double>>& lower) {
    return GameClaim(flatten(tree, upper, "upper"), flatten(tree, lower, "lower"));
  }

  /// payoffs(node) -> {upper, lower}
  static GameClaim from_rule(const MarketTree& tree,
                             const std::function<std::pair<double, double>(const MarketTree::Node&)>& payoffs) {
    std::vector<double> up(tree.size()), lo(tree.size());
    for (NodeId id = 0; id < tree.size(); ++id) std::tie(up[id], lo[id]) = payoffs(tree.node(id));
    return GameClaim(std::move(up), std::move(lo));
  }

  std::size_t size() const { return upper_.size(); }
  double upper(NodeId id) const { return upper_.at(id); }
  double lower(NodeId id) const { return lower_.at(id); }
  std::span<const double> upper() const { return upper_; }
  std::span<const double> lower() const { return lower_; }

  double max_upper() const {
    double m = 0.0;
    for (double u : upper_) m = std::max(m, u);
    return m;
  }

  void check_topology(const MarketTree& tree) const {
    if (size() != tree.size())
      throw StructureError("claim defines " + std::to_string(size()) + " node payoffs, tree has " +
                           std::to_string(tree.size()) + " nodes");
  }

 private:
  static std::vector<double> flatten(const MarketTree& tree, const std::vector<std::vector<double>>& layers,
                                     const char* what) {
    if (layers.size() != static_cast<std::size_t>(tree.horizon()) + 1)
      throw StructureError(std::string(what) + " table needs horizon + 1 layers");
    std::vector<double> out;
    out.reserve(tree.size());
    for (int n = 0; n <= tree.horizon(); ++n) {
      if (layers[n].size() != tree.layer_size(n))
        throw StructureError(std::string(what) + " table layer " + std::to_string(n) + " has " +
                             std::to_string(layers[n].size()) + " entries, tree has " +
                             std::to_string(tree.layer_size(n)) + " nodes");
      out.insert(out.end(), layers[n].begin(), layers[n].end());
    }
    return out;
  }

  std::vector<double> upper_;
  std::vector<double> lower_;
};

/// Lower payoff = vanilla payoff on S_n; upper = lower + penalty before the
/// horizon. At the horizon the penalty is added only when requested, so by
/// default U_N = W_N.
inline GameClaim make_vanilla_game(const MarketTree& tree, OptionKind kind, double strike, double penalty,
                                   bool penalty_at_horizon = false) {
  if (!(penalty >= 0.0)) throw DomainError("cancellation penalty must be nonnegative");
  return GameClaim::from_rule(tree, [&](const MarketTree::Node& node) {
    const double lower = vanilla_payoff(kind, node.price, strike);
    const bool add = node.time < tree.horizon() || penalty_at_horizon;
    return std::pair{lower + (add ? penalty : 0.0), lower};
  });
}

/// Upper = lower + penalty (same horizon convention as make_vanilla_game).
inline GameClaim make_penalty_game(const MarketTree& tree, const std::vector<std::vector<double>>& lower,
                                   double penalty, bool penalty_at_horizon = false) {
  if (!(penalty >= 0.0)) throw DomainError("cancellation penalty must be nonnegative");
  auto upper = lower;
  const std::size_t last = upper.empty() ? 0 : upper.size() - 1;
  for (std::size_t n = 0; n < upper.size(); ++n)
    if (n < last || penalty_at_horizon)
      for (double& u : upper[n]) u += penalty;
  return GameClaim::from_tables(tree, upper, lower);
}

struct ClaimViolation {
  NodeId node;
  int time;
  std::size_t index;
  double upper;
  double lower;
  std::string reason;
};

/// Nodes violating U >= W >= 0 (or carrying non-finite payoffs).
inline std::vector<ClaimViolation> validate_claim(const GameClaim& claim, const MarketTree& tree) {
  claim.check_topology(tree);
  std::vector<ClaimViolation> report;
  for (NodeId id = 0; id < tree.size(); ++id) {
    const double u = claim.upper(id), w = claim.lower(id);
    const auto& node = tree.node(id);
    auto add = [&](std::string why) { report.push_back({id, node.time, tree.index_in_layer(id), u, w, std::move(why)}); };
    if (!std::isfinite(u) || !std::isfinite(w))
      add("non-finite payoff");
    else if (w < 0.0)
      add("lower payoff is negative");
    else if (u < w)
      add("upper payoff below lower payoff");
  }
  return report;
}

/// Terminal nodes where U_N != W_N. The backward recursions start from the
/// upper payoff at the horizon, whereas H(N, N) = W_N; the two conventions
/// agree exactly when this list is empty.
inline std::vector<NodeId> terminal_payoff_mismatch(const GameClaim& claim, const MarketTree& tree) {
  claim.check_topology(tree);
  std::vector<NodeId> out;
  const int N = tree.horizon();
  for (NodeId id = tree.layer_begin(N); id < tree.size(); ++id)
    if (claim.upper(id) != claim.lower(id)) out.push_back(id);
  return out;
}

/// H(m, n) along a return path of length >= max(m, n).
inline double game_payoff(const GameClaim& claim, const MarketTree& tree, int m, int n, std::span<const double> path) {
  if (m < 0 || n < 0 || m > tree.horizon() || n > tree.horizon()) throw StructureError("stopping time outside [0, N]");
  const auto need = static_cast<std::size_t>(std::max(m, n));
  if (path.size() < need) throw StructureError("path shorter than max(m, n)");
  if (m < n) return claim.upper(tree.locate(path.first(static_cast<std::size_t>(m))));
  return claim.lower(tree.locate(path.first(static_cast<std::size_t>(n))));
}

}  // namespace shortfall

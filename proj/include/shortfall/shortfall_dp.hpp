#pragma once

/// Minimal shortfall risk of a game claim by backward induction over
/// (tree node, portfolio value).
///
/// For each non-terminal node and wealth y the hedger picks a stock
/// position z inside the admissible interval G(node, y) (the positions that
/// keep next-period wealth y + z * u * S nonnegative for every atom u). The
/// local objective is
///
///     I(node, y, z) = min( l(U - y), max( l(W - y), F(node, y, z) ) ),
///     F(node, y, z) = sum_u p_u * J(child_u, y + z * u * S),
///
/// and J(node, y) = inf over z in G of I, with J = l(U_N - y) at the horizon.
/// J is tabulated on a uniform wealth grid; off-grid values are linearly
/// interpolated, except at the horizon where the closed form is used.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shortfall/dynkin.hpp"
#include "shortfall/errors.hpp"
#include "shortfall/market.hpp"
#include "shortfall/parallel.hpp"
#include "shortfall/payoff.hpp"

namespace shortfall {

/// How extract_strategy turns the tabulated policy into a position at an
/// off-grid portfolio value.
enum class PolicyLookup {
  reoptimize,     // re-run the interval search at the exact wealth
  nearest_lower,  // position stored at the grid point just below, projected into G
};

struct SolverOptions {
  std::size_t wealth_intervals = 2000;  // grid has wealth_intervals + 1 points
  std::size_t z_points = 2000;          // scan uses z_points + 1 positions
  std::size_t refinements = 30;
  std::optional<double> y_max;
  PolicyLookup lookup = PolicyLookup::reoptimize;
  unsigned threads = 0;
};

/// Relative tolerance used to decide that two objective values tie.
inline constexpr double kTieTolerance = 1e-12;
inline constexpr double kChildWealthTolerance = 1e-12;

/// Uniform grid {0, h, 2h, ..., y_max}, h = y_max / intervals.
class WealthGrid {
 public:
  WealthGrid(double y_max, std::size_t intervals) : y_max_(y_max), intervals_(intervals) {
    if (!(y_max > 0.0) || !std::isfinite(y_max)) throw DomainError("wealth grid upper end must be positive");
    if (intervals < 1) throw DomainError("wealth grid needs at least one interval");
    step_ = y_max_ / static_cast<double>(intervals_);
    inv_step_ = static_cast<double>(intervals_) / y_max_;
  }

  /// Default upper end max(2x, 1.1 * max U); an explicit one must cover
  /// both the capital and every upper payoff.
  static WealthGrid for_capital(double x, double max_upper, std::size_t intervals, std::optional<double> y_max = {}) {
    const double lo_bound = std::max(x, max_upper);
    double top = y_max ? *y_max : std::max(2.0 * x, 1.1 * max_upper);
    if (top < lo_bound)
      throw DomainError("wealth grid upper end " + std::to_string(top) + " is below max(capital, max upper payoff) = " +
                        std::to_string(lo_bound));
    return WealthGrid(top, intervals);
  }

  std::size_t size() const { return intervals_ + 1; }
  std::size_t intervals() const { return intervals_; }
  double step() const { return step_; }
  double inv_step() const { return inv_step_; }
  double y_max() const { return y_max_; }
  double point(std::size_t k) const {
    return k >= intervals_ ? y_max_ : y_max_ * static_cast<double>(k) / static_cast<double>(intervals_);
  }
  /// Largest k with point(k) <= y (clamped to the grid).
  std::size_t lower_index(double y) const {
    if (!(y > 0.0)) return 0;
    if (y >= y_max_) return intervals_;
    auto k = static_cast<std::size_t>(y * inv_step_);
    if (k > intervals_) k = intervals_;
    while (k > 0 && point(k) > y) --k;
    while (k < intervals_ && point(k + 1) <= y) ++k;
    return k;
  }

 private:
  double y_max_;
  std::size_t intervals_;
  double step_;
  double inv_step_;
};

/// Positions z keeping y + z * u * S >= 0 for every atom u.
struct AdmissibleInterval {
  bool degenerate = false;  // point mass at zero: any z, z irrelevant
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double z, double tol = 1e-12) const {
    if (degenerate) return true;
    const double slack = tol * (1.0 + std::max(std::abs(lo), std::abs(hi)));
    return z >= lo - slack && z <= hi + slack;
  }
  double project(double z) const { return degenerate ? z : std::clamp(z, lo, hi); }
};

inline AdmissibleInterval admissible_interval(const MarketTree& tree, NodeId id, double y) {
  if (!(y >= 0.0)) throw DomainError("admissible interval needs nonnegative wealth, got " + std::to_string(y));
  const SupportBounds sb = support_bounds(tree, id);
  if (sb.degenerate()) return {true, 0.0, 0.0};
  const double kappa = tree.node(id).price;
  if (y == 0.0) return {false, 0.0, 0.0};
  return {false, -y / (kappa * sb.b), -y / (kappa * sb.a)};
}

/// J per node and wealth grid point.
template <LossFunction Loss>
class ValueField {
 public:
  ValueField(const MarketTree& tree, const GameClaim& claim, Loss loss, WealthGrid grid)
      : tree_(&tree), claim_(&claim), loss_(std::move(loss)), grid_(grid), values_(tree.size() * grid.size(), 0.0) {
    claim.check_topology(tree);
  }

  const MarketTree& tree() const { return *tree_; }
  const GameClaim& claim() const { return *claim_; }
  const Loss& loss() const { return loss_; }
  const WealthGrid& grid() const { return grid_; }

  std::span<const double> values(NodeId id) const {
    return std::span<const double>(values_).subspan(id * grid_.size(), grid_.size());
  }
  std::span<double> values(NodeId id) { return std::span<double>(values_).subspan(id * grid_.size(), grid_.size()); }

  /// Piecewise-linear in y, J(y_max) above the grid.
  double interpolate(NodeId id, double y) const { return interpolate(values(id).data(), y); }

  double interpolate(const double* v, double y) const {
    if (!(y > 0.0)) return v[0];
    if (y >= grid_.y_max()) return v[grid_.intervals()];
    const double s = y * grid_.inv_step();
    auto k = static_cast<std::size_t>(s);
    if (k >= grid_.intervals()) return v[grid_.intervals()];
    const double t = s - static_cast<double>(k);
    return v[k] + t * (v[k + 1] - v[k]);
  }

  /// J(node, y): closed form l(U_N - y) at the horizon, interpolated elsewhere.
  double operator()(NodeId id, double y) const {
    if (y < 0.0) {
      if (y < -kChildWealthTolerance * (1.0 + std::abs(y)))
        throw AdmissibilityError("value requested at negative wealth " + std::to_string(y));
      y = 0.0;
    }
    if (tree_->is_terminal(id)) return loss_(claim_->upper(id) - y);
    return interpolate(id, y);
  }

 private:
  const MarketTree* tree_;
  const GameClaim* claim_;
  Loss loss_;
  WealthGrid grid_;
  std::vector<double> values_;
};

/// Chosen position per non-terminal node and wealth grid point.
class HedgePolicy {
 public:
  HedgePolicy(std::size_t nodes, std::size_t grid_points)
      : grid_points_(grid_points), positions_(nodes * grid_points, 0.0) {}

  double at(NodeId id, std::size_t k) const { return positions_.at(id * grid_points_ + k); }
  std::span<double> row(NodeId id) { return std::span<double>(positions_).subspan(id * grid_points_, grid_points_); }
  std::span<const double> row(NodeId id) const {
    return std::span<const double>(positions_).subspan(id * grid_points_, grid_points_);
  }

 private:
  std::size_t grid_points_;
  std::vector<double> positions_;
};

struct Minimum {
  double value;     // lowest objective value found
  double position;  // smallest position whose value ties with it
  double argmin;    // position where `value` was attained
};

namespace detail {

/// I(node, y, .) with the node's children pre-bound; the hot loop of the
/// induction.
template <LossFunction Loss>
class LocalObjective {
 public:
  LocalObjective(const ValueField<Loss>& field, NodeId id) : field_(&field), node_(id) {
    const MarketTree& tree = field.tree();
    if (tree.is_terminal(id)) throw StructureError("local objective at a terminal node");
    const auto& node = tree.node(id);
    const auto atoms = node.next.atoms();
    children_.reserve(atoms.size());
    for (std::size_t b = 0; b < atoms.size(); ++b) {
      const NodeId c = node.first_child + b;
      children_.push_back({atoms[b].probability, atoms[b].value * node.price, field.values(c).data(),
                           tree.is_terminal(c), field.claim().upper(c)});
    }
    bounds_ = support_bounds(node.next);
  }

  void set_wealth(double y) {
    y_ = y;
    const GameClaim& claim = field_->claim();
    upper_loss_ = field_->loss()(claim.upper(node_) - y);
    lower_loss_ = field_->loss()(claim.lower(node_) - y);
    interval_ = admissible_interval(field_->tree(), node_, y);
  }

  double wealth() const { return y_; }
  double upper_loss() const { return upper_loss_; }
  double lower_loss() const { return lower_loss_; }
  const AdmissibleInterval& interval() const { return interval_; }

  double continuation(double z) const {
    double total = 0.0;
    for (const Child& c : children_) {
      double w = y_ + z * c.move;
      if (w < 0.0) {
        if (w < -kChildWealthTolerance * (1.0 + y_))
          throw AdmissibilityError("position " + std::to_string(z) + " drives child wealth to " + std::to_string(w));
        w = 0.0;
      }
      const double v = c.terminal ? field_->loss()(c.upper - w) : field_->interpolate(c.values, w);
      total += c.probability * v;
    }
    return total;
  }

  double operator()(double z) const { return std::min(upper_loss_, std::max(lower_loss_, continuation(z))); }

 private:
  struct Child {
    double probability;
    double move;  // u * S at the parent
    const double* values;
    bool terminal;
    double upper;
  };

  const ValueField<Loss>* field_;
  NodeId node_;
  std::vector<Child> children_;
  SupportBounds bounds_{};
  double y_ = 0.0;
  double upper_loss_ = 0.0;
  double lower_loss_ = 0.0;
  AdmissibleInterval interval_{};
};

inline double tie_slack(double v) { return kTieTolerance * (1.0 + std::abs(v)); }

/// Candidate replaces the incumbent if clearly lower, or tied and further left.
inline bool improves(double z, double v, const Minimum& best) {
  if (v < best.value - tie_slack(best.value)) return true;
  return v <= best.value + tie_slack(best.value) && z < best.position;
}

template <LossFunction Loss>
Minimum minimize(const LocalObjective<Loss>& objective, std::size_t z_points, std::size_t refinements,
                 const std::optional<double>& warm, std::vector<double>& scratch) {
  const AdmissibleInterval& g = objective.interval();
  if (g.degenerate) return {objective(0.0), 0.0, 0.0};
  if (g.hi <= g.lo) return {objective(g.lo), g.lo, g.lo};
  // Upper loss zero caps the objective at zero for every z.
  if (objective.upper_loss() == 0.0) return {0.0, g.lo, g.lo};

  const std::size_t K = std::max<std::size_t>(z_points, 1);
  const double width = g.hi - g.lo;
  auto at = [&](std::size_t k) { return k == K ? g.hi : g.lo + width * static_cast<double>(k) / static_cast<double>(K); };

  scratch.resize(K + 1);
  double vmin = std::numeric_limits<double>::infinity();
  std::size_t kmin = 0;
  for (std::size_t k = 0; k <= K; ++k) {
    scratch[k] = objective(at(k));
    if (scratch[k] < vmin) {
      vmin = scratch[k];
      kmin = k;
    }
  }
  std::size_t k0 = 0;
  while (scratch[k0] > vmin + tie_slack(vmin)) ++k0;
  Minimum best{scratch[k0], at(k0), at(k0)};
  double lowest = vmin, lowest_at = at(kmin);
  auto offer = [&](double z, double v) {
    if (v < lowest) {
      lowest = v;
      lowest_at = z;
    }
    if (improves(z, v, best)) best = {v, z, z};
  };

  double radius = width / static_cast<double>(K);
  for (std::size_t r = 0; r < refinements; ++r) {
    const double centre = best.position;
    const double left = std::max(g.lo, centre - 0.5 * radius);
    const double right = std::min(g.hi, centre + 0.5 * radius);
    const double vl = objective(left);
    const double vr = objective(right);
    // Left first so ties resolve to the smaller position.
    offer(left, vl);
    offer(right, vr);
    radius *= 0.5;
  }

  if (warm) {
    const double z = g.project(*warm);
    offer(z, objective(z));
  }
  return {lowest, best.position, lowest_at};
}

}  // namespace detail

template <LossFunction Loss>
double continuation_integral(const ValueField<Loss>& next, NodeId id, double y, double z) {
  detail::LocalObjective<Loss> obj(next, id);
  obj.set_wealth(y);
  return obj.continuation(z);
}

/// I(node, y, z); l(U_N - y) at the horizon.
template <LossFunction Loss>
double local_value(const ValueField<Loss>& next, NodeId id, double y, double z) {
  if (next.tree().is_terminal(id)) return next.loss()(next.claim().upper(id) - y);
  detail::LocalObjective<Loss> obj(next, id);
  obj.set_wealth(y);
  return obj(z);
}

/// J(node, y) and the smallest minimizing position: uniform scan of G with
/// z_points + 1 positions, then `refinements` halving rounds around the
/// incumbent. `warm` adds one extra candidate (projected into G).
template <LossFunction Loss>
Minimum minimize_over_interval(const ValueField<Loss>& next, NodeId id, double y, std::size_t z_points = 2000,
                               std::size_t refinements = 30, const std::optional<double>& warm = {}) {
  if (next.tree().is_terminal(id)) return {next.loss()(next.claim().upper(id) - y), 0.0, 0.0};
  detail::LocalObjective<Loss> obj(next, id);
  obj.set_wealth(y);
  std::vector<double> scratch;
  return detail::minimize(obj, z_points, refinements, warm, scratch);
}

template <LossFunction Loss>
struct ShortfallSolution {
  ValueField<Loss> field;
  HedgePolicy policy;
  SolverOptions options;
  double capital;
  double risk;           // J at the root, evaluated at the exact capital
  double root_position;  // its minimizing position

  const MarketTree& tree() const { return field.tree(); }
  const GameClaim& claim() const { return field.claim(); }
};

inline void require_valid_problem(const MarketTree& tree, const GameClaim& claim) {
  if (const auto arb = check_no_arbitrage(tree); !arb.empty())
    throw DomainError("market admits arbitrage at " + std::to_string(arb.size()) + " node(s), first at time " +
                      std::to_string(arb.front().time) + " index " + std::to_string(arb.front().index));
  if (const auto bad = validate_claim(claim, tree); !bad.empty())
    throw DomainError("claim invalid at " + std::to_string(bad.size()) + " node(s), first at time " +
                      std::to_string(bad.front().time) + " index " + std::to_string(bad.front().index) + ": " +
                      bad.front().reason);
}

/// Full backward induction. `tree` and `claim` must outlive the solution.
template <LossFunction Loss>
ShortfallSolution<Loss> solve(const MarketTree& tree, const GameClaim& claim, const Loss& loss, double x,
                              const SolverOptions& options = {}) {
  if (!(x > 0.0) || !std::isfinite(x)) throw DomainError("initial capital must be positive");
  require_valid_problem(tree, claim);
  const WealthGrid grid = WealthGrid::for_capital(x, claim.max_upper(), options.wealth_intervals, options.y_max);

  ValueField<Loss> field(tree, claim, loss, grid);
  HedgePolicy policy(tree.size(), grid.size());

  const int N = tree.horizon();
  for (NodeId id = tree.layer_begin(N); id < tree.size(); ++id) {
    auto v = field.values(id);
    for (std::size_t k = 0; k < grid.size(); ++k) v[k] = loss(claim.upper(id) - grid.point(k));
  }

  for (int n = N - 1; n >= 0; --n) {
    const NodeId begin = tree.layer_begin(n);
    parallel_for(begin, begin + tree.layer_size(n), options.threads, [&](NodeId id) {
      detail::LocalObjective<Loss> obj(field, id);
      auto values = field.values(id);
      auto positions = policy.row(id);
      std::vector<double> scratch;
      std::optional<double> warm;
      for (std::size_t k = 0; k < grid.size(); ++k) {
        obj.set_wealth(grid.point(k));
        // The previous grid point's minimizer stays admissible (G grows with y)
        // and keeps J nonincreasing in y.
        const Minimum m = detail::minimize(obj, options.z_points, options.refinements, warm, scratch);
        values[k] = m.value;
        positions[k] = m.position;
        warm = obj.interval().degenerate ? std::optional<double>{} : std::optional<double>{m.argmin};
      }
    });
  }

  const Minimum root = minimize_over_interval(field, 0, x, options.z_points, options.refinements);
  return ShortfallSolution<Loss>{std::move(field), std::move(policy), options, x, root.value, root.position};
}

/// J at the root for ascending capitals, each search seeded with the
/// previous capital's minimizer so the curve is nonincreasing.
template <LossFunction Loss>
std::vector<Minimum> risk_curve(const ShortfallSolution<Loss>& sol, std::span<const double> capitals) {
  std::vector<Minimum> out;
  out.reserve(capitals.size());
  double prev = -1.0;
  for (double x : capitals) {
    if (!(x > 0.0)) throw DomainError("initial capital must be positive");
    if (x > sol.field.grid().y_max()) throw DomainError("capital above the wealth grid");
    const std::optional<double> warm =
        out.empty() || x < prev ? std::nullopt : std::optional<double>(out.back().argmin);
    out.push_back(minimize_over_interval(sol.field, 0, x, sol.options.z_points, sol.options.refinements, warm));
    prev = x;
  }
  return out;
}

/// Position the optimal strategy takes at `id` when holding `wealth`.
template <LossFunction Loss>
double policy_position(const ShortfallSolution<Loss>& sol, NodeId id, double wealth) {
  const MarketTree& tree = sol.tree();
  if (tree.is_terminal(id)) return 0.0;
  if (wealth < 0.0) {
    if (wealth < -kWealthTolerance) throw AdmissibilityError("negative portfolio value " + std::to_string(wealth));
    wealth = 0.0;
  }
  const AdmissibleInterval g = admissible_interval(tree, id, wealth);
  if (g.degenerate) return 0.0;
  if (id == 0 && wealth == sol.capital) return sol.root_position;
  if (sol.options.lookup == PolicyLookup::nearest_lower) {
    const std::size_t k = sol.field.grid().lower_index(wealth);
    return g.project(sol.policy.at(id, k));
  }
  return minimize_over_interval(sol.field, id, wealth, sol.options.z_points, sol.options.refinements).position;
}

/// The optimal strategy's portfolio value and position at every node,
/// starting from X_0 = capital.
template <LossFunction Loss>
WealthProcess strategy_on_tree(const ShortfallSolution<Loss>& sol) {
  const MarketTree& tree = sol.tree();
  WealthProcess w{std::vector<double>(tree.size(), 0.0), std::vector<double>(tree.size(), 0.0)};
  w.value[0] = sol.capital;
  for (NodeId id = 0; id < tree.size(); ++id) {
    if (id > 0) {
      const auto& node = tree.node(id);
      w.value[id] = w.value[node.parent] + w.position[node.parent] * (node.price - tree.node(node.parent).price);
    }
    w.position[id] = policy_position(sol, id, w.value[id]);
  }
  return w;
}

struct StrategyStep {
  int time;
  double position;  // stock held from this time to the next
  double cash;      // bond holding after rebalancing
  double wealth;
};

/// Forward recursion of the optimal strategy along one return path.
template <LossFunction Loss>
std::vector<StrategyStep> extract_strategy(const ShortfallSolution<Loss>& sol, std::span<const double> path) {
  const MarketTree& tree = sol.tree();
  const NodeId end = tree.locate(path);
  const auto nodes = tree.ancestry(end);
  std::vector<StrategyStep> steps;
  steps.reserve(nodes.size());
  double x = sol.capital;
  for (std::size_t t = 0; t < nodes.size(); ++t) {
    const NodeId id = nodes[t];
    if (t > 0) {
      const auto& prev = steps.back();
      x = prev.wealth + prev.position * (tree.node(id).price - tree.node(nodes[t - 1]).price);
      if (x < -kWealthTolerance) throw AdmissibilityError("extracted strategy went negative");
    }
    const double z = policy_position(sol, id, x);
    steps.push_back({static_cast<int>(t), z, x - z * tree.node(id).price, x});
  }
  return steps;
}

/// Seller's cancellation rule for the optimal strategy: first time
/// l(U_n - X_n) equals the Dynkin value of X.
template <LossFunction Loss>
DynkinSolution optimal_stopping_rule(const ShortfallSolution<Loss>& sol) {
  return solve_dynkin(sol.tree(), sol.claim(), sol.field.loss(), strategy_on_tree(sol));
}

}  // namespace shortfall

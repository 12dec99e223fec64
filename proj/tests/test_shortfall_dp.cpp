#include <gtest/gtest.h>

#include <algorithm>
#include <limits>
#include <vector>

#include "support/instances.hpp"

using namespace shortfall;
using shortfall::fixtures::Rng;

namespace {

SolverOptions small_grid(std::size_t m = 400) {
  SolverOptions o;
  o.wealth_intervals = m;
  o.z_points = m;
  return o;
}

// One-period J_0 for l(v) = v+: the objective is piecewise linear and convex
// in z, so its minimum sits at an end of G or at a kink of the continuation.
double one_period_exact(const MarketTree& tree, const GameClaim& claim, double x) {
  const auto atoms = tree.root().next.atoms();
  const double s = tree.s0();
  const double lo = -x / (s * atoms.back().value), hi = -x / (s * atoms.front().value);
  std::vector<double> cand{lo, hi};
  for (std::size_t b = 0; b < atoms.size(); ++b) {
    const double z = (claim.upper(tree.child(0, b)) - x) / (atoms[b].value * s);
    if (z > lo && z < hi) cand.push_back(z);
  }
  double best = std::numeric_limits<double>::infinity();
  for (double z : cand) {
    double e = 0.0;
    for (std::size_t b = 0; b < atoms.size(); ++b)
      e += atoms[b].probability * std::max(0.0, claim.upper(tree.child(0, b)) - x - z * atoms[b].value * s);
    best = std::min(best, std::min(std::max(0.0, claim.upper(0) - x), std::max(std::max(0.0, claim.lower(0) - x), e)));
  }
  return best;
}

}  // namespace

TEST(WealthGrid, Points) {
  const WealthGrid g(2.0, 4);
  EXPECT_EQ(g.size(), 5u);
  EXPECT_EQ(g.point(0), 0.0);
  EXPECT_EQ(g.point(4), 2.0);
  EXPECT_EQ(g.point(1), 0.5);
  EXPECT_EQ(g.lower_index(0.49), 0u);
  EXPECT_EQ(g.lower_index(0.5), 1u);
  EXPECT_EQ(g.lower_index(7.0), 4u);
  EXPECT_EQ(WealthGrid::for_capital(0.5, 2.0, 10).y_max(), 2.2);
  EXPECT_EQ(WealthGrid::for_capital(3.0, 2.0, 10).y_max(), 6.0);
  EXPECT_THROW(WealthGrid::for_capital(0.5, 2.0, 10, 1.5), DomainError);
}

TEST(AdmissibleInterval, Bounds) {
  const auto tree = fixtures::binomial_one_step();
  const auto g = admissible_interval(tree, 0, 0.5);
  EXPECT_FALSE(g.degenerate);
  EXPECT_DOUBLE_EQ(g.lo, -1.0);
  EXPECT_DOUBLE_EQ(g.hi, 1.0);
  const auto z = admissible_interval(tree, 0, 0.0);
  EXPECT_EQ(z.lo, 0.0);
  EXPECT_EQ(z.hi, 0.0);
  EXPECT_THROW(admissible_interval(tree, 0, -0.1), DomainError);
  const auto chain = fixtures::degenerate_chain(2);
  EXPECT_TRUE(admissible_interval(chain, 0, 1.0).degenerate);
}

TEST(ShortfallDp, BinomialInstance) {
  const auto tree = fixtures::binomial_one_step();
  const auto claim = fixtures::binomial_one_step_claim(tree);
  const auto sol = solve(tree, claim, PowerLoss(), 0.5);
  EXPECT_NEAR(sol.risk, 0.5, 1e-9);
  EXPECT_NEAR(sol.root_position, 0.0, 1e-9);
  const auto rule = optimal_stopping_rule(sol);
  EXPECT_EQ(rule.seller[0], 0);
  EXPECT_NEAR(rule.risk, 0.5, 1e-9);
  EXPECT_EQ(solve(tree, claim, PowerLoss(), 2.0).risk, 0.0);
}

TEST(ShortfallDp, OnePeriodMatchesClosedForm) {
  Rng rng(21);
  for (int i = 0; i < 40; ++i) {
    const auto tree = fixtures::random_tree(rng, 1, 2, 4);
    const auto claim = fixtures::random_penalty_claim(rng, tree);
    const double x = fixtures::uniform(rng, 0.05, 1.0) * claim.max_upper() + 1e-3;
    const auto sol = solve(tree, claim, PowerLoss(), x, small_grid());
    EXPECT_NEAR(sol.risk, one_period_exact(tree, claim, x), 1e-9) << "instance " << i;
  }
}

TEST(ShortfallDp, TerminalLayerIsExact) {
  Rng rng(2);
  const auto tree = fixtures::random_tree(rng, 2, 2, 3);
  const auto claim = fixtures::random_penalty_claim(rng, tree);
  const PowerLoss loss(2.0);
  const auto sol = solve(tree, claim, loss, 0.3, small_grid(50));
  const NodeId leaf = tree.layer_begin(2);
  for (double y : {0.0, 0.0137, 0.2, 0.77})
    EXPECT_EQ(sol.field(leaf, y), loss(claim.upper(leaf) - y));
  EXPECT_THROW(sol.field(leaf, -0.1), AdmissibilityError);
}

TEST(ShortfallDp, StructuralBounds) {
  Rng rng(4);
  const PowerLoss loss(1.5);
  for (int i = 0; i < 10; ++i) {
    const auto tree = fixtures::random_tree(rng, 1 + i % 3, 2, 3);
    const auto claim = fixtures::random_penalty_claim(rng, tree);
    const auto sol = solve(tree, claim, loss, 0.4 * claim.max_upper() + 0.01, small_grid(200));
    const auto& grid = sol.field.grid();
    for (NodeId id = 0; id < tree.size(); ++id) {
      const auto v = sol.field.values(id);
      for (std::size_t k = 0; k < grid.size(); ++k) {
        const double y = grid.point(k);
        EXPECT_LE(v[k], loss(claim.upper(id) - y) + 1e-12);
        EXPECT_GE(v[k], loss(claim.lower(id) - y) - 1e-12);
        if (k > 0) {
          EXPECT_LE(v[k], v[k - 1] + 1e-12);
        }
        if (!tree.is_terminal(id)) {
          EXPECT_TRUE(admissible_interval(tree, id, y).contains(sol.policy.at(id, k)));
        }
      }
    }
  }
}

TEST(ShortfallDp, ZeroRiskAboveMaxUpper) {
  Rng rng(8);
  for (int i = 0; i < 10; ++i) {
    const auto tree = fixtures::random_tree(rng, 2, 2, 3);
    const auto claim = fixtures::random_penalty_claim(rng, tree);
    EXPECT_EQ(solve(tree, claim, PowerLoss(), claim.max_upper() + 1e-9, small_grid(100)).risk, 0.0);
  }
}

TEST(ShortfallDp, DegenerateChainHoldsNoStock) {
  const auto tree = fixtures::degenerate_chain(3);
  const auto claim = GameClaim::from_tables(tree, {{0.9}, {1.2}, {0.8}, {0.6}}, {{0.1}, {0.7}, {0.3}, {0.6}});
  const PowerLoss loss;
  const double x = 0.4;
  const auto sol = solve(tree, claim, loss, x, small_grid(100));
  EXPECT_EQ(sol.root_position, 0.0);
  const auto dynkin = solve_dynkin(tree, claim, loss, WealthProcess::constant(tree, x));
  EXPECT_NEAR(sol.risk, dynkin.risk, 1e-12);
  const auto w = strategy_on_tree(sol);
  for (double z : w.position) EXPECT_EQ(z, 0.0);
}

TEST(ShortfallDp, SmallestMinimizerOnFlatObjective) {
  // l(U_1 - (x + z S_0 u)) is zero for every z in G when U_1 = 0.
  const auto tree = fixtures::binomial_one_step();
  const auto claim = GameClaim::from_tables(tree, {{1.0}, {0.0, 0.0}}, {{0.0}, {0.0, 0.0}});
  const auto sol = solve(tree, claim, PowerLoss(), 0.5, small_grid(100));
  EXPECT_EQ(sol.risk, 0.0);
  EXPECT_DOUBLE_EQ(sol.root_position, -1.0);
}

TEST(ShortfallDp, ThreadCountDoesNotChangeResults) {
  Rng rng(12);
  const auto tree = fixtures::random_tree(rng, 3, 2, 3);
  const auto claim = fixtures::random_penalty_claim(rng, tree);
  auto o1 = small_grid(300), o4 = small_grid(300);
  o1.threads = 1;
  o4.threads = 4;
  const auto a = solve(tree, claim, PowerLoss(), 0.2, o1);
  const auto b = solve(tree, claim, PowerLoss(), 0.2, o4);
  EXPECT_EQ(a.risk, b.risk);
  for (NodeId id = 0; id < tree.size(); ++id) {
    const auto va = a.field.values(id), vb = b.field.values(id);
    EXPECT_TRUE(std::equal(va.begin(), va.end(), vb.begin()));
    const auto pa = a.policy.row(id), pb = b.policy.row(id);
    EXPECT_TRUE(std::equal(pa.begin(), pa.end(), pb.begin()));
  }
}

TEST(ShortfallDp, RiskCurveIsNonincreasing) {
  Rng rng(13);
  const auto tree = fixtures::random_tree(rng, 2, 2, 3);
  const auto claim = fixtures::random_penalty_claim(rng, tree);
  const double top = claim.max_upper();
  const auto sol = solve(tree, claim, PowerLoss(), top, small_grid(300));
  std::vector<double> xs;
  for (int i = 1; i <= 40; ++i) xs.push_back(top * i / 40.0);
  const auto curve = risk_curve(sol, xs);
  for (std::size_t i = 1; i < curve.size(); ++i) EXPECT_LE(curve[i].value, curve[i - 1].value);
  EXPECT_EQ(curve.back().value, 0.0);
}

TEST(ShortfallDp, StrategyExtraction) {
  Rng rng(14);
  const auto tree = fixtures::random_tree(rng, 3, 2, 2);
  const auto claim = fixtures::random_penalty_claim(rng, tree);
  const auto sol = solve(tree, claim, PowerLoss(), 0.3 * claim.max_upper() + 0.01, small_grid(300));
  const auto w = strategy_on_tree(sol);
  EXPECT_TRUE(check_wealth(tree, w).empty());
  for (NodeId leaf = tree.layer_begin(3); leaf < tree.size(); ++leaf) {
    const auto steps = extract_strategy(sol, tree.history(leaf));
    const auto nodes = tree.ancestry(leaf);
    ASSERT_EQ(steps.size(), nodes.size());
    for (std::size_t t = 0; t < steps.size(); ++t) {
      EXPECT_NEAR(steps[t].wealth, w.value[nodes[t]], 1e-12);
      EXPECT_NEAR(steps[t].position, w.position[nodes[t]], 1e-12);
      EXPECT_NEAR(steps[t].cash + steps[t].position * tree.node(nodes[t]).price, steps[t].wealth, 1e-12);
    }
  }

  auto lookup = small_grid(300);
  lookup.lookup = PolicyLookup::nearest_lower;
  const auto coarse = solve(tree, claim, PowerLoss(), sol.capital, lookup);
  const auto wc = strategy_on_tree(coarse);
  EXPECT_TRUE(check_wealth(tree, wc).empty());
}

TEST(ShortfallDp, RejectsBadProblems) {
  const auto tree = fixtures::binomial_one_step();
  const auto claim = fixtures::binomial_one_step_claim(tree);
  EXPECT_THROW(solve(tree, claim, PowerLoss(), 0.0), DomainError);
  EXPECT_THROW(solve(tree, claim, PowerLoss(), -1.0), DomainError);
  const auto arb = MarketTree::iid(1.0, 1, ConditionalDistribution({{0.1, 0.5}, {0.5, 0.5}}));
  EXPECT_THROW(solve(arb, fixtures::binomial_one_step_claim(arb), PowerLoss(), 0.5), DomainError);
  const auto bad = GameClaim::from_tables(tree, {{0.0}, {0.5, 1.5}}, {{1.0}, {0.5, 1.5}});
  EXPECT_THROW(solve(tree, bad, PowerLoss(), 0.5), DomainError);
}

#include <gtest/gtest.h>

#include <vector>

#include "support/instances.hpp"

using namespace shortfall;

TEST(ConditionalDistribution, SortsAtomsAndSnapsTinyReturns) {
  ConditionalDistribution d({{0.3, 0.25}, {5e-15, 0.25}, {-0.2, 0.5}});
  ASSERT_EQ(d.size(), 3u);
  EXPECT_EQ(d.atoms()[0].value, -0.2);
  EXPECT_EQ(d.atoms()[1].value, 0.0);
  EXPECT_EQ(d.atoms()[2].value, 0.3);
  const auto sb = support_bounds(d);
  EXPECT_EQ(sb.a, -0.2);
  EXPECT_EQ(sb.b, 0.3);
}

TEST(ConditionalDistribution, RejectsBadAtoms) {
  EXPECT_THROW(ConditionalDistribution(std::vector<Atom>{}), DomainError);
  EXPECT_THROW(ConditionalDistribution({{-1.0, 0.5}, {0.5, 0.5}}), DomainError);
  EXPECT_THROW(ConditionalDistribution({{-0.5, 0.5}, {0.5, 0.4}}), DomainError);
  EXPECT_THROW(ConditionalDistribution({{-0.5, 0.0}, {0.5, 1.0}}), DomainError);
  EXPECT_THROW(ConditionalDistribution({{0.1, 0.5}, {0.1, 0.5}}), DomainError);
  EXPECT_NO_THROW(ConditionalDistribution({{-0.5, 0.5}, {0.5, 0.5 + 5e-13}}));
}

TEST(MarketTree, LayersAreLexicographic) {
  const auto tree = MarketTree::iid(100.0, 2, ConditionalDistribution({{-0.1, 0.4}, {0.0, 0.2}, {0.2, 0.4}}));
  EXPECT_EQ(tree.size(), 13u);
  EXPECT_EQ(tree.layer_size(0), 1u);
  EXPECT_EQ(tree.layer_size(1), 3u);
  EXPECT_EQ(tree.layer_size(2), 9u);
  EXPECT_EQ(tree.layer_begin(2), 4u);

  double total = 0.0;
  for (const auto& node : enumerate_nodes(tree, 2)) total += node.probability;
  EXPECT_NEAR(total, 1.0, 1e-15);

  const std::vector<double> path{0.2, -0.1};
  const NodeId id = tree.locate(path);
  EXPECT_EQ(tree.index_in_layer(id), 6u);
  EXPECT_DOUBLE_EQ(stock_price(tree, path), 100.0 * 1.2 * 0.9);
  EXPECT_EQ(tree.history(id), path);
  EXPECT_NEAR(tree.node(id).probability, 0.16, 1e-15);

  const std::vector<std::size_t> branches{2, 0};
  EXPECT_EQ(tree.locate_branches(branches), id);
  const auto anc = tree.ancestry(id);
  ASSERT_EQ(anc.size(), 3u);
  EXPECT_EQ(anc[0], 0u);
  EXPECT_EQ(tree.node(anc[1]).last_return, 0.2);

  EXPECT_THROW(tree.locate(std::vector<double>{0.05}), StructureError);
  EXPECT_THROW(tree.locate(std::vector<double>{0.2, 0.2, 0.2}), StructureError);
}

TEST(MarketTree, HistoryDependentLaws) {
  const MarketTree tree(1.0, 2, [](std::span<const double> h) {
    if (!h.empty() && h.back() > 0.0) return ConditionalDistribution({{-0.3, 0.5}, {0.0, 0.25}, {0.3, 0.25}});
    return ConditionalDistribution({{-0.1, 0.5}, {0.1, 0.5}});
  });
  EXPECT_EQ(tree.layer_size(2), 5u);
  EXPECT_EQ(tree.child_count(tree.child(0, 1)), 3u);
}

TEST(MarketTree, FromLayersChecksCounts) {
  const ConditionalDistribution d({{-0.5, 0.5}, {0.5, 0.5}});
  EXPECT_NO_THROW(MarketTree::from_layers(1.0, {{d}, {d, d}}));
  EXPECT_THROW(MarketTree::from_layers(1.0, {{d}, {d}}), StructureError);
  EXPECT_THROW(MarketTree::from_layers(1.0, {{d}, {d, d, d}}), StructureError);
  EXPECT_THROW(MarketTree::iid(0.0, 1, d), DomainError);
  EXPECT_THROW(MarketTree::iid(1.0, 0, d), DomainError);
}

TEST(NoArbitrage, FlagsOneSidedSupport) {
  const ConditionalDistribution ok({{-0.5, 0.5}, {0.5, 0.5}});
  const ConditionalDistribution up({{0.1, 0.5}, {0.5, 0.5}});
  const ConditionalDistribution flat_down({{-0.2, 0.5}, {0.0, 0.5}});
  const auto tree = MarketTree::from_layers(1.0, {{ok}, {up, flat_down}});
  const auto report = check_no_arbitrage(tree);
  ASSERT_EQ(report.size(), 2u);
  EXPECT_EQ(report[0].time, 1);
  EXPECT_EQ(report[0].index, 0u);
  EXPECT_EQ(report[1].index, 1u);
  EXPECT_EQ(report[1].bounds.b, 0.0);
}

TEST(NoArbitrage, PointMassAtZeroIsAllowed) {
  const auto tree = fixtures::degenerate_chain(3);
  EXPECT_TRUE(check_no_arbitrage(tree).empty());
  EXPECT_EQ(tree.size(), 4u);
  EXPECT_EQ(tree.node(3).price, 1.0);
}

TEST(NoArbitrage, RandomTreesStraddleZero) {
  fixtures::Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    const auto tree = fixtures::random_tree(rng, 1 + i % 4, 2, 3);
    EXPECT_TRUE(check_no_arbitrage(tree).empty());
    for (int n = 0; n <= tree.horizon(); ++n) {
      double total = 0.0;
      for (const auto& node : tree.layer(n)) total += node.probability;
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

#pragma once

/// Discrete-time discounted market on a finite, non-recombining scenario tree.
///
/// The bond is the numeraire (constant price 1). Each non-terminal node
/// carries the conditional law of the next one-period stock return as a
/// finite list of atoms; the stock price at a node is
/// S_0 * prod(1 + r_k) along the path from the root.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "shortfall/errors.hpp"

namespace shortfall {

using NodeId = std::size_t;

/// Atoms with |value| below this are treated as an exact zero return.
inline constexpr double kZeroReturnSnap = 1e-14;
inline constexpr double kProbabilitySumTolerance = 1e-12;
/// Refuse to build trees larger than this many nodes.
inline constexpr std::size_t kMaxTreeNodes = 20'000'000;

struct Atom {
  double value;
  double probability;
};

/// Finite conditional law of the next return, atoms in strictly increasing
/// order of value.
class ConditionalDistribution {
 public:
  ConditionalDistribution() = default;

  explicit ConditionalDistribution(std::vector<Atom> atoms) : atoms_(std::move(atoms)) {
    if (atoms_.empty()) throw DomainError("conditional distribution needs at least one atom");
    double total = 0.0;
    for (auto& atom : atoms_) {
      if (!std::isfinite(atom.value) || !std::isfinite(atom.probability))
        throw DomainError("conditional distribution has a non-finite atom");
      if (std::abs(atom.value) < kZeroReturnSnap) atom.value = 0.0;
      if (atom.value <= -1.0)
        throw DomainError("return atom " + std::to_string(atom.value) + " is not above -1");
      if (atom.probability <= 0.0 || atom.probability > 1.0)
        throw DomainError("atom probability " + std::to_string(atom.probability) +
                          " is not in (0, 1]");
      total += atom.probability;
    }
    if (std::abs(total - 1.0) > kProbabilitySumTolerance)
      throw DomainError("atom probabilities sum to " + std::to_string(total) + ", not 1");
    std::sort(atoms_.begin(), atoms_.end(),
              [](const Atom& l, const Atom& r) { return l.value < r.value; });
    for (std::size_t i = 1; i < atoms_.size(); ++i)
      if (atoms_[i].value == atoms_[i - 1].value)
        throw DomainError("duplicate return atom " + std::to_string(atoms_[i].value));
  }

  /// Convenience: a point mass at zero (no price move).
  static ConditionalDistribution point_mass_at_zero() { return ConditionalDistribution({{0.0, 1.0}}); }

  std::span<const Atom> atoms() const { return atoms_; }
  std::size_t size() const { return atoms_.size(); }
  bool empty() const { return atoms_.empty(); }

 private:
  std::vector<Atom> atoms_;
};

/// Infimum `a` and supremum `b` of the support of a conditional law.
struct SupportBounds {
  double a;
  double b;

  /// Point mass at zero: no position can change the portfolio value.
  bool degenerate() const { return a == 0.0 || b == 0.0; }
};

inline SupportBounds support_bounds(const ConditionalDistribution& dist) {
  if (dist.empty()) throw StructureError("support_bounds of an empty distribution");
  return {dist.atoms().front().value, dist.atoms().back().value};
}

class MarketTree {
 public:
  struct Node {
    int time = 0;
    NodeId parent = 0;        // root is its own parent
    std::size_t branch = 0;   // atom index in the parent's distribution
    NodeId first_child = 0;   // children are contiguous; count == next.size()
    double price = 0.0;
    double probability = 1.0; // unconditional path probability
    double last_return = 0.0; // return realized on the edge into this node
    ConditionalDistribution next;  // empty at the horizon
  };

  /// Supplies the conditional law at a node given its return history.
  using DistributionRule = std::function<ConditionalDistribution(std::span<const double> history)>;

  MarketTree(double s0, int horizon, const DistributionRule& rule) : s0_(s0), horizon_(horizon) {
    if (!(s0 > 0.0) || !std::isfinite(s0)) throw DomainError("initial stock price must be positive");
    if (horizon < 1) throw DomainError("horizon must be at least 1");
    build(rule);
  }

  /// Same conditional law at every node (independent, identically distributed returns).
  static MarketTree iid(double s0, int horizon, const ConditionalDistribution& dist) {
    return MarketTree(s0, horizon, [&](std::span<const double>) { return dist; });
  }

  /// `layers[n][i]` is the law at the i-th time-n node in lexicographic order.
  static MarketTree from_layers(double s0, const std::vector<std::vector<ConditionalDistribution>>& layers) {
    const int horizon = static_cast<int>(layers.size());
    std::vector<std::size_t> next_index(layers.size(), 0);
    MarketTree tree(s0, horizon, [&](std::span<const double> history) {
      const std::size_t n = history.size();
      if (next_index[n] >= layers[n].size())
        throw StructureError("layer " + std::to_string(n) + " lists " + std::to_string(layers[n].size()) +
                             " nodes but the tree has more");
      return layers[n][next_index[n]++];
    });
    for (std::size_t n = 0; n < layers.size(); ++n)
      if (next_index[n] != layers[n].size())
        throw StructureError("layer " + std::to_string(n) + " lists " + std::to_string(layers[n].size()) +
                             " nodes but the tree has " + std::to_string(next_index[n]));
    return tree;
  }

  double s0() const { return s0_; }
  int horizon() const { return horizon_; }
  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  const Node& root() const { return nodes_.front(); }
  std::span<const Node> nodes() const { return nodes_; }

  /// Nodes at time n, lexicographic in atom indices.
  std::span<const Node> layer(int n) const {
    check_time(n);
    return std::span<const Node>(nodes_).subspan(layer_begin_[n], layer_size(n));
  }
  NodeId layer_begin(int n) const {
    check_time(n);
    return layer_begin_[n];
  }
  std::size_t layer_size(int n) const {
    check_time(n);
    return layer_begin_[n + 1] - layer_begin_[n];
  }
  /// Position of a node within its layer.
  std::size_t index_in_layer(NodeId id) const { return id - layer_begin_[nodes_.at(id).time]; }

  bool is_terminal(NodeId id) const { return nodes_.at(id).time == horizon_; }
  std::size_t child_count(NodeId id) const { return nodes_.at(id).next.size(); }
  NodeId child(NodeId id, std::size_t branch) const {
    const Node& n = nodes_.at(id);
    if (branch >= n.next.size()) throw StructureError("branch index out of range");
    return n.first_child + branch;
  }

  /// Returns realized from the root to `id`.
  std::vector<double> history(NodeId id) const {
    std::vector<double> out(static_cast<std::size_t>(nodes_.at(id).time));
    for (NodeId cur = id; cur != 0; cur = nodes_[cur].parent) out[nodes_[cur].time - 1] = nodes_[cur].last_return;
    return out;
  }

  /// Node ids from the root (index 0) to `id`.
  std::vector<NodeId> ancestry(NodeId id) const {
    std::vector<NodeId> out(static_cast<std::size_t>(nodes_.at(id).time) + 1);
    for (NodeId cur = id;; cur = nodes_[cur].parent) {
      out[nodes_[cur].time] = cur;
      if (cur == 0) break;
    }
    return out;
  }

  /// Node reached by following the given returns from the root.
  NodeId locate(std::span<const double> path) const {
    if (path.size() > static_cast<std::size_t>(horizon_))
      throw StructureError("path of length " + std::to_string(path.size()) + " exceeds the horizon");
    NodeId cur = 0;
    for (std::size_t k = 0; k < path.size(); ++k) {
      const auto atoms = nodes_[cur].next.atoms();
      const double target = std::abs(path[k]) < kZeroReturnSnap ? 0.0 : path[k];
      auto it = std::find_if(atoms.begin(), atoms.end(), [&](const Atom& a) {
        return std::abs(a.value - target) <= 1e-12 * (1.0 + std::abs(target));
      });
      if (it == atoms.end())
        throw StructureError("return " + std::to_string(path[k]) + " at step " + std::to_string(k + 1) +
                             " is not an atom of the tree");
      cur = nodes_[cur].first_child + static_cast<std::size_t>(it - atoms.begin());
    }
    return cur;
  }

  /// Node reached by following atom indices from the root.
  NodeId locate_branches(std::span<const std::size_t> branches) const {
    if (branches.size() > static_cast<std::size_t>(horizon_)) throw StructureError("branch path exceeds the horizon");
    NodeId cur = 0;
    for (std::size_t b : branches) cur = child(cur, b);
    return cur;
  }

 private:
  void check_time(int n) const {
    if (n < 0 || n > horizon_) throw StructureError("time " + std::to_string(n) + " outside [0, horizon]");
  }

  void build(const DistributionRule& rule) {
    Node root;
    root.price = s0_;
    nodes_.push_back(std::move(root));
    layer_begin_.assign(static_cast<std::size_t>(horizon_) + 2, 0);
    layer_begin_[1] = 1;
    std::vector<double> hist;
    for (int n = 0; n < horizon_; ++n) {
      const NodeId begin = layer_begin_[n];
      const NodeId end = layer_begin_[n + 1];
      for (NodeId id = begin; id < end; ++id) {
        hist = history(id);
        ConditionalDistribution dist = rule(hist);
        if (dist.empty()) throw StructureError("non-terminal node without a conditional distribution");
        if (nodes_.size() + dist.size() > kMaxTreeNodes)
          throw GuardError("scenario tree exceeds " + std::to_string(kMaxTreeNodes) + " nodes");
        nodes_[id].first_child = nodes_.size();
        const double price = nodes_[id].price;
        const double prob = nodes_[id].probability;
        for (std::size_t b = 0; b < dist.size(); ++b) {
          const Atom& atom = dist.atoms()[b];
          Node c;
          c.time = n + 1;
          c.parent = id;
          c.branch = b;
          c.price = price * (1.0 + atom.value);
          c.probability = prob * atom.probability;
          c.last_return = atom.value;
          nodes_.push_back(std::move(c));
        }
        nodes_[id].next = std::move(dist);
      }
      layer_begin_[n + 2] = nodes_.size();
    }
    for (NodeId id = layer_begin_[horizon_]; id < nodes_.size(); ++id) nodes_[id].first_child = nodes_.size();
  }

  double s0_;
  int horizon_;
  std::vector<Node> nodes_;
  std::vector<NodeId> layer_begin_;  // size horizon + 2
};

inline SupportBounds support_bounds(const MarketTree& tree, NodeId id) {
  if (tree.is_terminal(id)) throw StructureError("terminal node has no next-period distribution");
  return support_bounds(tree.node(id).next);
}

struct ArbitrageViolation {
  NodeId node;
  int time;
  std::size_t index;  // within layer
  SupportBounds bounds;
};

/// Every non-terminal node must straddle zero (a < 0 < b) or be the point mass at zero.
inline std::vector<ArbitrageViolation> check_no_arbitrage(const MarketTree& tree) {
  std::vector<ArbitrageViolation> report;
  for (NodeId id = 0; id < tree.size(); ++id) {
    if (tree.is_terminal(id)) continue;
    const SupportBounds sb = support_bounds(tree, id);
    const bool straddles = sb.a < 0.0 && sb.b > 0.0;
    const bool point_mass = sb.a == 0.0 && sb.b == 0.0;
    if (!straddles && !point_mass) report.push_back({id, tree.node(id).time, tree.index_in_layer(id), sb});
  }
  return report;
}

/// S_n along the given return path; also the scale factor applied to a
/// position when computing next-period wealth.
inline double stock_price(const MarketTree& tree, std::span<const double> path) {
  return tree.node(tree.locate(path)).price;
}

/// Time-n nodes in lexicographic order.
inline std::span<const MarketTree::Node> enumerate_nodes(const MarketTree& tree, int n) { return tree.layer(n); }

}  // namespace shortfall

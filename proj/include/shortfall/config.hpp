#pragma once

/// JSON problem description:
///
///   {
///     "market": {"s0": 1.0, "horizon": 2,
///                "iid": {"atoms": [[-0.5, 0.5], [0.5, 0.5]], "repeat": 2}},
///     "claim":  {"type": "put", "strike": 1.0, "penalty": 0.1},
///     "loss":   {"family": "power", "p": 1},
///     "solver": {"M": 2000, "K": 2000, "R": 30, "y_max": null},
///     "capital": 0.5
///   }
///
/// "market" takes either the i.i.d. shorthand or "nodes": one list per time
/// layer, each holding one atom list per node in lexicographic order.
/// "claim" is a call/put builder, {"type": "table", "upper": [...],
/// "lower": [...]} with per-layer tables, or {"type": "penalty_table",
/// "lower": [...], "penalty": d}.

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "shortfall/errors.hpp"
#include "shortfall/market.hpp"
#include "shortfall/payoff.hpp"
#include "shortfall/shortfall_dp.hpp"

namespace shortfall {

/// Malformed document: syntax error or schema mismatch.
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct Problem {
  MarketTree tree;
  GameClaim claim;
  PowerLoss loss;
  SolverOptions solver;
  std::optional<double> capital;
  std::vector<std::string> warnings;
};

namespace detail {

using nlohmann::json;

inline const json& require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw ConfigError("missing key \"" + std::string(key) + "\" in " + where);
  return *it;
}

inline double number(const json& v, const std::string& where) {
  if (!v.is_number()) throw ConfigError(where + " must be a number");
  return v.get<double>();
}

inline long integer(const json& v, const std::string& where) {
  if (!v.is_number_integer()) throw ConfigError(where + " must be an integer");
  return v.get<long>();
}

inline ConditionalDistribution parse_atoms(const json& v, const std::string& where) {
  if (!v.is_array() || v.empty()) throw ConfigError(where + " must be a nonempty list of [return, probability]");
  std::vector<Atom> atoms;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto& a = v[i];
    const std::string w = where + "[" + std::to_string(i) + "]";
    if (!a.is_array() || a.size() != 2) throw ConfigError(w + " must be [return, probability]");
    atoms.push_back({number(a[0], w + "[0]"), number(a[1], w + "[1]")});
  }
  return ConditionalDistribution(std::move(atoms));
}

inline std::vector<std::vector<double>> parse_table(const json& v, const std::string& where) {
  if (!v.is_array()) throw ConfigError(where + " must be a list of per-layer lists");
  std::vector<std::vector<double>> out;
  for (std::size_t n = 0; n < v.size(); ++n) {
    const std::string w = where + "[" + std::to_string(n) + "]";
    if (!v[n].is_array()) throw ConfigError(w + " must be a list");
    std::vector<double> layer;
    for (std::size_t i = 0; i < v[n].size(); ++i) layer.push_back(number(v[n][i], w + "[" + std::to_string(i) + "]"));
    out.push_back(std::move(layer));
  }
  return out;
}

inline MarketTree parse_market(const json& m) {
  const double s0 = number(require(m, "s0", "market"), "market.s0");
  std::optional<long> horizon;
  if (m.contains("horizon")) horizon = integer(m["horizon"], "market.horizon");
  if (m.contains("iid") == m.contains("nodes")) throw ConfigError("market needs exactly one of \"iid\" or \"nodes\"");
  if (m.contains("iid")) {
    const auto& iid = m["iid"];
    const auto dist = parse_atoms(require(iid, "atoms", "market.iid"), "market.iid.atoms");
    if (iid.contains("repeat")) {
      const long r = integer(iid["repeat"], "market.iid.repeat");
      if (horizon && *horizon != r) throw ConfigError("market.iid.repeat differs from market.horizon");
      horizon = r;
    }
    if (!horizon) throw ConfigError("market needs \"horizon\" or \"iid.repeat\"");
    if (*horizon < 1 || *horizon > 64) throw ConfigError("market horizon must be in 1..64");
    return MarketTree::iid(s0, static_cast<int>(*horizon), dist);
  }
  const auto& nodes = m["nodes"];
  if (!nodes.is_array() || nodes.empty()) throw ConfigError("market.nodes must be a nonempty list of layers");
  if (horizon && static_cast<std::size_t>(*horizon) != nodes.size())
    throw ConfigError("market.nodes has " + std::to_string(nodes.size()) + " layers but horizon is " +
                      std::to_string(*horizon));
  std::vector<std::vector<ConditionalDistribution>> layers;
  for (std::size_t n = 0; n < nodes.size(); ++n) {
    const std::string w = "market.nodes[" + std::to_string(n) + "]";
    if (!nodes[n].is_array()) throw ConfigError(w + " must be a list of atom lists");
    std::vector<ConditionalDistribution> layer;
    for (std::size_t i = 0; i < nodes[n].size(); ++i)
      layer.push_back(parse_atoms(nodes[n][i], w + "[" + std::to_string(i) + "]"));
    layers.push_back(std::move(layer));
  }
  return MarketTree::from_layers(s0, layers);
}

inline GameClaim parse_claim(const json& c, const MarketTree& tree) {
  const auto& type_v = require(c, "type", "claim");
  if (!type_v.is_string()) throw ConfigError("claim.type must be a string");
  const std::string type = type_v.get<std::string>();
  const bool at_horizon = c.value("penalty_at_horizon", false);
  if (type == "call" || type == "put") {
    const double strike = number(require(c, "strike", "claim"), "claim.strike");
    const double penalty = c.contains("penalty") ? number(c["penalty"], "claim.penalty") : 0.0;
    return make_vanilla_game(tree, type == "call" ? OptionKind::call : OptionKind::put, strike, penalty, at_horizon);
  }
  if (type == "table")
    return GameClaim::from_tables(tree, parse_table(require(c, "upper", "claim"), "claim.upper"),
                                  parse_table(require(c, "lower", "claim"), "claim.lower"));
  if (type == "penalty_table")
    return make_penalty_game(tree, parse_table(require(c, "lower", "claim"), "claim.lower"),
                             number(require(c, "penalty", "claim"), "claim.penalty"), at_horizon);
  throw ConfigError("unknown claim.type \"" + type + "\" (call, put, table, penalty_table)");
}

inline PowerLoss parse_loss(const json& root) {
  if (!root.contains("loss")) return PowerLoss(1.0);
  const auto& l = root["loss"];
  if (!l.is_object()) throw ConfigError("loss must be an object");
  const std::string family = l.value("family", std::string("power"));
  if (family != "power") throw ConfigError("unknown loss.family \"" + family + "\" (power)");
  return PowerLoss(l.contains("p") ? number(l["p"], "loss.p") : 1.0);
}

inline std::size_t count(const json& v, const std::string& where) {
  const long n = integer(v, where);
  if (n < 1) throw ConfigError(where + " must be positive");
  return static_cast<std::size_t>(n);
}

inline SolverOptions parse_solver(const json& root) {
  SolverOptions opt;
  if (!root.contains("solver")) return opt;
  const auto& s = root["solver"];
  if (!s.is_object()) throw ConfigError("solver must be an object");
  if (s.contains("M")) opt.wealth_intervals = count(s["M"], "solver.M");
  if (s.contains("K")) opt.z_points = count(s["K"], "solver.K");
  if (s.contains("R")) {
    const long r = integer(s["R"], "solver.R");
    if (r < 0) throw ConfigError("solver.R must be nonnegative");
    opt.refinements = static_cast<std::size_t>(r);
  }
  if (s.contains("y_max") && !s["y_max"].is_null()) opt.y_max = number(s["y_max"], "solver.y_max");
  if (s.contains("lookup")) {
    const auto& v = s["lookup"];
    if (v == "reoptimize")
      opt.lookup = PolicyLookup::reoptimize;
    else if (v == "nearest_lower")
      opt.lookup = PolicyLookup::nearest_lower;
    else
      throw ConfigError("solver.lookup must be \"reoptimize\" or \"nearest_lower\"");
  }
  return opt;
}

inline std::string locate_offset(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < text.size() && i + 1 < byte; ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace detail

/// Throws ConfigError on syntax or schema problems and DomainError /
/// StructureError when values break a type invariant.
inline Problem parse_problem(const std::string& text) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("JSON syntax error at " + detail::locate_offset(text, e.byte) + ": " + e.what());
  }
  if (!root.is_object()) throw ConfigError("top level must be an object");
  MarketTree tree = detail::parse_market(detail::require(root, "market", "document"));
  GameClaim claim = detail::parse_claim(detail::require(root, "claim", "document"), tree);
  Problem p{std::move(tree), std::move(claim), detail::parse_loss(root), detail::parse_solver(root), {}, {}};
  if (root.contains("capital")) p.capital = detail::number(root["capital"], "capital");
  if (const auto mismatch = terminal_payoff_mismatch(p.claim, p.tree); !mismatch.empty())
    p.warnings.push_back(std::to_string(mismatch.size()) +
                         " terminal node(s) have upper payoff != lower payoff; the solver's horizon layer uses the "
                         "upper payoff while H(N, N) pays the lower one");
  return p;
}

/// Serializes a problem with per-node laws and payoff tables; parse_problem
/// reads it back bit for bit.
inline std::string problem_json(const MarketTree& tree, const GameClaim& claim, const PowerLoss& loss,
                                const SolverOptions& solver, std::optional<double> capital = {}) {
  using nlohmann::json;
  json nodes = json::array(), upper = json::array(), lower = json::array();
  for (int n = 0; n <= tree.horizon(); ++n) {
    json layer = json::array(), u = json::array(), w = json::array();
    for (NodeId id = tree.layer_begin(n); id < tree.layer_begin(n) + tree.layer_size(n); ++id) {
      u.push_back(claim.upper(id));
      w.push_back(claim.lower(id));
      if (n == tree.horizon()) continue;
      json atoms = json::array();
      for (const Atom& a : tree.node(id).next.atoms()) atoms.push_back({a.value, a.probability});
      layer.push_back(std::move(atoms));
    }
    if (n < tree.horizon()) nodes.push_back(std::move(layer));
    upper.push_back(std::move(u));
    lower.push_back(std::move(w));
  }
  json root;
  root["market"] = {{"s0", tree.s0()}, {"horizon", tree.horizon()}, {"nodes", std::move(nodes)}};
  root["claim"] = {{"type", "table"}, {"upper", std::move(upper)}, {"lower", std::move(lower)}};
  root["loss"] = {{"family", "power"}, {"p", loss.exponent()}};
  root["solver"] = {{"M", solver.wealth_intervals}, {"K", solver.z_points}, {"R", solver.refinements}};
  if (solver.y_max) root["solver"]["y_max"] = *solver.y_max;
  if (solver.lookup == PolicyLookup::nearest_lower) root["solver"]["lookup"] = "nearest_lower";
  if (capital) root["capital"] = *capital;
  return root.dump(2) + "\n";
}

inline Problem load_problem(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_problem(buf.str());
}

}  // namespace shortfall

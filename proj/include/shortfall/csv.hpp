#pragma once

/// Table export. Numbers use 12 significant digits; headers are stable.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <system_error>

#include "shortfall/errors.hpp"
#include "shortfall/shortfall_dp.hpp"
#include "shortfall/simulator.hpp"

namespace shortfall {

inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline constexpr const char* kValuePolicyHeader = "time,node,y,J,lambda,lo,hi";
inline constexpr const char* kStoppingHeader = "time,node,price,wealth,position,psi,seller_stop,buyer_stop";
inline constexpr const char* kSimulationHeader = "path,stop_time,loss,std_error";

/// Writes to a sibling temporary and renames it over `path`.
inline void write_atomically(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out << content;
    if (!out.flush()) throw Error("write to " + tmp.string() + " failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

/// One row per node and grid point. lambda, lo and hi are blank at the horizon.
template <LossFunction Loss>
std::string value_policy_csv(const ShortfallSolution<Loss>& sol) {
  const MarketTree& tree = sol.tree();
  const WealthGrid& grid = sol.field.grid();
  std::string out = kValuePolicyHeader;
  out += '\n';
  for (NodeId id = 0; id < tree.size(); ++id) {
    const auto values = sol.field.values(id);
    const std::string prefix = std::to_string(tree.node(id).time) + "," + std::to_string(tree.index_in_layer(id)) + ",";
    for (std::size_t k = 0; k < grid.size(); ++k) {
      const double y = grid.point(k);
      out += prefix;
      out += format_number(y);
      out += ',';
      out += format_number(values[k]);
      if (tree.is_terminal(id)) {
        out += ",,,\n";
        continue;
      }
      const AdmissibleInterval g = admissible_interval(tree, id, y);
      out += ',';
      out += format_number(sol.policy.at(id, k));
      out += ',';
      out += g.degenerate ? "" : format_number(g.lo);
      out += ',';
      out += g.degenerate ? "" : format_number(g.hi);
      out += '\n';
    }
  }
  return out;
}

inline std::string stopping_csv(const MarketTree& tree, const HedgePlan& plan) {
  std::string out = kStoppingHeader;
  out += '\n';
  for (NodeId id = 0; id < tree.size(); ++id) {
    out += std::to_string(tree.node(id).time) + "," + std::to_string(tree.index_in_layer(id)) + ",";
    out += format_number(tree.node(id).price) + "," + format_number(plan.wealth.value[id]) + "," +
           format_number(plan.wealth.position[id]) + "," + format_number(plan.game.psi[id]) + ",";
    out += std::to_string(int{plan.game.seller[id]}) + "," + std::to_string(int{plan.game.buyer[id]}) + "\n";
  }
  return out;
}

inline std::string simulation_csv(const RiskEstimate& est) {
  std::string out = kSimulationHeader;
  out += '\n';
  for (std::size_t i = 0; i < est.paths; ++i)
    out += std::to_string(i) + "," + std::to_string(est.stop_times[i]) + "," + format_number(est.losses[i]) + ",\n";
  out += "mean," + std::to_string(est.paths) + "," + format_number(est.mean) + "," + format_number(est.std_error) + "\n";
  return out;
}

}  // namespace shortfall

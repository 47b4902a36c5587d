#include "cgt/graph.hpp"

#include "cgt/io.hpp"

#include <fstream>
#include <sstream>

namespace cgt {

bool CausalGraphPrior::has_edge(int source, int lag, int target) const {
  for (const auto& e : edges)
    if (e.source == source && e.lag == lag && e.target == target) return true;
  return false;
}

void CausalGraphPrior::validate() const {
  if (dims < 1 || tau_max < 1) throw GraphError("graph: D and tau_max must be >= 1");
  for (const auto& e : edges) {
    if (e.source < 0 || e.source >= dims || e.target < 0 || e.target >= dims)
      throw GraphError("graph: sensor index out of range in edge (" + std::to_string(e.source) +
                       "," + std::to_string(e.lag) + "," + std::to_string(e.target) + ")");
    if (e.lag < 1 || e.lag > tau_max)
      throw GraphError("graph: lag " + std::to_string(e.lag) + " outside [1, " +
                       std::to_string(tau_max) + "]");
  }
}

bool CausalGraphPrior::add_edge(const LaggedEdge& e) {
  if (has_edge(e.source, e.lag, e.target)) return false;
  edges.push_back(e);
  return true;
}

EdgeListLoadResult load_edge_list(const std::string& path, int dims, int tau_max) {
  std::ifstream in(path);
  if (!in) throw GraphError("cannot open edge list: " + path);
  EdgeListLoadResult res;
  res.graph.dims = dims;
  res.graph.tau_max = tau_max;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::size_t b = line.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    std::vector<std::string> toks;
    std::string cur;
    for (char c : line) {
      if (c == ',') {
        toks.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    toks.push_back(cur);
    if (toks.size() < 3 || toks.size() > 5)
      throw GraphError(path + ":" + std::to_string(lineno) +
                       ": expected source,lag,target[,strength[,p_value]]");
    auto ctx = path + ":" + std::to_string(lineno);
    LaggedEdge e;
    e.source = static_cast<int>(parse_double_strict(toks[0], ctx));
    e.lag = static_cast<int>(parse_double_strict(toks[1], ctx));
    e.target = static_cast<int>(parse_double_strict(toks[2], ctx));
    if (toks.size() >= 4) e.strength = parse_double_strict(toks[3], ctx);
    if (toks.size() >= 5) {
      double p = parse_double_strict(toks[4], ctx);
      if (p < 0.0 || p > 1.0) throw GraphError(ctx + ": p_value outside [0,1]");
      e.p_value = p;
    }
    if (e.source < 0 || e.source >= dims || e.target < 0 || e.target >= dims)
      throw GraphError(ctx + ": sensor index out of range for D=" + std::to_string(dims));
    if (e.lag < 1 || e.lag > tau_max)
      throw GraphError(ctx + ": lag must be in [1, " + std::to_string(tau_max) + "]");
    if (!res.graph.add_edge(e)) ++res.duplicates_collapsed;
  }
  res.graph.validate();
  return res;
}

void save_edge_list(const CausalGraphPrior& graph, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw GraphError("cannot write edge list: " + path);
  out << "# source,lag,target[,strength,p_value]\n";
  for (const auto& e : graph.edges) {
    out << e.source << "," << e.lag << "," << e.target;
    if (e.strength || e.p_value) {
      out << "," << format_double(e.strength.value_or(0.0));
      if (e.p_value) out << "," << format_double(*e.p_value);
    }
    out << "\n";
  }
}

ParentMask parent_mask(const CausalGraphPrior& graph, int target) {
  if (target < 0 || target >= graph.dims)
    throw GraphError("parent_mask: target " + std::to_string(target) + " out of range");
  ParentMask m;
  m.target = target;
  m.pi = Vec::Zero(graph.dims * graph.tau_max);
  for (const auto& e : graph.edges)
    if (e.target == target) m.pi[lag_column(e.source, e.lag, graph.tau_max)] = 1.0;
  return m;
}

}  // namespace cgt

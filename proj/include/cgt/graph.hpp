#pragma once

#include "cgt/common.hpp"

#include <optional>
#include <string>
#include <vector>

namespace cgt {

/// Directed lagged edge: sensor `source` at lag `lag` drives `target`.
struct LaggedEdge {
  int source = 0;
  int lag = 1;  // >= 1; contemporaneous links are not represented
  int target = 0;
  std::optional<double> strength;
  std::optional<double> p_value;
};

struct CausalGraphPrior {
  int dims = 0;
  int tau_max = 0;
  std::vector<LaggedEdge> edges;  // unique (source, lag, target) triples

  bool has_edge(int source, int lag, int target) const;
  void validate() const;
  /// Adds the edge if absent; returns false (and keeps the first copy) on duplicates.
  bool add_edge(const LaggedEdge& e);
};

/// Binary selector over the P = D * tau_max sensor-lag columns of target i.
struct ParentMask {
  int target = 0;
  Vec pi;  // entries are exactly 0.0 or 1.0

  int columns() const { return static_cast<int>(pi.size()); }
  int parent_count() const { return static_cast<int>(pi.sum()); }
};

struct EdgeListLoadResult {
  CausalGraphPrior graph;
  int duplicates_collapsed = 0;
};

/// Lines `source,lag,target[,strength[,p_value]]`; '#' comments allowed.
EdgeListLoadResult load_edge_list(const std::string& path, int dims, int tau_max);
void save_edge_list(const CausalGraphPrior& graph, const std::string& path);

ParentMask parent_mask(const CausalGraphPrior& graph, int target);

}  // namespace cgt

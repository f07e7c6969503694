#pragma once

#include "dlsq/linalg.hpp"

#include <nlohmann/json_fwd.hpp>

#include <set>
#include <utility>
#include <vector>

namespace dlsq {

// Undirected graph with 1-indexed vertices. Edges are stored as ordered
// pairs (i, j) with i < j; no self-loops.
struct UndirectedGraph {
  int vertex_count = 0;
  std::set<std::pair<int, int>> edges;

  void add_edge(int i, int j);
  // Neighbor lists, ascending, 0-indexed position = vertex - 1.
  std::vector<std::vector<int>> neighbor_lists() const;
};

enum class Topology { ring, path, complete, star, single };

Matrix laplacian(const UndirectedGraph& g);
bool is_connected(const UndirectedGraph& g);
UndirectedGraph make_topology(Topology kind, int n);

Topology topology_from_name(const std::string& name);
std::string topology_name(Topology kind);

// Graph literal: {"kind": "ring", "n": 8} or {"edges": [[1,2],[2,3]], "n": 3}.
UndirectedGraph graph_from_json(const nlohmann::json& j);
nlohmann::json graph_to_json(const UndirectedGraph& g);

}  // namespace dlsq

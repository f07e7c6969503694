#include "dlsq/graph.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <queue>

namespace dlsq {

void UndirectedGraph::add_edge(int i, int j) {
  if (i == j) throw std::invalid_argument("graph: self-loops are not allowed");
  if (i < 1 || j < 1 || i > vertex_count || j > vertex_count)
    throw std::invalid_argument("graph: vertex index out of range");
  edges.insert({std::min(i, j), std::max(i, j)});
}

std::vector<std::vector<int>> UndirectedGraph::neighbor_lists() const {
  std::vector<std::vector<int>> nb(static_cast<size_t>(vertex_count));
  for (const auto& [i, j] : edges) {
    nb[static_cast<size_t>(i - 1)].push_back(j);
    nb[static_cast<size_t>(j - 1)].push_back(i);
  }
  for (auto& v : nb) std::sort(v.begin(), v.end());
  return nb;
}

Matrix laplacian(const UndirectedGraph& g) {
  Matrix l = Matrix::Zero(g.vertex_count, g.vertex_count);
  for (const auto& [i, j] : g.edges) {
    l(i - 1, j - 1) -= 1.0;
    l(j - 1, i - 1) -= 1.0;
    l(i - 1, i - 1) += 1.0;
    l(j - 1, j - 1) += 1.0;
  }
  return l;
}

bool is_connected(const UndirectedGraph& g) {
  if (g.vertex_count <= 0) return false;
  const auto nb = g.neighbor_lists();
  std::vector<char> seen(static_cast<size_t>(g.vertex_count), 0);
  std::queue<int> todo;
  todo.push(1);
  seen[0] = 1;
  int count = 1;
  while (!todo.empty()) {
    const int v = todo.front();
    todo.pop();
    for (int w : nb[static_cast<size_t>(v - 1)]) {
      if (!seen[static_cast<size_t>(w - 1)]) {
        seen[static_cast<size_t>(w - 1)] = 1;
        ++count;
        todo.push(w);
      }
    }
  }
  return count == g.vertex_count;
}

UndirectedGraph make_topology(Topology kind, int n) {
  if (n < 1) throw std::invalid_argument("make_topology: n must be at least 1");
  UndirectedGraph g;
  g.vertex_count = n;
  switch (kind) {
    case Topology::single:
      if (n != 1) throw std::invalid_argument("make_topology: single requires n = 1");
      break;
    case Topology::ring:
      if (n == 2) {
        g.add_edge(1, 2);
      } else if (n >= 3) {
        for (int i = 1; i <= n; ++i) g.add_edge(i, i % n + 1);
      }
      break;
    case Topology::path:
      for (int i = 1; i < n; ++i) g.add_edge(i, i + 1);
      break;
    case Topology::complete:
      for (int i = 1; i <= n; ++i)
        for (int j = i + 1; j <= n; ++j) g.add_edge(i, j);
      break;
    case Topology::star:
      for (int i = 2; i <= n; ++i) g.add_edge(1, i);
      break;
  }
  return g;
}

Topology topology_from_name(const std::string& name) {
  if (name == "ring") return Topology::ring;
  if (name == "path") return Topology::path;
  if (name == "complete") return Topology::complete;
  if (name == "star") return Topology::star;
  if (name == "single") return Topology::single;
  throw std::invalid_argument("unknown topology kind: " + name);
}

std::string topology_name(Topology kind) {
  switch (kind) {
    case Topology::ring: return "ring";
    case Topology::path: return "path";
    case Topology::complete: return "complete";
    case Topology::star: return "star";
    case Topology::single: return "single";
  }
  return "?";
}

UndirectedGraph graph_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("graph literal must be an object");
  if (j.contains("kind")) {
    return make_topology(topology_from_name(j.at("kind").get<std::string>()),
                         j.at("n").get<int>());
  }
  if (j.contains("edges")) {
    UndirectedGraph g;
    g.vertex_count = j.at("n").get<int>();
    if (g.vertex_count < 1) throw std::invalid_argument("graph literal: n must be >= 1");
    for (const auto& e : j.at("edges")) {
      if (!e.is_array() || e.size() != 2)
        throw std::invalid_argument("graph literal: edge must be a pair");
      g.add_edge(e[0].get<int>(), e[1].get<int>());
    }
    return g;
  }
  throw std::invalid_argument("graph literal needs either 'kind' or 'edges'");
}

nlohmann::json graph_to_json(const UndirectedGraph& g) {
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [i, j] : g.edges) edges.push_back({i, j});
  return {{"n", g.vertex_count}, {"edges", edges}};
}

}  // namespace dlsq

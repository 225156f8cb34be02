#include "epimix/spatial_graph.hpp"

#include <algorithm>
#include <cstdio>
#include <deque>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace epimix {

namespace {

std::string edge_str(int a, int b) {
  return "(" + std::to_string(a) + "," + std::to_string(b) + ")";
}

}  // namespace

bool AdjacencyGraph::has_edge(int i, int j) const {
  const auto& nbr = neighbors[i];
  return std::binary_search(nbr.begin(), nbr.end(), j);
}

std::vector<std::pair<int, int>> AdjacencyGraph::edges() const {
  std::vector<std::pair<int, int>> out;
  for (int i = 0; i < n_areas; ++i) {
    for (int j : neighbors[i]) {
      if (i < j) out.emplace_back(i, j);
    }
  }
  return out;
}

AdjacencyGraph build_graph(std::span<const Edge> edges, int n_areas) {
  if (n_areas < 2) {
    throw std::invalid_argument("build_graph: n_areas must be at least 2, got " +
                                std::to_string(n_areas));
  }
  AdjacencyGraph g;
  g.n_areas = n_areas;
  g.neighbors.assign(n_areas, {});
  for (const Edge& e : edges) {
    if (e.a < 0 || e.a >= n_areas || e.b < 0 || e.b >= n_areas) {
      throw std::invalid_argument("build_graph: edge " + edge_str(e.a, e.b) +
                                  " out of range for n_areas=" + std::to_string(n_areas));
    }
    if (e.a == e.b) {
      throw std::invalid_argument("build_graph: self-loop at area " + std::to_string(e.a));
    }
    g.neighbors[e.a].push_back(e.b);
    g.neighbors[e.b].push_back(e.a);
  }
  for (auto& nbr : g.neighbors) {
    std::sort(nbr.begin(), nbr.end());
    nbr.erase(std::unique(nbr.begin(), nbr.end()), nbr.end());
  }
  return g;
}

SpatialWeights row_standardize(const AdjacencyGraph& graph) {
  SpatialWeights w;
  w.rows.resize(graph.n_areas);
  for (int i = 0; i < graph.n_areas; ++i) {
    const auto& nbr = graph.neighbors[i];
    if (nbr.empty()) continue;
    const double share = 1.0 / static_cast<double>(nbr.size());
    w.rows[i].reserve(nbr.size());
    for (int j : nbr) w.rows[i].emplace_back(j, share);
  }
  return w;
}

SpatialWeights row_standardize(const AdjacencyGraph& graph, std::span<const Edge> interactions) {
  std::map<std::pair<int, int>, double> h;
  for (const Edge& e : interactions) {
    if (e.weight <= 0.0) {
      throw std::invalid_argument("row_standardize: interaction on edge " + edge_str(e.a, e.b) +
                                  " must be positive, got " + std::to_string(e.weight));
    }
    const auto key = std::minmax(e.a, e.b);
    if (e.a < 0 || e.b < 0 || e.a >= graph.n_areas || e.b >= graph.n_areas ||
        !graph.has_edge(e.a, e.b)) {
      throw std::invalid_argument("row_standardize: interaction given on non-edge " +
                                  edge_str(e.a, e.b));
    }
    if (!h.emplace(key, e.weight).second) {
      throw std::invalid_argument("row_standardize: duplicate interaction for edge " +
                                  edge_str(key.first, key.second));
    }
  }
  for (const auto& [i, j] : graph.edges()) {
    if (!h.count({i, j})) {
      throw std::invalid_argument("row_standardize: missing interaction for edge " +
                                  edge_str(i, j));
    }
  }
  SpatialWeights w;
  w.rows.resize(graph.n_areas);
  for (int i = 0; i < graph.n_areas; ++i) {
    const auto& nbr = graph.neighbors[i];
    if (nbr.empty()) continue;
    double total = 0.0;
    for (int j : nbr) total += h.at(std::minmax(i, j));
    w.rows[i].reserve(nbr.size());
    for (int j : nbr) w.rows[i].emplace_back(j, h.at(std::minmax(i, j)) / total);
  }
  return w;
}

std::vector<double> spatial_lag(const SpatialWeights& weights, std::span<const double> y_prev) {
  if (static_cast<int>(y_prev.size()) != weights.n_areas()) {
    throw std::invalid_argument("spatial_lag: y_prev has length " +
                                std::to_string(y_prev.size()) + " but weights cover " +
                                std::to_string(weights.n_areas()) + " areas");
  }
  std::vector<double> out(weights.n_areas(), 0.0);
  for (int i = 0; i < weights.n_areas(); ++i) {
    double acc = 0.0;
    for (const auto& [j, w] : weights.rows[i]) acc += w * y_prev[j];
    out[i] = acc;
  }
  return out;
}

std::vector<int> connected_components(const AdjacencyGraph& graph) {
  std::vector<int> label(graph.n_areas, -1);
  int next = 0;
  std::deque<int> queue;
  for (int start = 0; start < graph.n_areas; ++start) {
    if (label[start] != -1) continue;
    label[start] = next;
    queue.push_back(start);
    while (!queue.empty()) {
      const int i = queue.front();
      queue.pop_front();
      for (int j : graph.neighbors[i]) {
        if (label[j] == -1) {
          label[j] = next;
          queue.push_back(j);
        }
      }
    }
    ++next;
  }
  return label;
}

int count_components(const std::vector<int>& labels) {
  int c = 0;
  for (int l : labels) c = std::max(c, l + 1);
  return c;
}

AdjacencyGraph adjacency_from_weights(const SpatialWeights& weights) {
  AdjacencyGraph g;
  g.n_areas = weights.n_areas();
  g.neighbors.resize(g.n_areas);
  for (int i = 0; i < g.n_areas; ++i) {
    g.neighbors[i].reserve(weights.rows[i].size());
    for (const auto& [j, w] : weights.rows[i]) {
      if (w > 0.0) g.neighbors[i].push_back(j);
    }
  }
  return g;
}

std::vector<Edge> read_adjacency_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open adjacency file: " + path);
  }
  std::vector<Edge> edges;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    int a = 0;
    int b = 0;
    if (!(ls >> a)) continue;  // blank or comment-only line
    double h = 1.0;
    if (!(ls >> b)) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected 'i j [h]', got '" + line + "'");
    }
    if (ls >> h) {
      // third column parsed
    } else if (!ls.eof()) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed weight column");
    }
    std::string trailing;
    ls.clear();
    if (ls >> trailing) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": trailing fields");
    }
    edges.push_back({a, b, h});
  }
  return edges;
}

}  // namespace epimix

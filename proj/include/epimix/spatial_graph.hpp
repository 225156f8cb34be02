#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace epimix {

// Undirected area adjacency. Neighbor lists are sorted, symmetric, and free
// of self-loops by construction.
struct AdjacencyGraph {
  int n_areas = 0;
  std::vector<std::vector<int>> neighbors;

  int degree(int i) const { return static_cast<int>(neighbors[i].size()); }
  bool has_edge(int i, int j) const;
  // Unique undirected edges as (i, j) with i < j, lexicographically sorted.
  std::vector<std::pair<int, int>> edges() const;
};

// Unordered area pair, optionally carrying an interaction strength h_ij.
struct Edge {
  int a = 0;
  int b = 0;
  double weight = 1.0;
};

// Builds a symmetric graph from an edge list. Duplicate edges collapse to
// one. Throws on self-loops, out-of-range indices, or n_areas < 2.
AdjacencyGraph build_graph(std::span<const Edge> edges, int n_areas);

// Row-standardised spatial weights: w_ij = h_ij / sum_j h_ij. Rows of
// isolated areas are empty; all other rows sum to one.
struct SpatialWeights {
  std::vector<std::vector<std::pair<int, double>>> rows;  // (j, w_ij), sorted by j

  int n_areas() const { return static_cast<int>(rows.size()); }
};

// Binary contiguity: every h_ij = 1.
SpatialWeights row_standardize(const AdjacencyGraph& graph);

// Per-edge interactions h_ij > 0. The list must cover exactly the graph's
// edges, each once; throws on non-positive weights, missing or extra edges.
SpatialWeights row_standardize(const AdjacencyGraph& graph, std::span<const Edge> interactions);

// result_i = sum_j w_ij * y_prev_j; zero for isolated areas.
std::vector<double> spatial_lag(const SpatialWeights& weights, std::span<const double> y_prev);

// Component label per area, labels 0..C-1 in order of first appearance.
// Isolated areas form singleton components.
std::vector<int> connected_components(const AdjacencyGraph& graph);

int count_components(const std::vector<int>& labels);

// Recovers the adjacency pattern from the nonzero structure of the weights.
AdjacencyGraph adjacency_from_weights(const SpatialWeights& weights);

// Adjacency file: one edge per line, "i j" zero-based indices with an
// optional third column h_ij; '#' starts a comment. Returns the edge list;
// validation happens in build_graph.
std::vector<Edge> read_adjacency_file(const std::string& path);

}  // namespace epimix

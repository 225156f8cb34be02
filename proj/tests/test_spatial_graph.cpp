#include <Eigen/Dense>
#include <cstdio>
#include <fstream>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "epimix/rng.hpp"
#include "epimix/spatial_graph.hpp"

using namespace epimix;

namespace {

AdjacencyGraph path3() {
  const std::vector<Edge> e{{0, 1}, {1, 2}};
  return build_graph(e, 3);
}

// Independent dense-matrix view of the row-standardised weights.
Eigen::MatrixXd dense_weights(const SpatialWeights& w) {
  const int n = w.n_areas();
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (const auto& [j, wij] : w.rows[i]) m(i, j) = wij;
  }
  return m;
}

std::vector<int> bfs_components(const AdjacencyGraph& g) {
  std::vector<int> label(g.n_areas, -1);
  int next = 0;
  for (int s = 0; s < g.n_areas; ++s) {
    if (label[s] != -1) continue;
    label[s] = next;
    std::queue<int> q;
    q.push(s);
    while (!q.empty()) {
      const int i = q.front();
      q.pop();
      for (int j : g.neighbors[i]) {
        if (label[j] == -1) {
          label[j] = next;
          q.push(j);
        }
      }
    }
    ++next;
  }
  return label;
}

}  // namespace

TEST_CASE("smallest graph: one edge on two areas") {
  const std::vector<Edge> e{{0, 1}};
  const AdjacencyGraph g = build_graph(e, 2);
  CHECK(g.n_areas == 2);
  CHECK(g.degree(0) == 1);
  CHECK(g.degree(1) == 1);
  CHECK(g.has_edge(0, 1));
  CHECK(g.has_edge(1, 0));
}

TEST_CASE("duplicate and mirrored edges collapse to one") {
  const std::vector<Edge> e{{0, 1}, {1, 0}, {0, 1}};
  const AdjacencyGraph g = build_graph(e, 2);
  CHECK(g.degree(0) == 1);
  CHECK(g.degree(1) == 1);
  CHECK(g.edges().size() == 1);
}

TEST_CASE("path graph has degree two in the middle") {
  const AdjacencyGraph g = path3();
  CHECK(g.degree(0) == 1);
  CHECK(g.degree(1) == 2);
  CHECK(g.degree(2) == 1);
  CHECK_FALSE(g.has_edge(0, 2));
}

TEST_CASE("graph construction rejects bad input") {
  const std::vector<Edge> self{{1, 1}};
  CHECK_THROWS_AS(build_graph(self, 3), std::invalid_argument);
  const std::vector<Edge> range{{0, 5}};
  CHECK_THROWS_AS(build_graph(range, 3), std::invalid_argument);
  const std::vector<Edge> ok{{0, 1}};
  CHECK_THROWS_AS(build_graph(ok, 1), std::invalid_argument);
}

TEST_CASE("graph symmetry holds on random graphs") {
  Rng rng(101);
  for (int rep = 0; rep < 20; ++rep) {
    const int n = 4 + static_cast<int>(rng.uniform() * 8);
    std::vector<Edge> edges;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        if (rng.uniform() < 0.3) edges.push_back({i, j});
      }
    }
    if (edges.empty()) edges.push_back({0, 1});
    const AdjacencyGraph g = build_graph(edges, n);
    for (int i = 0; i < n; ++i) {
      for (int j : g.neighbors[i]) CHECK(g.has_edge(j, i));
    }
  }
}

TEST_CASE("binary weights split the path rows evenly") {
  const SpatialWeights w = row_standardize(path3());
  REQUIRE(w.rows[1].size() == 2);
  CHECK(w.rows[1][0].first == 0);
  CHECK(w.rows[1][0].second == doctest::Approx(0.5));
  CHECK(w.rows[1][1].first == 2);
  CHECK(w.rows[1][1].second == doctest::Approx(0.5));
  REQUIRE(w.rows[0].size() == 1);
  CHECK(w.rows[0][0].first == 1);
  CHECK(w.rows[0][0].second == doctest::Approx(1.0));
}

TEST_CASE("normalisation absorbs the interaction scale") {
  const std::vector<Edge> e{{0, 1}};
  const AdjacencyGraph g = build_graph(e, 2);
  const std::vector<Edge> h{{0, 1, 7.0}};
  const SpatialWeights w = row_standardize(g, h);
  CHECK(w.rows[0][0].second == doctest::Approx(1.0));
  CHECK(w.rows[1][0].second == doctest::Approx(1.0));
}

TEST_CASE("star center splits weight three ways") {
  const std::vector<Edge> e{{0, 1}, {0, 2}, {0, 3}};
  const SpatialWeights w = row_standardize(build_graph(e, 4));
  REQUIRE(w.rows[0].size() == 3);
  for (const auto& [j, wij] : w.rows[0]) CHECK(wij == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("row sums are one and isolated rows are empty") {
  const std::vector<Edge> e{{0, 1}, {1, 2}, {2, 0}};
  const SpatialWeights w = row_standardize(build_graph(e, 5));
  for (int i = 0; i < 3; ++i) {
    double s = 0.0;
    for (const auto& [j, wij] : w.rows[i]) s += wij;
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  CHECK(w.rows[3].empty());
  CHECK(w.rows[4].empty());
}

TEST_CASE("interaction weights must cover exactly the edges") {
  const AdjacencyGraph g = path3();
  const std::vector<Edge> bad_value{{0, 1, -1.0}, {1, 2, 1.0}};
  CHECK_THROWS_AS(row_standardize(g, bad_value), std::invalid_argument);
  const std::vector<Edge> zero_value{{0, 1, 0.0}, {1, 2, 1.0}};
  CHECK_THROWS_AS(row_standardize(g, zero_value), std::invalid_argument);
  const std::vector<Edge> non_edge{{0, 1, 1.0}, {1, 2, 1.0}, {0, 2, 1.0}};
  CHECK_THROWS_AS(row_standardize(g, non_edge), std::invalid_argument);
  const std::vector<Edge> missing{{0, 1, 1.0}};
  CHECK_THROWS_AS(row_standardize(g, missing), std::invalid_argument);
}

TEST_CASE("weighted rows follow h ratios") {
  const AdjacencyGraph g = path3();
  const std::vector<Edge> h{{0, 1, 1.0}, {1, 2, 3.0}};
  const SpatialWeights w = row_standardize(g, h);
  CHECK(w.rows[1][0].second == doctest::Approx(0.25));
  CHECK(w.rows[1][1].second == doctest::Approx(0.75));
}

TEST_CASE("constant input returns the constant through the lag") {
  const std::vector<Edge> e{{0, 1}, {1, 2}, {2, 3}, {3, 0}, {0, 2}};
  const SpatialWeights w = row_standardize(build_graph(e, 6));
  const std::vector<double> y(6, 4.25);
  const std::vector<double> out = spatial_lag(w, y);
  for (int i = 0; i < 4; ++i) CHECK(std::abs(out[i] - 4.25) < 1e-12);
  CHECK(out[4] == 0.0);
  CHECK(out[5] == 0.0);
}

TEST_CASE("path lag takes the neighbor mean") {
  const SpatialWeights w = row_standardize(path3());
  const std::vector<double> y{10.0, 0.0, 30.0};
  const std::vector<double> out = spatial_lag(w, y);
  CHECK(out[1] == doctest::Approx(20.0));
  CHECK(out[0] == doctest::Approx(0.0));
  CHECK(out[2] == doctest::Approx(0.0));
}

TEST_CASE("lag equals the dense matrix product on random graphs") {
  Rng rng(202);
  for (int rep = 0; rep < 25; ++rep) {
    const int n = 6;
    std::vector<Edge> edges;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        if (rng.uniform() < 0.4) edges.push_back({i, j});
      }
    }
    if (edges.empty()) edges.push_back({0, 1});
    const SpatialWeights w = row_standardize(build_graph(edges, n));
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) y[i] = std::floor(rng.uniform() * 50.0);
    const std::vector<double> got = spatial_lag(w, std::vector<double>(y.data(), y.data() + n));
    const Eigen::VectorXd want = dense_weights(w) * y;
    for (int i = 0; i < n; ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("lag is linear in its input") {
  Rng rng(303);
  const std::vector<Edge> e{{0, 1}, {1, 2}, {2, 3}, {1, 3}};
  const SpatialWeights w = row_standardize(build_graph(e, 4));
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<double> y(4), z(4), combo(4);
    const double a = rng.uniform(-2.0, 2.0), b = rng.uniform(-2.0, 2.0);
    for (int i = 0; i < 4; ++i) {
      y[i] = rng.uniform(0.0, 20.0);
      z[i] = rng.uniform(0.0, 20.0);
      combo[i] = a * y[i] + b * z[i];
    }
    const auto ly = spatial_lag(w, y);
    const auto lz = spatial_lag(w, z);
    const auto lc = spatial_lag(w, combo);
    for (int i = 0; i < 4; ++i) CHECK(std::abs(lc[i] - (a * ly[i] + b * lz[i])) < 1e-10);
  }
}

TEST_CASE("lag rejects a length mismatch") {
  const SpatialWeights w = row_standardize(path3());
  const std::vector<double> y{1.0, 2.0};
  CHECK_THROWS_AS(spatial_lag(w, y), std::invalid_argument);
}

TEST_CASE("path graph is one component") {
  const std::vector<int> label = connected_components(path3());
  CHECK(count_components(label) == 1);
  CHECK(label == std::vector<int>{0, 0, 0});
}

TEST_CASE("two disjoint edges form two components") {
  const std::vector<Edge> e{{0, 1}, {2, 3}};
  const std::vector<int> label = connected_components(build_graph(e, 4));
  CHECK(count_components(label) == 2);
  CHECK(label[0] == label[1]);
  CHECK(label[2] == label[3]);
  CHECK(label[0] != label[2]);
}

TEST_CASE("isolated areas are singleton components") {
  const std::vector<Edge> e{{0, 1}};
  const std::vector<int> label = connected_components(build_graph(e, 3));
  CHECK(count_components(label) == 2);
  CHECK(label[2] != label[0]);
}

TEST_CASE("component labels match a breadth-first-search oracle") {
  Rng rng(404);
  for (int rep = 0; rep < 20; ++rep) {
    const int n = 10;
    std::vector<Edge> edges;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        if (rng.uniform() < 0.12) edges.push_back({i, j});
      }
    }
    if (edges.empty()) edges.push_back({0, 1});
    const AdjacencyGraph g = build_graph(edges, n);
    CHECK(connected_components(g) == bfs_components(g));
  }
}

TEST_CASE("adjacency recovered from the weight pattern") {
  const std::vector<Edge> e{{0, 1}, {1, 2}, {3, 4}};
  const AdjacencyGraph g = build_graph(e, 5);
  const AdjacencyGraph back = adjacency_from_weights(row_standardize(g));
  CHECK(back.n_areas == g.n_areas);
  CHECK(back.edges() == g.edges());
}

TEST_CASE("adjacency file parsing handles comments and weights") {
  const std::string path = "test_adj_tmp.txt";
  {
    std::ofstream f(path);
    f << "# edge list\n";
    f << "0 1\n";
    f << "\n";
    f << "1 2 3.5   # weighted\n";
  }
  const std::vector<Edge> edges = read_adjacency_file(path);
  REQUIRE(edges.size() == 2);
  CHECK(edges[0].a == 0);
  CHECK(edges[0].b == 1);
  CHECK(edges[0].weight == doctest::Approx(1.0));
  CHECK(edges[1].a == 1);
  CHECK(edges[1].b == 2);
  CHECK(edges[1].weight == doctest::Approx(3.5));
  std::remove(path.c_str());
}

TEST_CASE("adjacency file parsing rejects malformed rows") {
  const std::string path = "test_adj_bad_tmp.txt";
  {
    std::ofstream f(path);
    f << "0 x\n";
  }
  CHECK_THROWS(read_adjacency_file(path));
  std::remove(path.c_str());
  CHECK_THROWS(read_adjacency_file("does_not_exist_anywhere.txt"));
}

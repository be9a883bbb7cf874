#include "diffgraph/graph.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <queue>
#include <sstream>

#include "diffgraph/errors.hpp"
#include "diffgraph/rng.hpp"
#include "diffgraph/tensor.hpp"

using namespace diffgraph;

namespace {

Graph random_graph(Rng& rng, std::size_t n, double p, std::size_t width) {
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = u + 1; v < n; ++v) {
      if (rng.bernoulli(p)) edges.push_back({u, v});
    }
  }
  std::vector<double> feat(n * width);
  for (double& f : feat) f = rng.normal(0.0, 1.0);
  return make_graph(n, edges, Tensor::from_values({n, width}, std::move(feat)));
}

// Dense-adjacency oracle: A·H with A materialized explicitly.
std::vector<double> dense_neighbor_sum(const Graph& g, const Tensor& h) {
  const std::size_t n = g.num_nodes, d = h.shape()[1];
  std::vector<double> a(n * n, 0.0);
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t e = g.row_offsets[u]; e < g.row_offsets[u + 1]; ++e) {
      a[u * n + g.col_indices[e]] = 1.0;
    }
  }
  std::vector<double> out(n * d, 0.0);
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = 0; v < n; ++v) {
      for (std::size_t j = 0; j < d; ++j) {
        out[u * d + j] += a[u * n + v] * h.values()[v * d + j];
      }
    }
  }
  return out;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void expect_graphs_equal(const Graph& a, const Graph& b) {
  EXPECT_EQ(a.num_nodes, b.num_nodes);
  EXPECT_EQ(a.row_offsets, b.row_offsets);
  EXPECT_EQ(a.col_indices, b.col_indices);
  EXPECT_EQ(a.edge_row, b.edge_row);
  ASSERT_EQ(a.node_features.shape(), b.node_features.shape());
  for (std::size_t i = 0; i < a.node_features.numel(); ++i) {
    EXPECT_EQ(a.node_features.values()[i], b.node_features.values()[i]);
  }
  ASSERT_EQ(a.has_edge_features(), b.has_edge_features());
  if (a.has_edge_features()) {
    ASSERT_EQ(a.edge_features.shape(), b.edge_features.shape());
    for (std::size_t i = 0; i < a.edge_features.numel(); ++i) {
      EXPECT_EQ(a.edge_features.values()[i], b.edge_features.values()[i]);
    }
  }
  EXPECT_EQ(a.labels.kind, b.labels.kind);
  EXPECT_EQ(a.labels.graph_class, b.labels.graph_class);
  EXPECT_EQ(a.labels.graph_bits, b.labels.graph_bits);
  EXPECT_EQ(a.labels.node_classes, b.labels.node_classes);
  ASSERT_EQ(a.labels.pairs.size(), b.labels.pairs.size());
  for (std::size_t i = 0; i < a.labels.pairs.size(); ++i) {
    EXPECT_EQ(a.labels.pairs[i].u, b.labels.pairs[i].u);
    EXPECT_EQ(a.labels.pairs[i].v, b.labels.pairs[i].v);
    EXPECT_EQ(a.labels.pairs[i].label, b.labels.pairs[i].label);
  }
}

}  // namespace

TEST(GraphBuild, CsrInvariantsHold) {
  Rng rng(3);
  Graph g = random_graph(rng, 12, 0.3, 4);
  ASSERT_EQ(g.row_offsets.size(), g.num_nodes + 1);
  EXPECT_EQ(g.row_offsets.front(), 0u);
  EXPECT_EQ(g.row_offsets.back(), g.num_edges());
  for (std::size_t u = 0; u < g.num_nodes; ++u) {
    EXPECT_LE(g.row_offsets[u], g.row_offsets[u + 1]);
    for (std::size_t e = g.row_offsets[u]; e < g.row_offsets[u + 1]; ++e) {
      EXPECT_LT(g.col_indices[e], g.num_nodes);
      EXPECT_NE(g.col_indices[e], u);  // no self-loops stored
      EXPECT_EQ(g.edge_row[e], u);
      if (e + 1 < g.row_offsets[u + 1]) {
        EXPECT_LT(g.col_indices[e], g.col_indices[e + 1]);  // sorted rows
      }
    }
  }
  // Symmetric storage: each undirected edge appears in both directions.
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    EXPECT_TRUE(g.has_edge(g.col_indices[e], g.edge_row[e]));
  }
}

TEST(GraphBuild, RejectsBadInput) {
  Tensor x = Tensor::zeros({3, 1});
  EXPECT_THROW(make_graph(3, {{0, 7}}, x), ValidationError);
  EXPECT_THROW(make_graph(3, {{1, 1}}, x), ValidationError);
  EXPECT_THROW(make_graph(3, {{0, 1}, {1, 0}}, x), ValidationError);
  EXPECT_THROW(make_graph(3, {{0, 1}}, Tensor::zeros({2, 1})), DimensionError);
  EXPECT_THROW(make_graph(0, {}, Tensor::zeros({0, 1})), ValidationError);
}

TEST(GraphBuild, EdgeFeaturesDuplicatedOntoBothDirections) {
  Tensor x = Tensor::zeros({3, 1});
  Tensor ef = Tensor::from_values({2, 2}, {1, 2, 3, 4});
  Graph g = make_graph(3, {{0, 1}, {1, 2}}, x, ef);
  ASSERT_EQ(g.num_edges(), 4u);
  ASSERT_TRUE(g.has_edge_features());
  // Both directed copies of an undirected pair carry the same feature row.
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    const std::size_t u = g.edge_row[e], v = g.col_indices[e];
    const bool first_pair = (u + v) == 1;  // pair (0,1) vs pair (1,2)
    EXPECT_EQ(g.edge_features.at(e, 0), first_pair ? 1.0 : 3.0);
    EXPECT_EQ(g.edge_features.at(e, 1), first_pair ? 2.0 : 4.0);
  }
}

TEST(NeighborSum, SwapsAcrossSingleEdge) {
  Graph g = make_graph(2, {{0, 1}}, Tensor::zeros({2, 1}));
  Tensor h = Tensor::from_values({2, 1}, {1, 2});
  Tensor s = neighbor_sum(g, h);
  EXPECT_DOUBLE_EQ(s.at(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(s.at(1, 0), 1.0);
}

TEST(NeighborSum, IsolatedNodeGetsZeroRow) {
  Graph g = make_graph(3, {{0, 1}}, Tensor::zeros({3, 1}));
  Tensor h = Tensor::from_values({3, 1}, {5, 7, 9});
  Tensor s = neighbor_sum(g, h);
  EXPECT_DOUBLE_EQ(s.at(2, 0), 0.0);
}

TEST(NeighborSum, MatchesDenseAdjacencyOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 2 + rng.index(31);  // up to 32 nodes
    Graph g = random_graph(rng, n, 0.25, 3);
    Tensor h = Tensor::from_values(
        {n, 3}, [&] {
          std::vector<double> v(n * 3);
          for (double& x : v) x = rng.normal(0.0, 1.0);
          return v;
        }());
    Tensor s = neighbor_sum(g, h);
    const auto oracle = dense_neighbor_sum(g, h);
    for (std::size_t i = 0; i < oracle.size(); ++i) {
      EXPECT_NEAR(s.values()[i], oracle[i], 1e-12);
    }
  }
}

TEST(NeighborSum, RowCountMismatchRejected) {
  Graph g = make_graph(3, {{0, 1}}, Tensor::zeros({3, 1}));
  EXPECT_THROW(neighbor_sum(g, Tensor::zeros({2, 1})), DimensionError);
}

TEST(NeighborSum, PermutationConsistency) {
  Rng rng(9);
  const std::size_t n = 10;
  Graph g = random_graph(rng, n, 0.3, 4);
  std::vector<double> hv(n * 4);
  for (double& v : hv) v = rng.normal(0.0, 1.0);
  Tensor h = Tensor::from_values({n, 4}, hv);

  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  rng.shuffle(perm);

  // Relabel nodes by perm and permute feature rows to match.
  std::vector<std::pair<std::size_t, std::size_t>> relabeled;
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t e = g.row_offsets[u]; e < g.row_offsets[u + 1]; ++e) {
      const std::size_t v = g.col_indices[e];
      if (u < v) relabeled.push_back({perm[u], perm[v]});
    }
  }
  std::vector<double> hp(n * 4);
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t j = 0; j < 4; ++j) hp[perm[u] * 4 + j] = hv[u * 4 + j];
  }
  Graph gp = make_graph(n, relabeled, Tensor::zeros({n, 4}));
  Tensor sp = neighbor_sum(gp, Tensor::from_values({n, 4}, hp));
  Tensor s = neighbor_sum(g, h);
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_NEAR(sp.at(perm[u], j), s.at(u, j), 1e-12);
    }
  }
}

TEST(NeighborSum, GradientMatchesFiniteDifferences) {
  Rng rng(15);
  Graph g = random_graph(rng, 6, 0.4, 2);
  std::vector<double> hv(6 * 2);
  for (double& v : hv) v = rng.normal(0.0, 1.0);
  Tensor h = Tensor::from_values({6, 2}, std::move(hv), true);
  auto report = grad_check(
      [&g](const std::vector<Tensor>& in) {
        Tensor s = neighbor_sum(g, in[0]);
        return sum(mul(s, s));
      },
      {h});
  EXPECT_LT(report.max_rel_error, 1e-6) << report.worst;
}

TEST(BatchGraphs, OffsetsAndIndexByConstruction) {
  Labels la;
  la.kind = LabelKind::GraphClass;
  la.graph_class = 0;
  Labels lb = la;
  lb.graph_class = 1;
  Graph a = make_graph(2, {{0, 1}}, Tensor::zeros({2, 1}), {}, la);
  Graph b = make_graph(3, {{0, 2}}, Tensor::zeros({3, 1}), {}, lb);
  Batch batch = batch_graphs({a, b});
  EXPECT_EQ(batch.num_graphs, 2u);
  EXPECT_EQ(batch.num_nodes, 5u);
  EXPECT_EQ(batch.graph_offsets, (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(batch.graph_index, (std::vector<std::size_t>{0, 0, 1, 1, 1}));
  EXPECT_EQ(batch.graph_classes, (std::vector<int>{0, 1}));
  // Second graph's edge (0,2) lands at merged ids (2,4).
  EXPECT_TRUE(batch.merged.has_edge(2, 4));
  EXPECT_TRUE(batch.merged.has_edge(4, 2));
  EXPECT_FALSE(batch.merged.has_edge(1, 2));  // no cross-graph edges
}

TEST(BatchGraphs, SingleGraphIsIdentityPlusTrivialIndex) {
  Rng rng(21);
  Graph g = random_graph(rng, 5, 0.4, 3);
  Batch batch = batch_graphs({g});
  EXPECT_EQ(batch.num_graphs, 1u);
  EXPECT_EQ(batch.merged.row_offsets, g.row_offsets);
  EXPECT_EQ(batch.merged.col_indices, g.col_indices);
  for (std::size_t i = 0; i < g.node_features.numel(); ++i) {
    EXPECT_EQ(batch.merged.node_features.values()[i],
              g.node_features.values()[i]);
  }
  EXPECT_EQ(batch.graph_index, std::vector<std::size_t>(5, 0));
}

TEST(BatchGraphs, MeanReadoutMatchesUnbatchedOracle) {
  Rng rng(27);
  std::vector<Graph> gs;
  for (int i = 0; i < 4; ++i) gs.push_back(random_graph(rng, 3 + rng.index(5), 0.4, 3));
  Batch batch = batch_graphs(gs);
  // Per-graph feature means computed from the batch...
  std::vector<double> batched(batch.num_graphs * 3, 0.0);
  for (std::size_t u = 0; u < batch.num_nodes; ++u) {
    for (std::size_t j = 0; j < 3; ++j) {
      batched[batch.graph_index[u] * 3 + j] +=
          batch.merged.node_features.at(u, j);
    }
  }
  // ...equal the stacked per-graph means.
  for (std::size_t gi = 0; gi < gs.size(); ++gi) {
    const std::size_t n = gs[gi].num_nodes;
    for (std::size_t j = 0; j < 3; ++j) {
      double mean = 0.0;
      for (std::size_t u = 0; u < n; ++u) mean += gs[gi].node_features.at(u, j);
      EXPECT_NEAR(batched[gi * 3 + j] / static_cast<double>(n),
                  mean / static_cast<double>(n), 1e-12);
    }
  }
}

TEST(BatchGraphs, HeterogeneousInputsRejected) {
  Graph a = make_graph(2, {{0, 1}}, Tensor::zeros({2, 1}));
  Graph b = make_graph(2, {{0, 1}}, Tensor::zeros({2, 3}));
  EXPECT_THROW(batch_graphs({a, b}), FormatError);
  Labels l;
  l.kind = LabelKind::GraphClass;
  Graph c = make_graph(2, {{0, 1}}, Tensor::zeros({2, 1}), {}, l);
  EXPECT_THROW(batch_graphs({a, c}), FormatError);
}

TEST(BatchGraphs, LinkPairsShiftIntoMergedIds) {
  Labels l;
  l.kind = LabelKind::LinkPairs;
  l.pairs = {{0, 1, 1}};
  Graph a = make_graph(2, {{0, 1}}, Tensor::zeros({2, 1}), {}, l);
  Graph b = make_graph(3, {{0, 1}}, Tensor::zeros({3, 1}), {}, l);
  Batch batch = batch_graphs({a, b});
  ASSERT_EQ(batch.pairs.size(), 2u);
  EXPECT_EQ(batch.pairs[1].u, 2u);
  EXPECT_EQ(batch.pairs[1].v, 3u);
  EXPECT_EQ(batch.pair_graph, (std::vector<std::size_t>{0, 1}));
}

TEST(DatasetIo, MinimalOneNodeGraph) {
  const std::string path = temp_path("diffgraph_minimal.jsonl");
  {
    std::ofstream out(path);
    out << R"({"num_nodes":1,"edges":[],"x":[["0.5"]],"y_graph":1})" << "\n";
  }
  auto gs = load_dataset(path);
  ASSERT_EQ(gs.size(), 1u);
  EXPECT_EQ(gs[0].num_nodes, 1u);
  EXPECT_EQ(gs[0].num_edges(), 0u);
  EXPECT_DOUBLE_EQ(gs[0].node_features.at(0, 0), 0.5);
  EXPECT_EQ(gs[0].labels.kind, LabelKind::GraphClass);
  EXPECT_EQ(gs[0].labels.graph_class, 1);
  std::remove(path.c_str());
}

TEST(DatasetIo, RoundTripIsExact) {
  const std::string path = temp_path("diffgraph_roundtrip.jsonl");
  for (const char* kind : {"sbm-node", "cycle-vs-path", "pair-contact"}) {
    GenParams params;
    params.num_graphs = 10;
    params.size = kind == std::string("sbm-node") ? 5 : 8;
    auto gs = gen_synthetic(kind, 42, params);
    save_dataset(gs, path);
    auto loaded = load_dataset(path);
    ASSERT_EQ(loaded.size(), gs.size()) << kind;
    for (std::size_t i = 0; i < gs.size(); ++i) {
      expect_graphs_equal(gs[i], loaded[i]);
    }
  }
  std::remove(path.c_str());
}

TEST(DatasetIo, EdgeFeatureRoundTrip) {
  Rng rng(33);
  Labels l;
  l.kind = LabelKind::GraphClass;
  std::vector<double> ef(2 * 3);
  for (double& v : ef) v = rng.normal(0.0, 1.0);
  Graph g = make_graph(3, {{0, 1}, {1, 2}}, Tensor::zeros({3, 2}),
                       Tensor::from_values({2, 3}, std::move(ef)), l);
  const std::string path = temp_path("diffgraph_edgefeat.jsonl");
  save_dataset({g}, path);
  auto loaded = load_dataset(path);
  ASSERT_EQ(loaded.size(), 1u);
  expect_graphs_equal(g, loaded[0]);
  std::remove(path.c_str());
}

TEST(DatasetIo, OutOfRangeEdgeNamesLineAndIndex) {
  const std::string path = temp_path("diffgraph_badedge.jsonl");
  {
    std::ofstream out(path);
    out << R"({"num_nodes":2,"edges":[[0,1]],"x":[["0"],["0"]],"y_graph":0})" << "\n";
    out << R"({"num_nodes":3,"edges":[[0,7]],"x":[["0"],["0"],["0"]],"y_graph":0})" << "\n";
  }
  try {
    load_dataset(path);
    FAIL() << "expected a validation error";
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(":2"), std::string::npos) << msg;   // line number
    EXPECT_NE(msg.find("7"), std::string::npos) << msg;    // offending index
  }
  std::remove(path.c_str());
}

TEST(DatasetIo, MalformedJsonNamesLine) {
  const std::string path = temp_path("diffgraph_badjson.jsonl");
  {
    std::ofstream out(path);
    out << R"({"num_nodes":1,"edges":[],"x":[["0"]],"y_graph":0})" << "\n";
    out << "{not json\n";
  }
  try {
    load_dataset(path);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos) << e.what();
  }
  std::remove(path.c_str());
}

TEST(DatasetIo, ExactlyOneLabelKeyRequired) {
  const std::string path = temp_path("diffgraph_badlabels.jsonl");
  {
    std::ofstream out(path);
    out << R"({"num_nodes":1,"edges":[],"x":[["0"]]})" << "\n";
  }
  EXPECT_THROW(load_dataset(path), ParseError);
  {
    std::ofstream out(path);
    out << R"({"num_nodes":1,"edges":[],"x":[["0"]],"y_graph":0,"y_node":[0]})" << "\n";
  }
  EXPECT_THROW(load_dataset(path), ParseError);
  std::remove(path.c_str());
}

TEST(Synthetic, CycleAndPathEdgeCounts) {
  GenParams params;
  params.num_graphs = 2;
  params.size = 4;
  auto gs = gen_synthetic("cycle-vs-path", 1, params);
  ASSERT_EQ(gs.size(), 2u);
  EXPECT_EQ(gs[0].labels.graph_class, 0);
  EXPECT_EQ(gs[0].num_undirected_edges(), 4u);  // cycle of length 4
  EXPECT_EQ(gs[1].labels.graph_class, 1);
  EXPECT_EQ(gs[1].num_undirected_edges(), 3u);  // path on 4 nodes
  for (const Graph& g : gs) {
    for (std::size_t u = 0; u < g.num_nodes; ++u) {
      EXPECT_DOUBLE_EQ(g.node_features.at(u, 0), 1.0);
    }
  }
}

TEST(Synthetic, SameSeedGivesByteIdenticalFiles) {
  const std::string p1 = temp_path("diffgraph_det1.jsonl");
  const std::string p2 = temp_path("diffgraph_det2.jsonl");
  GenParams params;
  params.num_graphs = 6;
  params.size = 10;
  for (const char* kind : {"sbm-node", "pair-contact"}) {
    save_dataset(gen_synthetic(kind, 123, params), p1);
    save_dataset(gen_synthetic(kind, 123, params), p2);
    EXPECT_EQ(slurp(p1), slurp(p2)) << kind;
    save_dataset(gen_synthetic(kind, 124, params), p2);
    EXPECT_NE(slurp(p1), slurp(p2)) << kind;
  }
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST(Synthetic, SbmEdgeCountsMatchBinomialExpectation) {
  GenParams params;
  params.num_graphs = 10;
  params.blocks = 2;
  params.size = 20;
  params.p_in = 0.9;
  params.p_out = 0.05;
  auto gs = gen_synthetic("sbm-node", 7, params);
  std::size_t intra = 0, inter = 0;
  for (const Graph& g : gs) {
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
      const std::size_t u = g.edge_row[e], v = g.col_indices[e];
      if (u < v) ((u / 20 == v / 20) ? intra : inter) += 1;
    }
  }
  // Per graph: 2*C(20,2) = 380 intra pairs, 400 inter pairs.
  const double n_intra = 10 * 380.0, n_inter = 10 * 400.0;
  const double mu_intra = n_intra * 0.9;
  const double sd_intra = std::sqrt(n_intra * 0.9 * 0.1);
  EXPECT_NEAR(static_cast<double>(intra), mu_intra, 3.0 * sd_intra);
  const double mu_inter = n_inter * 0.05;
  const double sd_inter = std::sqrt(n_inter * 0.05 * 0.95);
  EXPECT_NEAR(static_cast<double>(inter), mu_inter, 3.0 * sd_inter);
}

TEST(Synthetic, SbmLabelsAreBlocks) {
  GenParams params;
  params.num_graphs = 1;
  params.blocks = 3;
  params.size = 4;
  auto gs = gen_synthetic("sbm-node", 11, params);
  ASSERT_EQ(gs[0].labels.kind, LabelKind::NodeClass);
  ASSERT_EQ(gs[0].labels.node_classes.size(), 12u);
  for (std::size_t u = 0; u < 12; ++u) {
    EXPECT_EQ(gs[0].labels.node_classes[u], static_cast<int>(u / 4));
  }
  EXPECT_EQ(gs[0].feature_width(), 3u);
}

TEST(Synthetic, PairContactRespectsDistanceAndHopRules) {
  GenParams params;
  params.num_graphs = 8;
  params.size = 24;
  auto gs = gen_synthetic("pair-contact", 99, params);
  std::size_t total_pos = 0;
  for (const Graph& g : gs) {
    ASSERT_EQ(g.labels.kind, LabelKind::LinkPairs);
    std::size_t pos = 0, neg = 0;
    for (const PairLabel& p : g.labels.pairs) {
      ASSERT_LT(p.u, g.num_nodes);
      ASSERT_LT(p.v, g.num_nodes);
      // BFS hop count between the endpoints.
      std::vector<std::size_t> dist(g.num_nodes,
                                    std::numeric_limits<std::size_t>::max());
      std::queue<std::size_t> q;
      q.push(p.u);
      dist[p.u] = 0;
      while (!q.empty()) {
        const std::size_t u = q.front();
        q.pop();
        for (std::size_t e = g.row_offsets[u]; e < g.row_offsets[u + 1]; ++e) {
          const std::size_t v = g.col_indices[e];
          if (dist[v] == std::numeric_limits<std::size_t>::max()) {
            dist[v] = dist[u] + 1;
            q.push(v);
          }
        }
      }
      EXPECT_TRUE(dist[p.v] >= 3) << "pair closer than 3 hops";
      const double dx = g.node_features.at(p.u, 0) - g.node_features.at(p.v, 0);
      const double dy = g.node_features.at(p.u, 1) - g.node_features.at(p.v, 1);
      const double d = std::sqrt(dx * dx + dy * dy);
      if (p.label == 1) {
        EXPECT_LE(d, params.r_contact + 1e-12);
        ++pos;
      } else {
        EXPECT_GT(d, params.r_contact);
        ++neg;
      }
    }
    EXPECT_LE(neg, pos);  // at most one sampled negative per positive
    total_pos += pos;
  }
  EXPECT_GT(total_pos, 0u) << "generator produced no positive pairs";
}

TEST(Synthetic, UnknownKindRejected) {
  EXPECT_THROW(gen_synthetic("nonsense", 1, {}), UsageError);
}

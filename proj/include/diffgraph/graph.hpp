#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "diffgraph/tensor.hpp"

namespace diffgraph {

enum class LabelKind { None, GraphClass, GraphMultiLabel, NodeClass, LinkPairs };

struct PairLabel {
  std::size_t u = 0;
  std::size_t v = 0;
  int label = 0;  // 1 = positive, 0 = negative
};

struct Labels {
  LabelKind kind = LabelKind::None;
  int graph_class = 0;                 // GraphClass
  std::vector<int> graph_bits;         // GraphMultiLabel
  std::vector<int> node_classes;       // NodeClass, one per node
  std::vector<PairLabel> pairs;        // LinkPairs
};

// Undirected graph stored as a symmetric directed CSR: row u lists N(u) in
// ascending order and every undirected edge appears in both directions.
// Self-loops are never stored; layers add the self contribution explicitly.
struct Graph {
  std::size_t num_nodes = 0;
  std::vector<std::size_t> row_offsets;  // size num_nodes + 1, nondecreasing
  std::vector<std::size_t> col_indices;  // neighbor (message source) per edge
  std::vector<std::size_t> edge_row;     // owning row (message target) per edge
  Tensor node_features;                  // [num_nodes x d_in]
  Tensor edge_features;                  // undefined, or [num_edges x d_e]
  Labels labels;

  std::size_t num_edges() const { return col_indices.size(); }
  std::size_t num_undirected_edges() const { return col_indices.size() / 2; }
  std::size_t feature_width() const { return node_features.cols(); }
  bool has_edge_features() const { return edge_features.defined(); }
  std::size_t degree(std::size_t u) const {
    return row_offsets[u + 1] - row_offsets[u];
  }
  bool has_edge(std::size_t u, std::size_t v) const;
};

// Builds the CSR form from an undirected edge list, validating endpoints,
// rejecting self-loops and duplicates. undirected_edge_features, when
// defined, has one row per undirected pair and is duplicated onto both
// directed copies.
Graph make_graph(
    std::size_t num_nodes,
    const std::vector<std::pair<std::size_t, std::size_t>>& undirected_edges,
    Tensor node_features, Tensor undirected_edge_features = {},
    Labels labels = {});

// Row u of the result is the sum of h over N(u). Differentiable; the
// backward pass is the same aggregation over the reversed adjacency.
Tensor neighbor_sum(const Graph& g, const Tensor& h);

// Disjoint union of graphs: node ids are offset per graph, features and
// labels concatenated. Carries enough bookkeeping to undo the merge.
struct Batch {
  std::size_t num_graphs = 0;
  std::size_t num_nodes = 0;
  Graph merged;  // structure and features only; labels live below
  std::vector<std::size_t> graph_index;    // graph id per node
  std::vector<std::size_t> graph_offsets;  // first node of each graph

  LabelKind label_kind = LabelKind::None;
  std::vector<int> graph_classes;
  std::vector<std::vector<int>> graph_bits;
  std::vector<int> node_classes;
  std::vector<PairLabel> pairs;            // endpoints in merged ids
  std::vector<std::size_t> pair_graph;     // graph id per pair
};

Batch batch_graphs(const std::vector<Graph>& gs);

// JSON-lines dataset files, one graph per line. Floats travel as decimal
// strings with 17 significant digits so round trips are bit-exact.
std::vector<Graph> load_dataset(const std::string& path);
void save_dataset(const std::vector<Graph>& gs, const std::string& path);

struct GenParams {
  std::size_t num_graphs = 16;
  std::size_t size = 6;  // sbm-node: nodes per block; others: nodes per graph
  std::size_t blocks = 2;
  double p_in = 0.9;
  double p_out = 0.05;
  double noise = 0.3;
  double r_edge = 0.18;
  double r_contact = 0.5;
};

// Deterministic for a fixed seed. Kinds: "sbm-node" (node classification,
// label = block), "cycle-vs-path" (graph classification, constant features,
// solvable only via structure), "pair-contact" (link prediction on random
// geometric graphs; positives are close in space but at least 3 hops apart).
std::vector<Graph> gen_synthetic(const std::string& kind, std::uint64_t seed,
                                 const GenParams& params);

}  // namespace diffgraph

#include "diffgraph/graph.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <limits>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "diffgraph/errors.hpp"
#include "diffgraph/format.hpp"
#include "diffgraph/rng.hpp"

namespace diffgraph {

using nlohmann::json;

bool Graph::has_edge(std::size_t u, std::size_t v) const {
  const auto begin = col_indices.begin() + static_cast<std::ptrdiff_t>(row_offsets[u]);
  const auto end = col_indices.begin() + static_cast<std::ptrdiff_t>(row_offsets[u + 1]);
  return std::binary_search(begin, end, v);
}

Graph make_graph(
    std::size_t num_nodes,
    const std::vector<std::pair<std::size_t, std::size_t>>& undirected_edges,
    Tensor node_features, Tensor undirected_edge_features, Labels labels) {
  if (num_nodes == 0) {
    throw ValidationError("graph must have at least one node");
  }
  if (!node_features.defined() || node_features.rank() != 2 ||
      node_features.shape()[0] != num_nodes) {
    throw DimensionError("node features must be [" + std::to_string(num_nodes) +
                         " x d]");
  }
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t k = 0; k < undirected_edges.size(); ++k) {
    const auto [a, b] = undirected_edges[k];
    if (a >= num_nodes || b >= num_nodes) {
      throw ValidationError("edge " + std::to_string(k) + " references node " +
                            std::to_string(std::max(a, b)) + ", graph has " +
                            std::to_string(num_nodes) + " nodes");
    }
    if (a == b) {
      throw ValidationError("edge " + std::to_string(k) +
                            " is a self-loop at node " + std::to_string(a));
    }
    if (!seen.insert({std::min(a, b), std::max(a, b)}).second) {
      throw ValidationError("duplicate edge (" + std::to_string(a) + ", " +
                            std::to_string(b) + ") at position " +
                            std::to_string(k));
    }
  }
  if (undirected_edge_features.defined()) {
    if (undirected_edge_features.rank() != 2 ||
        undirected_edge_features.shape()[0] != undirected_edges.size()) {
      throw DimensionError("edge features must have one row per undirected edge");
    }
  }
  if (labels.kind == LabelKind::NodeClass &&
      labels.node_classes.size() != num_nodes) {
    throw ValidationError("node labels: " +
                          std::to_string(labels.node_classes.size()) +
                          " entries for " + std::to_string(num_nodes) +
                          " nodes");
  }
  if (labels.kind == LabelKind::LinkPairs) {
    for (std::size_t k = 0; k < labels.pairs.size(); ++k) {
      const auto& p = labels.pairs[k];
      if (p.u >= num_nodes || p.v >= num_nodes) {
        throw ValidationError("pair " + std::to_string(k) +
                              " references node " +
                              std::to_string(std::max(p.u, p.v)) +
                              ", graph has " + std::to_string(num_nodes) +
                              " nodes");
      }
    }
  }

  // Adjacency lists carry the undirected pair index so per-pair edge
  // features can be duplicated onto both directions.
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adj(num_nodes);
  for (std::size_t k = 0; k < undirected_edges.size(); ++k) {
    const auto [a, b] = undirected_edges[k];
    adj[a].push_back({b, k});
    adj[b].push_back({a, k});
  }
  for (auto& row : adj) std::sort(row.begin(), row.end());

  Graph g;
  g.num_nodes = num_nodes;
  g.node_features = std::move(node_features);
  g.labels = std::move(labels);
  g.row_offsets.assign(num_nodes + 1, 0);
  const std::size_t num_directed = 2 * undirected_edges.size();
  g.col_indices.reserve(num_directed);
  g.edge_row.reserve(num_directed);
  std::vector<double> efeat;
  std::size_t ewidth = 0;
  if (undirected_edge_features.defined()) {
    ewidth = undirected_edge_features.shape()[1];
    efeat.reserve(num_directed * ewidth);
  }
  for (std::size_t u = 0; u < num_nodes; ++u) {
    for (const auto& [v, pair_idx] : adj[u]) {
      g.col_indices.push_back(v);
      g.edge_row.push_back(u);
      if (ewidth > 0) {
        auto src = undirected_edge_features.values();
        for (std::size_t j = 0; j < ewidth; ++j) {
          efeat.push_back(src[pair_idx * ewidth + j]);
        }
      }
    }
    g.row_offsets[u + 1] = g.col_indices.size();
  }
  if (ewidth > 0) {
    g.edge_features =
        Tensor::from_values({num_directed, ewidth}, std::move(efeat));
  }
  return g;
}

Tensor neighbor_sum(const Graph& g, const Tensor& h) {
  if (h.rank() != 2 || h.shape()[0] != g.num_nodes) {
    throw DimensionError("neighbor_sum: features have " +
                         std::to_string(h.rank() == 2 ? h.shape()[0] : 0) +
                         " rows, graph has " + std::to_string(g.num_nodes) +
                         " nodes");
  }
  // out[u] = sum over N(u) of h[v]; gather pulls the sources, scatter adds
  // them at the targets. Backward falls out of the two primitives.
  return scatter_add_rows(gather_rows(h, g.col_indices), g.edge_row,
                          g.num_nodes);
}

Batch batch_graphs(const std::vector<Graph>& gs) {
  if (gs.empty()) throw ContractError("batch_graphs: no graphs");
  const std::size_t width = gs[0].feature_width();
  const LabelKind kind = gs[0].labels.kind;
  const bool with_edge_feat = gs[0].has_edge_features();
  const std::size_t ewidth =
      with_edge_feat ? gs[0].edge_features.shape()[1] : 0;
  for (const Graph& g : gs) {
    if (g.feature_width() != width) {
      throw FormatError("batch_graphs: feature widths disagree (" +
                        std::to_string(width) + " vs " +
                        std::to_string(g.feature_width()) + ")");
    }
    if (g.labels.kind != kind) {
      throw FormatError("batch_graphs: label kinds disagree");
    }
    if (g.has_edge_features() != with_edge_feat ||
        (with_edge_feat && g.edge_features.shape()[1] != ewidth)) {
      throw FormatError("batch_graphs: edge feature widths disagree");
    }
  }

  Batch b;
  b.num_graphs = gs.size();
  b.label_kind = kind;
  std::size_t total_nodes = 0, total_edges = 0;
  for (const Graph& g : gs) {
    total_nodes += g.num_nodes;
    total_edges += g.num_edges();
  }
  b.num_nodes = total_nodes;
  b.merged.num_nodes = total_nodes;
  b.merged.row_offsets.assign(total_nodes + 1, 0);
  b.merged.col_indices.reserve(total_edges);
  b.merged.edge_row.reserve(total_edges);
  b.graph_index.reserve(total_nodes);
  std::vector<double> feat;
  feat.reserve(total_nodes * width);
  std::vector<double> efeat;
  efeat.reserve(total_edges * ewidth);

  std::size_t node_off = 0;
  for (std::size_t gi = 0; gi < gs.size(); ++gi) {
    const Graph& g = gs[gi];
    b.graph_offsets.push_back(node_off);
    for (std::size_t u = 0; u < g.num_nodes; ++u) {
      b.graph_index.push_back(gi);
      for (std::size_t e = g.row_offsets[u]; e < g.row_offsets[u + 1]; ++e) {
        b.merged.col_indices.push_back(g.col_indices[e] + node_off);
        b.merged.edge_row.push_back(u + node_off);
      }
      b.merged.row_offsets[node_off + u + 1] = b.merged.col_indices.size();
    }
    auto fv = g.node_features.values();
    feat.insert(feat.end(), fv.begin(), fv.end());
    if (with_edge_feat) {
      auto ev = g.edge_features.values();
      efeat.insert(efeat.end(), ev.begin(), ev.end());
    }
    switch (kind) {
      case LabelKind::GraphClass:
        b.graph_classes.push_back(g.labels.graph_class);
        break;
      case LabelKind::GraphMultiLabel:
        b.graph_bits.push_back(g.labels.graph_bits);
        break;
      case LabelKind::NodeClass:
        b.node_classes.insert(b.node_classes.end(),
                              g.labels.node_classes.begin(),
                              g.labels.node_classes.end());
        break;
      case LabelKind::LinkPairs:
        for (const PairLabel& p : g.labels.pairs) {
          b.pairs.push_back({p.u + node_off, p.v + node_off, p.label});
          b.pair_graph.push_back(gi);
        }
        break;
      case LabelKind::None:
        break;
    }
    node_off += g.num_nodes;
  }
  b.merged.node_features =
      Tensor::from_values({total_nodes, width}, std::move(feat));
  if (with_edge_feat) {
    b.merged.edge_features =
        Tensor::from_values({total_edges, ewidth}, std::move(efeat));
  }
  return b;
}

// ---- JSON-lines I/O --------------------------------------------------

namespace {

std::string loc(const std::string& path, std::size_t lineno) {
  return path + ":" + std::to_string(lineno);
}

double parse_float(const json& v, const std::string& where) {
  if (v.is_string()) {
    try {
      std::size_t pos = 0;
      const std::string s = v.get<std::string>();
      const double d = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return d;
    } catch (const std::exception&) {
      throw ParseError(where + ": not a numeric string: " + v.dump());
    }
  }
  if (v.is_number()) return v.get<double>();
  throw ParseError(where + ": expected a number or numeric string, got " +
                   v.dump());
}

Tensor parse_float_matrix(const json& rows, std::size_t expect_rows,
                          const std::string& where) {
  if (!rows.is_array() || rows.size() != expect_rows) {
    throw ParseError(where + ": expected " + std::to_string(expect_rows) +
                     " rows");
  }
  std::size_t width = 0;
  std::vector<double> vals;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const json& row = rows[i];
    if (!row.is_array() || row.empty()) {
      throw ParseError(where + ": row " + std::to_string(i) +
                       " must be a non-empty array");
    }
    if (i == 0) {
      width = row.size();
      vals.reserve(expect_rows * width);
    } else if (row.size() != width) {
      throw ParseError(where + ": row " + std::to_string(i) + " has " +
                       std::to_string(row.size()) + " entries, expected " +
                       std::to_string(width));
    }
    for (const json& v : row) vals.push_back(parse_float(v, where));
  }
  return Tensor::from_values({expect_rows, width}, std::move(vals));
}

Graph parse_graph_line(const std::string& line, const std::string& path,
                       std::size_t lineno) {
  json j;
  try {
    j = json::parse(line);
  } catch (const std::exception& e) {
    throw ParseError(loc(path, lineno) + ": malformed JSON: " + e.what());
  }
  if (!j.is_object()) {
    throw ParseError(loc(path, lineno) + ": expected a JSON object");
  }
  if (!j.contains("num_nodes") || !j["num_nodes"].is_number_unsigned()) {
    throw ParseError(loc(path, lineno) + ": missing or invalid num_nodes");
  }
  const std::size_t n = j["num_nodes"].get<std::size_t>();
  if (!j.contains("edges") || !j["edges"].is_array()) {
    throw ParseError(loc(path, lineno) + ": missing or invalid edges");
  }
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t k = 0; k < j["edges"].size(); ++k) {
    const json& e = j["edges"][k];
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_unsigned() ||
        !e[1].is_number_unsigned()) {
      throw ParseError(loc(path, lineno) + ": edge " + std::to_string(k) +
                       " must be a [src, dst] pair");
    }
    edges.push_back({e[0].get<std::size_t>(), e[1].get<std::size_t>()});
  }
  if (!j.contains("x")) {
    throw ParseError(loc(path, lineno) + ": missing x");
  }
  Tensor x = parse_float_matrix(j["x"], n, loc(path, lineno) + ": x");
  Tensor edge_attr;
  if (j.contains("edge_attr")) {
    edge_attr = parse_float_matrix(j["edge_attr"], edges.size(),
                                   loc(path, lineno) + ": edge_attr");
  }

  const int label_keys = static_cast<int>(j.contains("y_graph")) +
                         static_cast<int>(j.contains("y_node")) +
                         static_cast<int>(j.contains("y_pairs"));
  if (label_keys != 1) {
    throw ParseError(loc(path, lineno) +
                     ": expected exactly one of y_graph, y_node, y_pairs");
  }
  Labels labels;
  if (j.contains("y_graph")) {
    const json& y = j["y_graph"];
    if (y.is_number_integer()) {
      labels.kind = LabelKind::GraphClass;
      labels.graph_class = y.get<int>();
    } else if (y.is_array()) {
      labels.kind = LabelKind::GraphMultiLabel;
      for (const json& bit : y) {
        if (!bit.is_number_integer() ||
            (bit.get<int>() != 0 && bit.get<int>() != 1)) {
          throw ParseError(loc(path, lineno) + ": y_graph bits must be 0 or 1");
        }
        labels.graph_bits.push_back(bit.get<int>());
      }
    } else {
      throw ParseError(loc(path, lineno) +
                       ": y_graph must be an integer or a bit list");
    }
  } else if (j.contains("y_node")) {
    const json& y = j["y_node"];
    if (!y.is_array()) {
      throw ParseError(loc(path, lineno) + ": y_node must be an integer list");
    }
    labels.kind = LabelKind::NodeClass;
    for (const json& v : y) {
      if (!v.is_number_integer()) {
        throw ParseError(loc(path, lineno) + ": y_node must be an integer list");
      }
      labels.node_classes.push_back(v.get<int>());
    }
  } else {
    const json& y = j["y_pairs"];
    if (!y.is_array()) {
      throw ParseError(loc(path, lineno) + ": y_pairs must be a list");
    }
    labels.kind = LabelKind::LinkPairs;
    for (std::size_t k = 0; k < y.size(); ++k) {
      const json& p = y[k];
      if (!p.is_array() || p.size() != 3 || !p[0].is_number_unsigned() ||
          !p[1].is_number_unsigned() || !p[2].is_number_integer() ||
          (p[2].get<int>() != 0 && p[2].get<int>() != 1)) {
        throw ParseError(loc(path, lineno) + ": pair " + std::to_string(k) +
                         " must be [u, v, label] with a 0/1 label");
      }
      labels.pairs.push_back(
          {p[0].get<std::size_t>(), p[1].get<std::size_t>(), p[2].get<int>()});
    }
  }

  try {
    return make_graph(n, edges, std::move(x), std::move(edge_attr),
                      std::move(labels));
  } catch (const ValidationError& e) {
    throw ValidationError(loc(path, lineno) + ": " + e.what());
  } catch (const DimensionError& e) {
    throw ParseError(loc(path, lineno) + ": " + e.what());
  }
}

}  // namespace

std::vector<Graph> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open dataset file: " + path);
  std::vector<Graph> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    out.push_back(parse_graph_line(line, path, lineno));
  }
  if (out.empty()) throw LoadError("dataset holds no graphs: " + path);
  return out;
}

void save_dataset(const std::vector<Graph>& gs, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw LoadError("cannot write dataset file: " + path);
  for (const Graph& g : gs) {
    json j;
    j["num_nodes"] = g.num_nodes;
    json edges = json::array();
    json edge_attr = json::array();
    const std::size_t ewidth =
        g.has_edge_features() ? g.edge_features.shape()[1] : 0;
    for (std::size_t u = 0; u < g.num_nodes; ++u) {
      for (std::size_t e = g.row_offsets[u]; e < g.row_offsets[u + 1]; ++e) {
        const std::size_t v = g.col_indices[e];
        if (v < u) continue;  // emit each undirected edge once
        edges.push_back({u, v});
        if (ewidth > 0) {
          json row = json::array();
          for (std::size_t k = 0; k < ewidth; ++k) {
            row.push_back(format_g17(g.edge_features.values()[e * ewidth + k]));
          }
          edge_attr.push_back(std::move(row));
        }
      }
    }
    j["edges"] = std::move(edges);
    json x = json::array();
    const std::size_t width = g.feature_width();
    for (std::size_t u = 0; u < g.num_nodes; ++u) {
      json row = json::array();
      for (std::size_t k = 0; k < width; ++k) {
        row.push_back(format_g17(g.node_features.values()[u * width + k]));
      }
      x.push_back(std::move(row));
    }
    j["x"] = std::move(x);
    if (ewidth > 0) j["edge_attr"] = std::move(edge_attr);
    switch (g.labels.kind) {
      case LabelKind::GraphClass:
        j["y_graph"] = g.labels.graph_class;
        break;
      case LabelKind::GraphMultiLabel:
        j["y_graph"] = g.labels.graph_bits;
        break;
      case LabelKind::NodeClass:
        j["y_node"] = g.labels.node_classes;
        break;
      case LabelKind::LinkPairs: {
        json pairs = json::array();
        for (const PairLabel& p : g.labels.pairs) {
          pairs.push_back({p.u, p.v, p.label});
        }
        j["y_pairs"] = std::move(pairs);
        break;
      }
      case LabelKind::None:
        throw FormatError("save_dataset: graph has no labels");
    }
    out << j.dump() << "\n";
  }
  if (!out) throw LoadError("failed writing dataset file: " + path);
}

// ---- synthetic generators ---------------------------------------------

namespace {

std::vector<std::size_t> bfs_hops(const Graph& g, std::size_t start) {
  constexpr auto kInf = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> dist(g.num_nodes, kInf);
  std::deque<std::size_t> queue{start};
  dist[start] = 0;
  while (!queue.empty()) {
    const std::size_t u = queue.front();
    queue.pop_front();
    for (std::size_t e = g.row_offsets[u]; e < g.row_offsets[u + 1]; ++e) {
      const std::size_t v = g.col_indices[e];
      if (dist[v] == kInf) {
        dist[v] = dist[u] + 1;
        queue.push_back(v);
      }
    }
  }
  return dist;
}

std::vector<Graph> gen_sbm_node(Rng& rng, const GenParams& p) {
  std::vector<Graph> out;
  const std::size_t n = p.blocks * p.size;
  for (std::size_t gi = 0; gi < p.num_graphs; ++gi) {
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t u = 0; u < n; ++u) {
      for (std::size_t v = u + 1; v < n; ++v) {
        const bool same = (u / p.size) == (v / p.size);
        if (rng.bernoulli(same ? p.p_in : p.p_out)) edges.push_back({u, v});
      }
    }
    std::vector<double> feat(n * p.blocks);
    Labels labels;
    labels.kind = LabelKind::NodeClass;
    for (std::size_t u = 0; u < n; ++u) {
      const std::size_t block = u / p.size;
      labels.node_classes.push_back(static_cast<int>(block));
      for (std::size_t b = 0; b < p.blocks; ++b) {
        feat[u * p.blocks + b] =
            (b == block ? 1.0 : 0.0) + p.noise * rng.normal(0.0, 1.0);
      }
    }
    out.push_back(make_graph(
        n, edges, Tensor::from_values({n, p.blocks}, std::move(feat)), {},
        std::move(labels)));
  }
  return out;
}

std::vector<Graph> gen_cycle_vs_path(const GenParams& p) {
  std::vector<Graph> out;
  const std::size_t n = p.size;
  if (n < 3) throw UsageError("cycle-vs-path needs at least 3 nodes");
  for (std::size_t gi = 0; gi < p.num_graphs; ++gi) {
    const int cls = static_cast<int>(gi % 2);  // 0 = cycle, 1 = path
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t u = 0; u + 1 < n; ++u) edges.push_back({u, u + 1});
    if (cls == 0) edges.push_back({n - 1, 0});
    Labels labels;
    labels.kind = LabelKind::GraphClass;
    labels.graph_class = cls;
    out.push_back(make_graph(n, edges, Tensor::full({n, 1}, 1.0), {},
                             std::move(labels)));
  }
  return out;
}

std::vector<Graph> gen_pair_contact(Rng& rng, const GenParams& p) {
  std::vector<Graph> out;
  const std::size_t n = p.size;
  for (std::size_t gi = 0; gi < p.num_graphs; ++gi) {
    std::vector<double> coord(n * 2);
    for (double& c : coord) c = rng.uniform01();
    auto dist2 = [&](std::size_t a, std::size_t b) {
      const double dx = coord[a * 2] - coord[b * 2];
      const double dy = coord[a * 2 + 1] - coord[b * 2 + 1];
      return dx * dx + dy * dy;
    };
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t u = 0; u < n; ++u) {
      for (std::size_t v = u + 1; v < n; ++v) {
        if (dist2(u, v) < p.r_edge * p.r_edge) edges.push_back({u, v});
      }
    }
    Graph skeleton =
        make_graph(n, edges, Tensor::from_values({n, 2}, coord));

    Labels labels;
    labels.kind = LabelKind::LinkPairs;
    std::vector<PairLabel> negatives;
    for (std::size_t u = 0; u < n; ++u) {
      const auto hops = bfs_hops(skeleton, u);
      for (std::size_t v = u + 1; v < n; ++v) {
        if (hops[v] < 3) continue;  // unreachable counts as far apart
        if (dist2(u, v) <= p.r_contact * p.r_contact) {
          labels.pairs.push_back({u, v, 1});
        } else {
          negatives.push_back({u, v, 0});
        }
      }
    }
    // One sampled negative per positive.
    rng.shuffle(negatives);
    const std::size_t take = std::min(labels.pairs.size(), negatives.size());
    labels.pairs.insert(labels.pairs.end(), negatives.begin(),
                        negatives.begin() + static_cast<std::ptrdiff_t>(take));
    out.push_back(make_graph(n, edges, Tensor::from_values({n, 2}, coord), {},
                             std::move(labels)));
  }
  return out;
}

}  // namespace

std::vector<Graph> gen_synthetic(const std::string& kind, std::uint64_t seed,
                                 const GenParams& params) {
  if (params.num_graphs == 0) {
    throw UsageError("gen_synthetic: num_graphs must be positive");
  }
  Rng rng(seed);
  if (kind == "sbm-node") return gen_sbm_node(rng, params);
  if (kind == "cycle-vs-path") return gen_cycle_vs_path(params);
  if (kind == "pair-contact") return gen_pair_contact(rng, params);
  throw UsageError("unknown synthetic dataset kind: " + kind +
                   " (expected sbm-node, cycle-vs-path, pair-contact)");
}

}  // namespace diffgraph

#include "diffgraph/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "diffgraph/errors.hpp"

namespace diffgraph {

namespace {

// Expands a column [n x 1] to [n x d] so it can gate a feature matrix.
Tensor expand_cols(const Tensor& col, std::size_t d) {
  return matmul(col, Tensor::full({1, d}, 1.0));
}

std::vector<std::size_t> iota_indices(std::size_t from, std::size_t count) {
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), from);
  return idx;
}

}  // namespace

Tensor ffn_forward(const Tensor& x, const FFNParams& p) {
  if (!p.defined()) throw ContractError("ffn: parameters not initialized");
  return add(matmul(relu(add(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

Tensor diff_enc(const Tensor& delta, const FFNParams& p) {
  if (!p.defined()) throw ContractError("diff_enc: parameters not initialized");
  if (p.w2.shape()[1] != delta.shape()[1]) {
    throw DimensionError("diff_enc: output width " +
                         std::to_string(p.w2.shape()[1]) +
                         " does not match input width " +
                         std::to_string(delta.shape()[1]));
  }
  return grad_sign_flip(ffn_forward(delta, p));
}

namespace {

Tensor apply_update_with_diff(const Tensor& self_msg, const Tensor& neighbor_msg,
                              const MpnnParams& p, bool use_diff) {
  Tensor agg = add(self_msg, neighbor_msg);
  if (!use_diff) return agg;
  return add(agg, diff_enc(sub(neighbor_msg, self_msg), p.diff));
}

MpnnResult gcn_forward(const Graph& g, const Tensor& h, MpnnParams& p,
                       bool use_diff) {
  const std::size_t n = g.num_nodes;
  Tensor hw = matmul(h, p.gcn.w);
  // Symmetric normalization with implicit self-loop: degrees count +1.
  std::vector<double> inv_sqrt(n), inv_deg(n);
  for (std::size_t u = 0; u < n; ++u) {
    const double d1 = static_cast<double>(g.degree(u)) + 1.0;
    inv_sqrt[u] = 1.0 / std::sqrt(d1);
    inv_deg[u] = 1.0 / d1;
  }
  Tensor neighbors =
      scale_rows(neighbor_sum(g, scale_rows(hw, inv_sqrt)), inv_sqrt);
  Tensor self_msg = scale_rows(hw, inv_deg);
  return {relu(apply_update_with_diff(self_msg, neighbors, p, use_diff)), {}};
}

MpnnResult gat_forward(const Graph& g, const Tensor& h, MpnnParams& p,
                       bool use_diff) {
  const std::size_t n = g.num_nodes;
  const std::size_t d = h.shape()[1];
  Tensor hw = matmul(h, p.gat.w);

  // Edge lists extended with one self edge per node, appended at the end
  // so the self messages are the last n rows of the per-edge tensors.
  std::vector<std::size_t> sources = g.col_indices;
  std::vector<std::size_t> targets = g.edge_row;
  const auto self_rows = iota_indices(0, n);
  sources.insert(sources.end(), self_rows.begin(), self_rows.end());
  targets.insert(targets.end(), self_rows.begin(), self_rows.end());
  const std::size_t etot = sources.size();

  Tensor score = leaky_relu(
      matmul(concat_cols({gather_rows(hw, targets), gather_rows(hw, sources)}),
             p.gat.attn),
      kLeakySlope);

  // Segment softmax over each target's candidate set N(u) + {u}. The
  // per-segment max shift is constant, so gradients are untouched.
  std::vector<double> seg_max(n, -std::numeric_limits<double>::infinity());
  for (std::size_t e = 0; e < etot; ++e) {
    seg_max[targets[e]] = std::max(seg_max[targets[e]], score.values()[e]);
  }
  std::vector<double> shift(etot);
  for (std::size_t e = 0; e < etot; ++e) shift[e] = seg_max[targets[e]];
  Tensor ex = exp_elem(sub(score, Tensor::from_values({etot, 1}, shift)));
  Tensor denom = gather_rows(scatter_add_rows(ex, targets, n), targets);
  Tensor alpha = divide(ex, denom);

  Tensor weighted = mul(expand_cols(alpha, d), gather_rows(hw, sources));
  Tensor agg = scatter_add_rows(weighted, targets, n);
  Tensor self_msg = gather_rows(weighted, iota_indices(etot - n, n));
  Tensor neighbors = sub(agg, self_msg);
  // Update is the identity for the single-head form.
  return {apply_update_with_diff(self_msg, neighbors, p, use_diff), {}};
}

MpnnResult gated_forward(const Graph& g, const Tensor& h,
                         const Tensor& edge_embed, MpnnParams& p,
                         bool use_diff, BatchNormMode mode) {
  if (!edge_embed.defined()) {
    throw ContractError("mpnn: GatedGCN needs edge embeddings");
  }
  if (edge_embed.rank() != 2 || edge_embed.shape()[0] != g.num_edges()) {
    throw DimensionError("mpnn: edge embeddings must have one row per edge");
  }
  auto& gp = p.gated;
  const std::size_t n = g.num_nodes;
  const std::size_t d = h.shape()[1];
  Tensor self_msg = matmul(h, gp.wu);

  if (g.num_edges() == 0) {
    Tensor neighbors = Tensor::zeros({n, d});
    Tensor x = apply_update_with_diff(self_msg, neighbors, p, use_diff);
    Tensor out = add(
        h, relu(batchnorm(x, gp.bn_node_gamma, gp.bn_node_beta,
                          gp.bn_node_state, mode)));
    return {out, edge_embed};
  }

  // Edge update: e' = e + ReLU(BN(A h_u + B h_v + C e)).
  Tensor pre = add(add(gather_rows(matmul(h, gp.wa), g.edge_row),
                       gather_rows(matmul(h, gp.wb), g.col_indices)),
                   matmul(edge_embed, gp.wc));
  Tensor new_edges =
      add(edge_embed, relu(batchnorm(pre, gp.bn_edge_gamma, gp.bn_edge_beta,
                                     gp.bn_edge_state, mode)));

  // Gates normalize the edge sigmoids over each target's incident edges.
  Tensor sig = sigmoid(new_edges);
  Tensor denom = add_scalar(
      gather_rows(scatter_add_rows(sig, g.edge_row, n), g.edge_row), kGateEps);
  Tensor eta = divide(sig, denom);
  Tensor neighbors = scatter_add_rows(
      mul(eta, gather_rows(matmul(h, gp.wv), g.col_indices)), g.edge_row, n);

  Tensor x = apply_update_with_diff(self_msg, neighbors, p, use_diff);
  Tensor out = add(h, relu(batchnorm(x, gp.bn_node_gamma, gp.bn_node_beta,
                                     gp.bn_node_state, mode)));
  return {out, new_edges};
}

}  // namespace

MpnnResult mpnn_forward(const Graph& g, const Tensor& h,
                        const Tensor& edge_embed, MpnnParams& p, bool use_diff,
                        BatchNormMode mode) {
  if (h.rank() != 2 || h.shape()[0] != g.num_nodes) {
    throw DimensionError("mpnn: features must have one row per node");
  }
  if (use_diff && !p.diff.defined()) {
    throw ContractError("mpnn: diff requested but diff_enc is not initialized");
  }
  switch (p.kind) {
    case MpnnKind::Gcn:
      return gcn_forward(g, h, p, use_diff);
    case MpnnKind::Gat:
      return gat_forward(g, h, p, use_diff);
    case MpnnKind::GatedGcn:
      return gated_forward(g, h, edge_embed, p, use_diff, mode);
  }
  throw ContractError("mpnn: unknown kind");
}

Tensor mha_diff_forward(const Tensor& h, const MhaParams& p,
                        const std::vector<std::size_t>& segment,
                        bool use_diff) {
  if (h.rank() != 2) throw DimensionError("mha: features must be rank 2");
  const std::size_t n = h.shape()[0];
  const std::size_t d = h.shape()[1];
  if (segment.size() != n) {
    throw DimensionError("mha: segment ids must cover every node");
  }
  if (p.heads.empty()) throw ConfigError("mha: no attention heads");
  const std::size_t dh = p.heads[0].wq.shape()[1];
  if (p.heads.size() * dh != d) {
    throw ConfigError("mha: " + std::to_string(p.heads.size()) + " heads x " +
                      std::to_string(dh) + " does not equal width " +
                      std::to_string(d));
  }

  // Additive mask: 0 within a graph, -1e30 across graphs. Constant, so it
  // carries no gradient.
  std::vector<double> mask(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (segment[i] != segment[j]) mask[i * n + j] = kAttentionMask;
    }
  }
  Tensor mask_t = Tensor::from_values({n, n}, std::move(mask));
  const double inv_sqrt_dq = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<Tensor> head_outputs;
  head_outputs.reserve(p.heads.size());
  for (const MhaHeadParams& head : p.heads) {
    Tensor q = matmul(h, head.wq);
    Tensor k = matmul(h, head.wk);
    Tensor v = matmul(h, head.wv);
    Tensor attn = softmax_rows(
        add(scale(matmul(q, transpose(k)), inv_sqrt_dq), mask_t));
    Tensor out = matmul(attn, v);
    if (use_diff) {
      // Self term: each node's own attention weight times its own value.
      Tensor self_term = mul(expand_cols(diag_part(attn), dh), v);
      out = add(out, diff_enc(sub(out, scale(self_term, 2.0)), head.diff));
    }
    head_outputs.push_back(out);
  }
  return matmul(concat_cols(head_outputs), p.w_out);
}

BlockResult encoder_block(const Graph& g,
                          const std::vector<std::size_t>& segment,
                          const Tensor& h_prev, const Tensor& edge_embed,
                          BlockParams& p, bool use_diff_local,
                          bool use_diff_global, BatchNormMode mode,
                          bool use_local, bool use_global) {
  if (!use_local && !use_global) {
    throw ContractError("encoder_block: at least one branch must be enabled");
  }
  Tensor norm_local, norm_global;
  Tensor edges = edge_embed;
  if (use_local) {
    MpnnResult local =
        mpnn_forward(g, h_prev, edge_embed, p.mpnn, use_diff_local, mode);
    edges = local.edges;
    norm_local = batchnorm(local.nodes, p.bn_local_gamma, p.bn_local_beta,
                           p.bn_local_state, mode);
  }
  if (use_global) {
    Tensor global = mha_diff_forward(h_prev, p.mha, segment, use_diff_global);
    norm_global = batchnorm(global, p.bn_global_gamma, p.bn_global_beta,
                            p.bn_global_state, mode);
  }
  Tensor branches = norm_local.defined() && norm_global.defined()
                        ? add(norm_local, norm_global)
                        : (norm_local.defined() ? norm_local : norm_global);
  Tensor hbar = add(branches, h_prev);
  return {add(ffn_forward(hbar, p.ffn), hbar), edges};
}

Tensor readout(const Batch& batch, const Tensor& h, ReadoutMode mode) {
  if (h.rank() != 2 || h.shape()[0] != batch.num_nodes) {
    throw DimensionError("readout: features must have one row per batch node");
  }
  Tensor sums = scatter_add_rows(h, batch.graph_index, batch.num_graphs);
  if (mode == ReadoutMode::Sum) return sums;
  std::vector<double> inv_count(batch.num_graphs, 0.0);
  for (std::size_t gi = 0; gi < batch.num_graphs; ++gi) {
    const std::size_t begin = batch.graph_offsets[gi];
    const std::size_t end =
        gi + 1 < batch.num_graphs ? batch.graph_offsets[gi + 1] : batch.num_nodes;
    inv_count[gi] = 1.0 / static_cast<double>(end - begin);
  }
  return scale_rows(sums, inv_count);
}

}  // namespace diffgraph

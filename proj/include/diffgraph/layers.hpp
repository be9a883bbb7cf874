#pragma once

#include <vector>

#include "diffgraph/graph.hpp"
#include "diffgraph/tensor.hpp"

namespace diffgraph {

// Additive pre-softmax constant for cross-graph attention entries. Large
// enough that the shifted score rounds to exactly -1e30 and its exp
// underflows to 0.0, small enough to stay finite in backward.
constexpr double kAttentionMask = -1e30;
constexpr double kGateEps = 1e-6;
constexpr double kLeakySlope = 0.2;

// Two fully connected layers with a ReLU between them; position-wise.
struct FFNParams {
  Tensor w1;  // [d x d_h]
  Tensor b1;  // [d_h]
  Tensor w2;  // [d_h x d_out]
  Tensor b2;  // [d_out]

  bool defined() const { return w1.defined(); }
};

Tensor ffn_forward(const Tensor& x, const FFNParams& p);

// The differential encoder: an FFN over (aggregate minus self) deltas.
// Same shape in and out so the result can be added to the plain aggregate.
Tensor diff_enc(const Tensor& delta, const FFNParams& p);

enum class MpnnKind { Gcn, Gat, GatedGcn };

struct GcnParams {
  Tensor w;  // [d x d]
};

struct GatParams {
  Tensor w;     // [d x d], single head
  Tensor attn;  // [2d x 1], scores destination-then-source
};

struct GatedGcnParams {
  Tensor wu, wv, wa, wb, wc;  // all [d x d]
  Tensor bn_edge_gamma, bn_edge_beta;  // [d]
  Tensor bn_node_gamma, bn_node_beta;  // [d]
  BatchNormState bn_edge_state;
  BatchNormState bn_node_state;
};

struct MpnnParams {
  MpnnKind kind = MpnnKind::Gcn;
  GcnParams gcn;
  GatParams gat;
  GatedGcnParams gated;
  FFNParams diff;  // defined iff the layer was built with the diff switch on
};

struct MpnnResult {
  Tensor nodes;  // [n x d]
  Tensor edges;  // GatedGCN only: updated edge embeddings [E x d]
};

// One message-passing layer. Every kind decomposes into a self message
// m_{u->u} and neighbor messages m_{v->u}; the output is
// Update(self + neighbors + [use_diff] diff_enc(neighbors - self)).
// GatedGCN requires edge_embed ([E x d], one row per directed edge) and
// returns the updated embeddings; other kinds ignore edge_embed.
MpnnResult mpnn_forward(const Graph& g, const Tensor& h,
                        const Tensor& edge_embed, MpnnParams& p, bool use_diff,
                        BatchNormMode mode);

struct MhaHeadParams {
  Tensor wq, wk, wv;  // [d x d_head]
  FFNParams diff;     // d_head wide
};

struct MhaParams {
  std::vector<MhaHeadParams> heads;
  Tensor w_out;  // [(num_heads * d_head) x d]
};

// Global multi-head self-attention with per-graph masking: node u attends
// only to nodes v with segment[v] == segment[u]. Per head, the self term
// A[u,u] * V[u] is doubled and subtracted from the attention output to form
// the differential input.
Tensor mha_diff_forward(const Tensor& h, const MhaParams& p,
                        const std::vector<std::size_t>& segment, bool use_diff);

struct BlockParams {
  MpnnParams mpnn;
  MhaParams mha;
  Tensor bn_local_gamma, bn_local_beta;
  Tensor bn_global_gamma, bn_global_beta;
  BatchNormState bn_local_state;
  BatchNormState bn_global_state;
  FFNParams ffn;
};

struct BlockResult {
  Tensor nodes;
  Tensor edges;
};

// One hybrid encoder block: the local and global branches are normalized,
// summed with the residual, then refined by a second residual FFN. Either
// branch can be ablated away; at least one must stay enabled.
BlockResult encoder_block(const Graph& g,
                          const std::vector<std::size_t>& segment,
                          const Tensor& h_prev, const Tensor& edge_embed,
                          BlockParams& p, bool use_diff_local,
                          bool use_diff_global, BatchNormMode mode,
                          bool use_local = true, bool use_global = true);

enum class ReadoutMode { Mean, Sum };

// Pools node embeddings into one row per graph.
Tensor readout(const Batch& batch, const Tensor& h, ReadoutMode mode);

}  // namespace diffgraph

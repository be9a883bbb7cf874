#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "diffgraph/graph.hpp"
#include "diffgraph/layers.hpp"
#include "diffgraph/tensor.hpp"

namespace diffgraph {

enum class HeadKind { GraphClass, NodeClass, MultiLabel, LinkPred };

std::string to_string(MpnnKind kind);
std::string to_string(HeadKind kind);
std::string to_string(ReadoutMode mode);
MpnnKind mpnn_kind_from_string(const std::string& s);
HeadKind head_kind_from_string(const std::string& s);
ReadoutMode readout_mode_from_string(const std::string& s);

struct ModelConfig {
  std::size_t num_layers = 4;
  std::size_t hidden = 64;
  std::size_t input_width = 1;
  std::size_t edge_input_width = 0;  // 0: datasets without edge features
  std::size_t num_heads = 4;
  MpnnKind mpnn_kind = MpnnKind::GatedGcn;
  bool use_diff_local = true;
  bool use_diff_global = true;
  bool use_local = true;
  bool use_global = true;
  ReadoutMode readout_mode = ReadoutMode::Mean;
  HeadKind head = HeadKind::GraphClass;
  std::size_t num_classes = 2;  // classes, or label count for multi-label
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct Predictions {
  // graph-class: [G x C]; node-class: [N x C]; multi-label: [G x L];
  // link-pred: [P x 1] scores over batch.pairs.
  Tensor logits;
  Tensor node_embeddings;  // [N x hidden] after the last block
};

// A stack of encoder blocks behind an input projection, topped by a task
// head. Parameter tensors are created once, in a stable named order, and
// shared by handle with the registry that optimizers and checkpoints use.
class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }

  // Trainable parameters in registry order; handles are shared with the
  // model, so mutating values through them updates the model.
  const std::vector<NamedTensor>& parameters() const { return params_; }
  std::size_t parameter_count() const;
  Tensor parameter(const std::string& name) const;  // ContractError if absent

  // Batchnorm running statistics, named like parameters. Order is stable.
  std::vector<std::pair<std::string, std::vector<double>*>> running_stats();
  std::vector<std::pair<std::string, const std::vector<double>*>>
  running_stats() const;

  Predictions forward(const Batch& batch, BatchNormMode mode);

  // Scores arbitrary node pairs (merged-batch ids); requires the link head.
  Tensor link_score(
      const Batch& batch,
      const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
      BatchNormMode mode);

  long step = 0;  // optimizer steps taken; persisted in checkpoints

 private:
  Tensor trunk(const Batch& batch, BatchNormMode mode);
  Tensor score_pairs(const Tensor& h,
                     const std::vector<std::pair<std::size_t, std::size_t>>&
                         pairs) const;

  ModelConfig cfg_;
  Tensor input_w_, input_b_;
  Tensor edge_w_, edge_b_;  // GatedGCN only; edge_w_ absent when width 0
  std::vector<BlockParams> blocks_;
  Tensor head_w_, head_b_;  // classification heads
  Tensor link_w_;           // link-pred head
  std::vector<NamedTensor> params_;
};

// Extra named buffers persisted verbatim alongside the model (optimizer
// moments and similar); absent buffers load as an empty list.
struct CheckpointExtra {
  std::vector<std::pair<std::string, std::vector<double>>> buffers;
};

struct LoadedCheckpoint {
  Model model;
  CheckpointExtra extra;
};

// Archive layout: manifest.json (format version, config echo, tensor table)
// followed by params.bin (little-endian 64-bit floats). Saving is
// deterministic; save -> load -> save reproduces the file byte for byte.
void save_checkpoint(const Model& model, const std::string& path,
                     const CheckpointExtra* extra = nullptr);
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace diffgraph

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "diffgraph/graph.hpp"
#include "diffgraph/model.hpp"
#include "diffgraph/tensor.hpp"

namespace diffgraph {

struct OptimizerConfig {
  double base_lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  long warmup_steps = 0;
  long total_steps = 0;  // 0 disables the schedule: constant base_lr

  void validate() const;  // throws ConfigError
};

// Linear warmup 0 -> base_lr over warmup_steps, then cosine decay to 0 at
// total_steps. Queried at the 1-based update index during training; steps
// past total_steps clamp to 0.
double lr_at(long step, const OptimizerConfig& cfg);

// First-moment and second-moment buffers, one pair per parameter. An empty
// state initializes itself to zeros on first use.
struct AdamState {
  std::vector<std::vector<double>> m, v;

  bool initialized() const { return !m.empty(); }
};

// One decoupled-weight-decay Adam update using the gradients currently
// accumulated on params; missing gradients count as zero. step is the
// 1-based count of updates including this one.
void adamw_step(const std::vector<NamedTensor>& params, AdamState& state,
                const OptimizerConfig& cfg, long step, double lr);

// Scales all gradients by clip_norm / ||g|| when the global norm exceeds
// clip_norm. Returns the pre-clip norm. clip_norm <= 0 only measures.
double clip_gradients(const std::vector<NamedTensor>& params,
                      double clip_norm);

// Round trip of optimizer moments through checkpoint extra buffers.
CheckpointExtra adam_state_to_extra(const std::vector<NamedTensor>& params,
                                    const AdamState& state);
AdamState adam_state_from_extra(const std::vector<NamedTensor>& params,
                                const CheckpointExtra& extra);

// Mean-reduced loss for the batch's labels under the given head.
Tensor task_loss(const Batch& batch, const Tensor& logits, HeadKind head);

// ---- metrics -----------------------------------------------------------

// Fraction of rows whose argmax (first maximum on ties) equals the label.
double accuracy(const Tensor& logits, const std::vector<int>& labels);

// Unweighted mean of per-class F1 over all num_classes classes; a class
// with an undefined precision, recall, or F1 contributes 0.
double macro_f1(const Tensor& logits, const std::vector<int>& labels,
                std::size_t num_classes);

// Mean over labels of area under the precision-recall curve by the step
// interpolation sum; rows ranked by descending score, ties by row order.
// Labels with no positive rows contribute 0.
double mean_average_precision(const Tensor& logits,
                              const std::vector<std::vector<int>>& bits);

struct RankMetrics {
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits3 = 0.0;
  double hits10 = 0.0;
};

// Ranks each positive pair against the negative pairs of the same graph.
// Rank = 1 + (strictly better) + (ties other than self): ties resolve
// against the positive. Throws when there is no positive pair to rank.
RankMetrics link_ranking(const std::vector<double>& scores,
                         const std::vector<PairLabel>& pairs,
                         const std::vector<std::size_t>& pair_graph);

struct MetricsRecord {
  long epoch = 0;
  std::string split;
  double loss = 0.0;
  std::vector<std::pair<std::string, double>> values;
};

struct EvalResult {
  double loss = 0.0;
  std::vector<std::pair<std::string, double>> metrics;

  double metric(const std::string& name) const;  // ContractError if absent
};

// Eval-mode fixed-order evaluation; loss is the per-unit mean over the
// dataset and metrics are computed over the concatenated predictions.
// num_threads > 1 fans batches out across threads; results merge in
// dataset order, so the outcome is identical at any thread count.
EvalResult evaluate(Model& model, const std::vector<Graph>& data,
                    std::size_t batch_size, std::size_t num_threads = 1);

// The metric that drives best-epoch selection for a head (higher wins).
std::string primary_metric(HeadKind head);

struct TrainConfig {
  OptimizerConfig opt;
  std::size_t batch_size = 32;
  long epochs = 200;
  std::uint64_t run_seed = 0;
  double clip_norm = 5.0;  // <= 0 disables clipping
  std::size_t eval_threads = 1;
  std::string metrics_csv;      // append per-epoch rows when nonempty
  std::string best_checkpoint;  // written on every improvement when nonempty
  std::string last_checkpoint;  // final state + optimizer when nonempty
  bool verbose = false;         // one progress line per epoch
};

struct TrainResult {
  long steps = 0;
  long best_epoch = 0;
  EvalResult best_val;
  EvalResult test_at_best;
  std::vector<MetricsRecord> history;
};

// Seeded mini-batch training. Per epoch: shuffled batches, one AdamW step
// each (scheduled lr, clipped gradients), then train and val evaluation.
// The best-val-metric state is kept and restored into the model at the
// end, and the test set is scored under it. A non-finite training loss
// aborts with the failing step in the diagnostic.
TrainResult train_loop(Model& model, const std::vector<Graph>& train_set,
                       const std::vector<Graph>& val_set,
                       const std::vector<Graph>& test_set,
                       const TrainConfig& cfg);

}  // namespace diffgraph

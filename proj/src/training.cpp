#include "diffgraph/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <thread>

#include "diffgraph/errors.hpp"
#include "diffgraph/format.hpp"
#include "diffgraph/rng.hpp"

namespace diffgraph {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

LabelKind label_kind_for(HeadKind head) {
  switch (head) {
    case HeadKind::GraphClass: return LabelKind::GraphClass;
    case HeadKind::NodeClass: return LabelKind::NodeClass;
    case HeadKind::MultiLabel: return LabelKind::GraphMultiLabel;
    case HeadKind::LinkPred: return LabelKind::LinkPairs;
  }
  throw ContractError("label_kind_for: unknown head kind");
}

}  // namespace

void OptimizerConfig::validate() const {
  if (base_lr < 0.0) throw ConfigError("optimizer: base_lr must not be negative");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ConfigError("optimizer: betas must lie in [0, 1)");
  }
  if (eps <= 0.0) throw ConfigError("optimizer: eps must be positive");
  if (weight_decay < 0.0) {
    throw ConfigError("optimizer: weight_decay must not be negative");
  }
  if (warmup_steps < 0 || total_steps < 0) {
    throw ConfigError("optimizer: step counts must not be negative");
  }
  if (warmup_steps > total_steps) {
    throw ConfigError("optimizer: warmup_steps must not exceed total_steps");
  }
}

double lr_at(long step, const OptimizerConfig& cfg) {
  if (step < 0) throw ContractError("lr_at: step must not be negative");
  if (cfg.total_steps == 0) return cfg.base_lr;
  if (step >= cfg.total_steps) return 0.0;
  if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps) {
    return cfg.base_lr * static_cast<double>(step) /
           static_cast<double>(cfg.warmup_steps);
  }
  const double progress =
      static_cast<double>(step - cfg.warmup_steps) /
      static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  return cfg.base_lr * 0.5 * (1.0 + std::cos(kPi * progress));
}

void adamw_step(const std::vector<NamedTensor>& params, AdamState& state,
                const OptimizerConfig& cfg, long step, double lr) {
  if (step < 1) throw ContractError("adamw_step: step must be at least 1");
  if (!state.initialized()) {
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (const NamedTensor& p : params) {
      state.m.emplace_back(p.tensor.numel(), 0.0);
      state.v.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw StateError("optimizer state covers " + std::to_string(state.m.size()) +
                     " tensors but the model has " +
                     std::to_string(params.size()));
  }
  const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::span<double> vals = params[i].tensor.mutable_values();
    std::span<const double> grad = params[i].tensor.grad();
    std::vector<double>& m = state.m[i];
    std::vector<double>& v = state.v[i];
    if (m.size() != vals.size() || v.size() != vals.size()) {
      throw StateError("optimizer state for '" + params[i].name + "' has " +
                       std::to_string(m.size()) + " entries but the parameter "
                       "has " + std::to_string(vals.size()));
    }
    for (std::size_t j = 0; j < vals.size(); ++j) {
      const double g = grad.empty() ? 0.0 : grad[j];
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[j] / bias1;
      const double vhat = v[j] / bias2;
      vals[j] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) +
                       cfg.weight_decay * vals[j]);
    }
  }
}

double clip_gradients(const std::vector<NamedTensor>& params,
                      double clip_norm) {
  double sq = 0.0;
  for (const NamedTensor& p : params) {
    for (double g : p.tensor.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (clip_norm > 0.0 && norm > clip_norm) {
    const double scale = clip_norm / norm;
    for (const NamedTensor& p : params) {
      for (double& g : p.tensor.mutable_grad()) g *= scale;
    }
  }
  return norm;
}

CheckpointExtra adam_state_to_extra(const std::vector<NamedTensor>& params,
                                    const AdamState& state) {
  CheckpointExtra extra;
  if (!state.initialized()) return extra;
  if (state.m.size() != params.size()) {
    throw StateError("optimizer state does not cover the parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    extra.buffers.push_back({"adam.m." + params[i].name, state.m[i]});
    extra.buffers.push_back({"adam.v." + params[i].name, state.v[i]});
  }
  return extra;
}

AdamState adam_state_from_extra(const std::vector<NamedTensor>& params,
                                const CheckpointExtra& extra) {
  AdamState state;
  if (extra.buffers.empty()) return state;
  std::map<std::string, const std::vector<double>*> by_name;
  for (const auto& [name, vec] : extra.buffers) by_name[name] = &vec;
  for (const NamedTensor& p : params) {
    for (const char* kind : {"adam.m.", "adam.v."}) {
      auto it = by_name.find(kind + p.name);
      if (it == by_name.end()) {
        throw StateError("checkpoint lacks optimizer moments for '" + p.name +
                         "'");
      }
      if (it->second->size() != p.tensor.numel()) {
        throw StateError("optimizer moments for '" + p.name +
                         "' do not match the parameter size");
      }
      (kind[5] == 'm' ? state.m : state.v).push_back(*it->second);
    }
  }
  return state;
}

Tensor task_loss(const Batch& batch, const Tensor& logits, HeadKind head) {
  if (batch.label_kind != label_kind_for(head)) {
    throw ValidationError("batch labels do not match the model's head kind");
  }
  switch (head) {
    case HeadKind::GraphClass:
      if (logits.rows() != batch.num_graphs) {
        throw DimensionError("task_loss: one logit row per graph required");
      }
      return cross_entropy_loss(logits, batch.graph_classes);
    case HeadKind::NodeClass:
      if (logits.rows() != batch.num_nodes) {
        throw DimensionError("task_loss: one logit row per node required");
      }
      return cross_entropy_loss(logits, batch.node_classes);
    case HeadKind::MultiLabel: {
      if (logits.rows() != batch.num_graphs) {
        throw DimensionError("task_loss: one logit row per graph required");
      }
      std::vector<double> targets;
      targets.reserve(logits.numel());
      for (const std::vector<int>& bits : batch.graph_bits) {
        if (bits.size() != logits.cols()) {
          throw ValidationError(
              "task_loss: label bit count differs from logit width");
        }
        for (int b : bits) targets.push_back(static_cast<double>(b));
      }
      return bce_with_logits_loss(
          logits, Tensor::from_values(logits.shape(), std::move(targets)));
    }
    case HeadKind::LinkPred: {
      if (batch.pairs.empty()) {
        throw ValidationError("task_loss: the batch has no pairs to score");
      }
      if (logits.rows() != batch.pairs.size()) {
        throw DimensionError("task_loss: one score row per pair required");
      }
      std::vector<double> targets;
      targets.reserve(batch.pairs.size());
      for (const PairLabel& p : batch.pairs) {
        targets.push_back(static_cast<double>(p.label));
      }
      return bce_with_logits_loss(
          logits,
          Tensor::from_values({batch.pairs.size(), 1}, std::move(targets)));
    }
  }
  throw ContractError("task_loss: unknown head kind");
}

// ---- metrics -------------------------------------------------------------

namespace {

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < logits.cols(); ++c) {
    if (logits.at(row, c) > logits.at(row, best)) best = c;
  }
  return best;
}

}  // namespace

double accuracy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.rows() != labels.size()) {
    throw DimensionError("accuracy: one logit row per label required");
  }
  if (labels.empty()) throw ValidationError("accuracy: no labels to score");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (argmax_row(logits, i) == static_cast<std::size_t>(labels[i])) {
      ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double macro_f1(const Tensor& logits, const std::vector<int>& labels,
                std::size_t num_classes) {
  if (logits.rank() != 2 || logits.rows() != labels.size()) {
    throw DimensionError("macro_f1: one logit row per label required");
  }
  if (labels.empty()) throw ValidationError("macro_f1: no labels to score");
  std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0),
      fn(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw ValidationError("macro_f1: label " + std::to_string(labels[i]) +
                            " is outside the " + std::to_string(num_classes) +
                            "-class range");
    }
    const std::size_t pred = argmax_row(logits, i);
    const std::size_t truth = static_cast<std::size_t>(labels[i]);
    if (pred == truth) {
      ++tp[truth];
    } else {
      ++fp[pred];
      ++fn[truth];
    }
  }
  double total = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double denom_p = static_cast<double>(tp[c] + fp[c]);
    const double denom_r = static_cast<double>(tp[c] + fn[c]);
    if (denom_p == 0.0 || denom_r == 0.0) continue;  // contributes 0
    const double prec = static_cast<double>(tp[c]) / denom_p;
    const double rec = static_cast<double>(tp[c]) / denom_r;
    if (prec + rec > 0.0) total += 2.0 * prec * rec / (prec + rec);
  }
  return total / static_cast<double>(num_classes);
}

double mean_average_precision(const Tensor& logits,
                              const std::vector<std::vector<int>>& bits) {
  if (logits.rank() != 2 || logits.rows() != bits.size()) {
    throw DimensionError("average precision: one logit row per graph required");
  }
  if (bits.empty()) {
    throw ValidationError("average precision: no rows to score");
  }
  const std::size_t num_labels = logits.cols();
  const std::size_t rows = bits.size();
  double total = 0.0;
  for (std::size_t l = 0; l < num_labels; ++l) {
    std::vector<std::size_t> order(rows);
    for (std::size_t i = 0; i < rows; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) {
                       return logits.at(a, l) > logits.at(b, l);
                     });
    std::size_t positives = 0;
    for (const std::vector<int>& row : bits) {
      if (row.size() != num_labels) {
        throw ValidationError(
            "average precision: label bit count differs from logit width");
      }
      positives += row[l] != 0;
    }
    if (positives == 0) continue;  // contributes 0
    std::size_t seen = 0;
    double ap = 0.0;
    for (std::size_t rank = 0; rank < rows; ++rank) {
      if (bits[order[rank]][l] != 0) {
        ++seen;
        ap += static_cast<double>(seen) / static_cast<double>(rank + 1);
      }
    }
    total += ap / static_cast<double>(positives);
  }
  return total / static_cast<double>(num_labels);
}

RankMetrics link_ranking(const std::vector<double>& scores,
                         const std::vector<PairLabel>& pairs,
                         const std::vector<std::size_t>& pair_graph) {
  if (scores.size() != pairs.size() || pair_graph.size() != pairs.size()) {
    throw DimensionError("link_ranking: scores, pairs, and graph ids must "
                         "align");
  }
  std::map<std::size_t, std::vector<std::size_t>> negatives;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].label == 0) negatives[pair_graph[i]].push_back(i);
  }
  RankMetrics out;
  std::size_t count = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].label == 0) continue;
    std::size_t rank = 1;
    auto it = negatives.find(pair_graph[i]);
    if (it != negatives.end()) {
      for (std::size_t j : it->second) {
        // Ties resolve against the positive.
        if (scores[j] >= scores[i]) ++rank;
      }
    }
    out.mrr += 1.0 / static_cast<double>(rank);
    out.hits1 += rank <= 1;
    out.hits3 += rank <= 3;
    out.hits10 += rank <= 10;
    ++count;
  }
  if (count == 0) {
    throw ValidationError("link_ranking: no positive pair to rank");
  }
  out.mrr /= static_cast<double>(count);
  out.hits1 /= static_cast<double>(count);
  out.hits3 /= static_cast<double>(count);
  out.hits10 /= static_cast<double>(count);
  return out;
}

// ---- evaluation ------------------------------------------------------------

double EvalResult::metric(const std::string& name) const {
  for (const auto& [n, v] : metrics) {
    if (n == name) return v;
  }
  throw ContractError("evaluation produced no metric named '" + name + "'");
}

std::string primary_metric(HeadKind head) {
  switch (head) {
    case HeadKind::GraphClass:
    case HeadKind::NodeClass: return "accuracy";
    case HeadKind::MultiLabel: return "ap";
    case HeadKind::LinkPred: return "mrr";
  }
  throw ContractError("primary_metric: unknown head kind");
}

namespace {

struct BatchEval {
  double loss = 0.0;
  std::size_t units = 0;
  std::vector<double> logits;
  std::size_t num_graphs = 0;
  std::vector<int> graph_classes;
  std::vector<std::vector<int>> graph_bits;
  std::vector<int> node_classes;
  std::vector<PairLabel> pairs;
  std::vector<std::size_t> pair_graph;
};

BatchEval eval_one_batch(Model& model, const std::vector<Graph>& data,
                         std::size_t begin, std::size_t end) {
  std::vector<Graph> slice(data.begin() + static_cast<std::ptrdiff_t>(begin),
                           data.begin() + static_cast<std::ptrdiff_t>(end));
  Batch batch = batch_graphs(slice);
  Predictions pred = model.forward(batch, BatchNormMode::Eval);
  Tensor loss = task_loss(batch, pred.logits, model.config().head);

  BatchEval out;
  out.loss = loss.item();
  out.num_graphs = batch.num_graphs;
  out.logits.assign(pred.logits.values().begin(), pred.logits.values().end());
  switch (model.config().head) {
    case HeadKind::GraphClass:
      out.units = batch.num_graphs;
      out.graph_classes = batch.graph_classes;
      break;
    case HeadKind::NodeClass:
      out.units = batch.num_nodes;
      out.node_classes = batch.node_classes;
      break;
    case HeadKind::MultiLabel:
      out.units = batch.num_graphs;
      out.graph_bits = batch.graph_bits;
      break;
    case HeadKind::LinkPred:
      out.units = batch.pairs.size();
      out.pairs = batch.pairs;
      out.pair_graph = batch.pair_graph;
      break;
  }
  return out;
}

}  // namespace

EvalResult evaluate(Model& model, const std::vector<Graph>& data,
                    std::size_t batch_size, std::size_t num_threads) {
  if (data.empty()) {
    throw ValidationError("cannot evaluate an empty dataset");
  }
  if (batch_size == 0) {
    throw ContractError("evaluate: batch size must be positive");
  }
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  for (std::size_t i = 0; i < data.size(); i += batch_size) {
    ranges.push_back({i, std::min(i + batch_size, data.size())});
  }
  std::vector<BatchEval> results(ranges.size());
  const std::size_t workers =
      std::max<std::size_t>(1, std::min(num_threads, ranges.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < ranges.size(); ++i) {
      results[i] = eval_one_batch(model, data, ranges[i].first,
                                  ranges[i].second);
    }
  } else {
    std::mutex error_mutex;
    std::exception_ptr first_error;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&, t]() {
        for (std::size_t i = t; i < ranges.size(); i += workers) {
          try {
            results[i] = eval_one_batch(model, data, ranges[i].first,
                                        ranges[i].second);
          } catch (...) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
            return;
          }
        }
      });
    }
    for (std::thread& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  // Merge in dataset order.
  BatchEval merged;
  double loss_sum = 0.0;
  std::size_t unit_sum = 0, graph_offset = 0;
  for (const BatchEval& r : results) {
    loss_sum += r.loss * static_cast<double>(r.units);
    unit_sum += r.units;
    merged.logits.insert(merged.logits.end(), r.logits.begin(), r.logits.end());
    merged.graph_classes.insert(merged.graph_classes.end(),
                                r.graph_classes.begin(), r.graph_classes.end());
    merged.graph_bits.insert(merged.graph_bits.end(), r.graph_bits.begin(),
                             r.graph_bits.end());
    merged.node_classes.insert(merged.node_classes.end(),
                               r.node_classes.begin(), r.node_classes.end());
    merged.pairs.insert(merged.pairs.end(), r.pairs.begin(), r.pairs.end());
    for (std::size_t g : r.pair_graph) {
      merged.pair_graph.push_back(g + graph_offset);
    }
    graph_offset += r.num_graphs;
  }
  if (unit_sum == 0) {
    throw ValidationError("evaluation found no labeled units in the dataset");
  }

  EvalResult out;
  out.loss = loss_sum / static_cast<double>(unit_sum);
  const std::size_t width = model.config().head == HeadKind::LinkPred
                                ? 1
                                : model.config().num_classes;
  const std::size_t rows = merged.logits.size() / width;
  Tensor logits = Tensor::from_values({rows, width}, std::move(merged.logits));
  switch (model.config().head) {
    case HeadKind::GraphClass:
      out.metrics = {{"accuracy", accuracy(logits, merged.graph_classes)},
                     {"macro_f1", macro_f1(logits, merged.graph_classes,
                                           model.config().num_classes)}};
      break;
    case HeadKind::NodeClass:
      out.metrics = {{"accuracy", accuracy(logits, merged.node_classes)},
                     {"macro_f1", macro_f1(logits, merged.node_classes,
                                           model.config().num_classes)}};
      break;
    case HeadKind::MultiLabel:
      out.metrics = {{"ap", mean_average_precision(logits, merged.graph_bits)}};
      break;
    case HeadKind::LinkPred: {
      std::vector<double> scores(logits.values().begin(),
                                 logits.values().end());
      RankMetrics rm = link_ranking(scores, merged.pairs, merged.pair_graph);
      out.metrics = {{"mrr", rm.mrr},
                     {"hits1", rm.hits1},
                     {"hits3", rm.hits3},
                     {"hits10", rm.hits10}};
      break;
    }
  }
  return out;
}

// ---- training loop ----------------------------------------------------------

namespace {

void append_csv(const std::string& path, std::uint64_t run_seed,
                const MetricsRecord& rec) {
  if (path.empty()) return;
  const bool fresh =
      !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error("cannot open metrics file '" + path + "'");
  if (fresh) out << "run_seed,epoch,split,loss,metric_name,metric_value\n";
  for (const auto& [name, value] : rec.values) {
    out << run_seed << "," << rec.epoch << "," << rec.split << ","
        << format_g17(rec.loss) << "," << name << "," << format_g17(value)
        << "\n";
  }
}

struct Snapshot {
  std::vector<std::vector<double>> params;
  std::vector<std::vector<double>> stats;
  long step = 0;
};

Snapshot take_snapshot(Model& model) {
  Snapshot s;
  for (const NamedTensor& p : model.parameters()) {
    s.params.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  }
  for (const auto& [name, vec] : model.running_stats()) s.stats.push_back(*vec);
  s.step = model.step;
  return s;
}

void restore_snapshot(Model& model, const Snapshot& s) {
  const auto& params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::copy(s.params[i].begin(), s.params[i].end(),
              params[i].tensor.mutable_values().begin());
  }
  auto stats = model.running_stats();
  for (std::size_t i = 0; i < stats.size(); ++i) *stats[i].second = s.stats[i];
}

void validate_split(const std::vector<Graph>& data, const ModelConfig& cfg,
                    const std::string& name) {
  const LabelKind want = label_kind_for(cfg.head);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Labels& l = data[i].labels;
    if (l.kind != want) {
      throw ValidationError(name + " graph " + std::to_string(i) +
                            " does not carry labels for the configured task");
    }
    switch (want) {
      case LabelKind::GraphClass:
        if (l.graph_class < 0 ||
            static_cast<std::size_t>(l.graph_class) >= cfg.num_classes) {
          throw ValidationError(name + " graph " + std::to_string(i) +
                                " has class outside the configured range");
        }
        break;
      case LabelKind::NodeClass:
        for (int c : l.node_classes) {
          if (c < 0 || static_cast<std::size_t>(c) >= cfg.num_classes) {
            throw ValidationError(name + " graph " + std::to_string(i) +
                                  " has node class outside the configured "
                                  "range");
          }
        }
        break;
      case LabelKind::GraphMultiLabel:
        if (l.graph_bits.size() != cfg.num_classes) {
          throw ValidationError(name + " graph " + std::to_string(i) +
                                " has a label vector of the wrong width");
        }
        break;
      default:
        break;
    }
  }
}

}  // namespace

TrainResult train_loop(Model& model, const std::vector<Graph>& train_set,
                       const std::vector<Graph>& val_set,
                       const std::vector<Graph>& test_set,
                       const TrainConfig& cfg) {
  cfg.opt.validate();
  if (cfg.epochs < 1) throw ConfigError("training: epochs must be at least 1");
  if (cfg.batch_size < 1) {
    throw ConfigError("training: batch size must be at least 1");
  }
  if (train_set.empty()) {
    throw ValidationError("training: the train split is empty");
  }
  validate_split(train_set, model.config(), "train");
  validate_split(val_set, model.config(), "val");
  validate_split(test_set, model.config(), "test");

  const std::string selection_metric = primary_metric(model.config().head);
  Rng rng(cfg.run_seed);
  AdamState state;
  long step = 0;

  TrainResult result;
  Snapshot best = take_snapshot(model);
  double best_value = -1.0;

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (long epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size) {
      const std::size_t stop =
          std::min(start + cfg.batch_size, order.size());
      std::vector<Graph> slice;
      slice.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        slice.push_back(train_set[order[i]]);
      }
      Batch batch = batch_graphs(slice);

      for (const NamedTensor& p : model.parameters()) p.tensor.zero_grad();
      Tape tape;
      Predictions pred = model.forward(batch, BatchNormMode::Train);
      Tensor loss = task_loss(batch, pred.logits, model.config().head);
      const double loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        throw TrainAbortError("training aborted: non-finite loss at step " +
                                  std::to_string(step + 1),
                              step + 1);
      }
      tape.backward(loss);
      ++step;
      clip_gradients(model.parameters(), cfg.clip_norm);
      adamw_step(model.parameters(), state, cfg.opt, step,
                 lr_at(step, cfg.opt));
    }
    model.step = step;

    EvalResult train_eval =
        evaluate(model, train_set, cfg.batch_size, cfg.eval_threads);
    MetricsRecord train_rec{epoch, "train", train_eval.loss,
                            train_eval.metrics};
    append_csv(cfg.metrics_csv, cfg.run_seed, train_rec);
    result.history.push_back(train_rec);

    EvalResult selection_eval = train_eval;
    if (!val_set.empty()) {
      selection_eval =
          evaluate(model, val_set, cfg.batch_size, cfg.eval_threads);
      MetricsRecord val_rec{epoch, "val", selection_eval.loss,
                            selection_eval.metrics};
      append_csv(cfg.metrics_csv, cfg.run_seed, val_rec);
      result.history.push_back(val_rec);
    }
    if (cfg.verbose) {
      std::cout << "epoch " << epoch << " train loss "
                << format_g17(train_eval.loss);
      if (!val_set.empty()) {
        std::cout << " val loss " << format_g17(selection_eval.loss);
      }
      std::cout << " " << selection_metric << " "
                << format_g17(selection_eval.metric(selection_metric))
                << "\n";
    }

    const double value = selection_eval.metric(selection_metric);
    if (value > best_value) {
      best_value = value;
      best = take_snapshot(model);
      result.best_epoch = epoch;
      result.best_val = selection_eval;
      if (!cfg.best_checkpoint.empty()) {
        save_checkpoint(model, cfg.best_checkpoint);
      }
    }
  }
  result.steps = step;

  if (!cfg.last_checkpoint.empty()) {
    CheckpointExtra extra = adam_state_to_extra(model.parameters(), state);
    save_checkpoint(model, cfg.last_checkpoint, &extra);
  }

  restore_snapshot(model, best);
  if (!test_set.empty()) {
    EvalResult test_eval =
        evaluate(model, test_set, cfg.batch_size, cfg.eval_threads);
    MetricsRecord test_rec{result.best_epoch, "test", test_eval.loss,
                           test_eval.metrics};
    append_csv(cfg.metrics_csv, cfg.run_seed, test_rec);
    result.history.push_back(test_rec);
    result.test_at_best = test_eval;
  }
  return result;
}

}  // namespace diffgraph

#include "diffgraph/verify.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "diffgraph/errors.hpp"
#include "diffgraph/graph.hpp"
#include "diffgraph/layers.hpp"
#include "diffgraph/model.hpp"
#include "diffgraph/rng.hpp"
#include "diffgraph/tensor.hpp"
#include "diffgraph/training.hpp"

namespace diffgraph {

namespace {

Tensor rand_tensor(Rng& rng, const Shape& shape, bool rg = false,
                   double scale = 0.5) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal(0.0, scale);
  return Tensor::from_values(shape, std::move(v), rg);
}

FFNParams make_ffn(Rng& rng, std::size_t d, bool rg = false) {
  return {rand_tensor(rng, {d, d}, rg), rand_tensor(rng, {d}, rg),
          rand_tensor(rng, {d, d}, rg), rand_tensor(rng, {d}, rg)};
}

FFNParams zero_ffn(std::size_t d, bool rg = false) {
  return {Tensor::zeros({d, d}, rg), Tensor::zeros({d}, rg),
          Tensor::zeros({d, d}, rg), Tensor::zeros({d}, rg)};
}

MpnnParams make_mpnn(Rng& rng, MpnnKind kind, std::size_t d, bool with_diff,
                     bool rg = false) {
  MpnnParams p;
  p.kind = kind;
  switch (kind) {
    case MpnnKind::Gcn:
      p.gcn.w = rand_tensor(rng, {d, d}, rg);
      break;
    case MpnnKind::Gat:
      p.gat.w = rand_tensor(rng, {d, d}, rg);
      p.gat.attn = rand_tensor(rng, {2 * d, 1}, rg);
      break;
    case MpnnKind::GatedGcn:
      p.gated.wu = rand_tensor(rng, {d, d}, rg);
      p.gated.wv = rand_tensor(rng, {d, d}, rg);
      p.gated.wa = rand_tensor(rng, {d, d}, rg);
      p.gated.wb = rand_tensor(rng, {d, d}, rg);
      p.gated.wc = rand_tensor(rng, {d, d}, rg);
      p.gated.bn_edge_gamma = Tensor::full({d}, 1.0, rg);
      p.gated.bn_edge_beta = Tensor::zeros({d}, rg);
      p.gated.bn_node_gamma = Tensor::full({d}, 1.0, rg);
      p.gated.bn_node_beta = Tensor::zeros({d}, rg);
      p.gated.bn_edge_state = BatchNormState(d);
      p.gated.bn_node_state = BatchNormState(d);
      break;
  }
  if (with_diff) {
    p.diff = make_ffn(rng, d, rg);
  }
  return p;
}

MhaParams make_mha(Rng& rng, std::size_t d, std::size_t num_heads,
                   bool with_diff, bool rg = false) {
  MhaParams p;
  const std::size_t dh = d / num_heads;
  for (std::size_t i = 0; i < num_heads; ++i) {
    MhaHeadParams head;
    head.wq = rand_tensor(rng, {d, dh}, rg);
    head.wk = rand_tensor(rng, {d, dh}, rg);
    head.wv = rand_tensor(rng, {d, dh}, rg);
    if (with_diff) {
      head.diff = {rand_tensor(rng, {dh, dh}, rg), rand_tensor(rng, {dh}, rg),
                   rand_tensor(rng, {dh, dh}, rg), rand_tensor(rng, {dh}, rg)};
    }
    p.heads.push_back(std::move(head));
  }
  p.w_out = rand_tensor(rng, {num_heads * dh, d}, rg);
  return p;
}

Graph random_graph(Rng& rng, std::size_t n, double p_edge, std::size_t width) {
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = u + 1; v < n; ++v) {
      if (rng.bernoulli(p_edge)) edges.push_back({u, v});
    }
  }
  std::vector<double> feat(n * width);
  for (double& f : feat) f = rng.normal(0.0, 1.0);
  return make_graph(n, edges, Tensor::from_values({n, width}, std::move(feat)));
}

void zero_diff(FFNParams& p) {
  for (Tensor t : {p.w1, p.b1, p.w2, p.b2}) {
    for (double& v : t.mutable_values()) v = 0.0;
  }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, std::abs(a.values()[i] - b.values()[i]));
  }
  return worst;
}

void track(SuiteResult& suite, double error, const std::string& where) {
  if (error > suite.max_error) {
    suite.max_error = error;
    suite.detail = where;
  }
}

// ---- suite 1: reduction equivalence -----------------------------------

SuiteResult suite_reduction_equivalence() {
  SuiteResult suite{"reduction-equivalence", 0.0, 1e-12, false, ""};
  const MpnnKind kinds[] = {MpnnKind::Gcn, MpnnKind::Gat, MpnnKind::GatedGcn};
  for (MpnnKind kind : kinds) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(seed * 4 + static_cast<std::uint64_t>(kind));
      const std::size_t d = 2 * (1 + rng.index(4));  // up to 8
      const std::size_t n = 2 + rng.index(7);
      Graph g = random_graph(rng, n, 0.5, d);
      Tensor h = rand_tensor(rng, {n, d});
      Tensor edges = kind == MpnnKind::GatedGcn
                         ? rand_tensor(rng, {g.num_edges(), d})
                         : Tensor();
      MpnnParams with = make_mpnn(rng, kind, d, true);
      zero_diff(with.diff);
      MpnnParams without = with;
      MpnnResult a = mpnn_forward(g, h, edges, with, true,
                                  BatchNormMode::Eval);
      MpnnResult b = mpnn_forward(g, h, edges, without, false,
                                  BatchNormMode::Eval);
      track(suite, max_abs_diff(a.nodes, b.nodes),
            to_string(kind) + " seed " + std::to_string(seed));
    }
  }
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(1000 + seed);
    const std::size_t d = 4 + 2 * rng.index(3);  // 4, 6, or 8
    const std::size_t heads = 2;
    const std::size_t na = 2 + rng.index(4), nb = 2 + rng.index(4);
    Tensor h = rand_tensor(rng, {na + nb, d});
    std::vector<std::size_t> segment(na, 0);
    segment.insert(segment.end(), nb, 1);
    MhaParams with = make_mha(rng, d, heads, true);
    for (MhaHeadParams& head : with.heads) zero_diff(head.diff);
    Tensor a = mha_diff_forward(h, with, segment, true);
    Tensor b = mha_diff_forward(h, with, segment, false);
    track(suite, max_abs_diff(a, b), "mha seed " + std::to_string(seed));
  }
  suite.passed = suite.max_error < suite.tolerance;
  return suite;
}

// ---- suite 2: gradient correctness --------------------------------------

SuiteResult suite_gradient_correctness() {
  SuiteResult suite{"gradient-correctness", 0.0, 1e-4, false, ""};

  const MpnnKind kinds[] = {MpnnKind::Gcn, MpnnKind::Gat, MpnnKind::GatedGcn};
  for (MpnnKind kind : kinds) {
    Rng rng(7 + static_cast<std::uint64_t>(kind));
    const std::size_t d = 4, n = 3;
    Graph g = random_graph(rng, n, 0.7, d);
    Tensor h = rand_tensor(rng, {n, d}, true);
    Tensor edges = kind == MpnnKind::GatedGcn
                       ? rand_tensor(rng, {g.num_edges(), d}, true)
                       : Tensor();
    MpnnParams proto = make_mpnn(rng, kind, d, true, true);
    Tensor probe = rand_tensor(rng, {n, d});

    std::vector<Tensor> inputs{h};
    if (kind == MpnnKind::GatedGcn) inputs.push_back(edges);
    for (Tensor t : {proto.diff.w1, proto.diff.b1, proto.diff.w2,
                     proto.diff.b2}) {
      inputs.push_back(t);
    }
    switch (kind) {
      case MpnnKind::Gcn:
        inputs.push_back(proto.gcn.w);
        break;
      case MpnnKind::Gat:
        inputs.push_back(proto.gat.w);
        inputs.push_back(proto.gat.attn);
        break;
      case MpnnKind::GatedGcn:
        for (Tensor t : {proto.gated.wu, proto.gated.wv, proto.gated.wa,
                         proto.gated.wb, proto.gated.wc,
                         proto.gated.bn_edge_gamma, proto.gated.bn_edge_beta,
                         proto.gated.bn_node_gamma, proto.gated.bn_node_beta}) {
          inputs.push_back(t);
        }
        break;
    }
    auto f = [&](const std::vector<Tensor>&) {
      MpnnParams p = proto;  // fresh batchnorm state per evaluation
      MpnnResult r = mpnn_forward(g, h, edges, p, true, BatchNormMode::Train);
      Tensor loss = sum(mul(r.nodes, probe));
      if (kind == MpnnKind::GatedGcn) {
        loss = add(loss, sum(mul(r.edges, r.edges)));
      }
      return loss;
    };
    GradCheckReport report = grad_check(f, inputs);
    track(suite, report.max_rel_error, to_string(kind) + ": " + report.worst);
  }

  {
    Rng rng(31);
    const std::size_t d = 4, heads = 2, n = 5;
    Tensor h = rand_tensor(rng, {n, d}, true);
    std::vector<std::size_t> segment{0, 0, 0, 1, 1};
    MhaParams p = make_mha(rng, d, heads, true, true);
    Tensor probe = rand_tensor(rng, {n, d});
    std::vector<Tensor> inputs{h, p.w_out};
    for (MhaHeadParams& head : p.heads) {
      for (Tensor t : {head.wq, head.wk, head.wv, head.diff.w1, head.diff.b1,
                       head.diff.w2, head.diff.b2}) {
        inputs.push_back(t);
      }
    }
    auto f = [&](const std::vector<Tensor>&) {
      return sum(mul(mha_diff_forward(h, p, segment, true), probe));
    };
    GradCheckReport report = grad_check(f, inputs);
    track(suite, report.max_rel_error, "mha: " + report.worst);
  }

  {
    ModelConfig cfg;
    cfg.num_layers = 1;
    cfg.hidden = 4;
    cfg.input_width = 2;
    cfg.num_heads = 2;
    cfg.mpnn_kind = MpnnKind::GatedGcn;
    cfg.head = HeadKind::NodeClass;
    cfg.num_classes = 2;
    cfg.seed = 13;
    Model model(cfg);

    Rng rng(17);
    std::vector<Graph> gs;
    for (int i = 0; i < 2; ++i) {
      Graph g = random_graph(rng, 3 + i, 0.7, 2);
      g.labels.kind = LabelKind::NodeClass;
      for (std::size_t u = 0; u < g.num_nodes; ++u) {
        g.labels.node_classes.push_back(static_cast<int>(u % 2));
      }
      gs.push_back(std::move(g));
    }
    Batch batch = batch_graphs(gs);
    std::vector<Tensor> inputs;
    for (const NamedTensor& p : model.parameters()) inputs.push_back(p.tensor);
    auto f = [&](const std::vector<Tensor>&) {
      Model probe = model;  // shares parameters, copies batchnorm state
      Predictions pred = probe.forward(batch, BatchNormMode::Train);
      return task_loss(batch, pred.logits, probe.config().head);
    };
    GradCheckReport report = grad_check(f, inputs);
    track(suite, report.max_rel_error, "full model: " + report.worst);
  }

  suite.passed = suite.max_error < suite.tolerance;
  return suite;
}

// ---- suite 3: permutation equivariance -----------------------------------

SuiteResult suite_permutation_equivariance() {
  SuiteResult suite{"permutation-equivariance", 0.0, 1e-9, false, ""};
  const std::size_t width = 3;
  std::vector<Model> node_models, graph_models;
  const MpnnKind kinds[] = {MpnnKind::Gcn, MpnnKind::Gat, MpnnKind::GatedGcn};
  for (MpnnKind kind : kinds) {
    ModelConfig cfg;
    cfg.num_layers = 2;
    cfg.hidden = 4;
    cfg.input_width = width;
    cfg.num_heads = 2;
    cfg.mpnn_kind = kind;
    cfg.head = HeadKind::NodeClass;
    cfg.num_classes = 2;
    cfg.seed = 19 + static_cast<std::uint64_t>(kind);
    node_models.emplace_back(cfg);
    cfg.head = HeadKind::GraphClass;
    graph_models.emplace_back(cfg);
  }

  for (std::uint64_t trial = 0; trial < 50; ++trial) {
    Rng rng(500 + trial);
    const std::size_t n = 3 + rng.index(14);  // up to 16 nodes
    const std::size_t ki = trial % 3;
    Graph g = random_graph(rng, n, 0.4, width);
    g.labels.kind = LabelKind::NodeClass;
    for (std::size_t u = 0; u < n; ++u) {
      g.labels.node_classes.push_back(static_cast<int>(u % 2));
    }

    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);

    std::vector<std::pair<std::size_t, std::size_t>> pedges;
    for (std::size_t u = 0; u < n; ++u) {
      for (std::size_t e = g.row_offsets[u]; e < g.row_offsets[u + 1]; ++e) {
        const std::size_t v = g.col_indices[e];
        if (u < v) pedges.push_back({perm[u], perm[v]});
      }
    }
    std::vector<double> pfeat(n * width);
    for (std::size_t u = 0; u < n; ++u) {
      for (std::size_t k = 0; k < width; ++k) {
        pfeat[perm[u] * width + k] = g.node_features.values()[u * width + k];
      }
    }
    Labels plabels;
    plabels.kind = LabelKind::NodeClass;
    plabels.node_classes.resize(n);
    for (std::size_t u = 0; u < n; ++u) {
      plabels.node_classes[perm[u]] = g.labels.node_classes[u];
    }
    Graph pg = make_graph(n, pedges,
                          Tensor::from_values({n, width}, std::move(pfeat)),
                          {}, std::move(plabels));

    // Layer-level check in eval mode.
    {
      Rng prng(900 + trial);
      MpnnParams params = make_mpnn(prng, kinds[ki], width, true);
      Tensor edges_a = kinds[ki] == MpnnKind::GatedGcn
                           ? Tensor::zeros({g.num_edges(), width})
                           : Tensor();
      Tensor edges_b = kinds[ki] == MpnnKind::GatedGcn
                           ? Tensor::zeros({pg.num_edges(), width})
                           : Tensor();
      MpnnParams pa = params, pb = params;
      Tensor ya = mpnn_forward(g, g.node_features, edges_a, pa, true,
                               BatchNormMode::Eval)
                      .nodes;
      Tensor yb = mpnn_forward(pg, pg.node_features, edges_b, pb, true,
                               BatchNormMode::Eval)
                      .nodes;
      double worst = 0.0;
      for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t k = 0; k < width; ++k) {
          worst = std::max(worst, std::abs(ya.at(u, k) - yb.at(perm[u], k)));
        }
      }
      track(suite, worst, "layer trial " + std::to_string(trial));
    }

    Batch ba = batch_graphs({g});
    Batch bb = batch_graphs({pg});
    Tensor na = node_models[ki].forward(ba, BatchNormMode::Eval).logits;
    Tensor nb = node_models[ki].forward(bb, BatchNormMode::Eval).logits;
    double worst = 0.0;
    for (std::size_t u = 0; u < n; ++u) {
      for (std::size_t k = 0; k < na.cols(); ++k) {
        worst = std::max(worst, std::abs(na.at(u, k) - nb.at(perm[u], k)));
      }
    }
    track(suite, worst, "node outputs trial " + std::to_string(trial));

    g.labels = Labels{};
    g.labels.kind = LabelKind::GraphClass;
    g.labels.graph_class = 0;
    pg.labels = g.labels;
    Tensor ga = graph_models[ki]
                    .forward(batch_graphs({g}), BatchNormMode::Eval)
                    .logits;
    Tensor gb = graph_models[ki]
                    .forward(batch_graphs({pg}), BatchNormMode::Eval)
                    .logits;
    track(suite, max_abs_diff(ga, gb),
          "graph logits trial " + std::to_string(trial));
  }
  suite.passed = suite.max_error < suite.tolerance;
  return suite;
}

// ---- suite 4: attention soundness ----------------------------------------

SuiteResult suite_attention_soundness() {
  SuiteResult suite{"attention-soundness", 0.0, 1e-12, false, ""};
  bool isolation_ok = true;
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    Rng rng(300 + trial);
    const std::size_t d = 4, heads = 2, dh = d / heads;
    const std::size_t na = 2 + rng.index(5), nb = 2 + rng.index(5);
    const std::size_t n = na + nb;
    std::vector<std::size_t> segment(na, 0);
    segment.insert(segment.end(), nb, 1);
    Tensor h = rand_tensor(rng, {n, d});
    MhaParams p = make_mha(rng, d, heads, true);

    // Row-stochastic attention, rebuilt from the same projections.
    for (const MhaHeadParams& head : p.heads) {
      Tensor q = matmul(h, head.wq), k = matmul(h, head.wk);
      std::vector<double> scores(n * n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          double dot = 0.0;
          for (std::size_t c = 0; c < dh; ++c) {
            dot += q.at(i, c) * k.at(j, c);
          }
          scores[i * n + j] = dot / std::sqrt(static_cast<double>(dh)) +
                              (segment[i] == segment[j] ? 0.0
                                                        : kAttentionMask);
        }
      }
      Tensor a = softmax_rows(Tensor::from_values({n, n}, std::move(scores)));
      for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < n; ++j) row += a.at(i, j);
        track(suite, std::abs(row - 1.0),
              "row sum trial " + std::to_string(trial));
      }
    }

    // Perturbing the second graph leaves the first bit-identical.
    Tensor out_a = mha_diff_forward(h, p, segment, true);
    std::vector<double> bumped(h.values().begin(), h.values().end());
    for (std::size_t i = na; i < n; ++i) {
      for (std::size_t k = 0; k < d; ++k) {
        bumped[i * d + k] += rng.normal(0.0, 1.0);
      }
    }
    Tensor out_b = mha_diff_forward(
        Tensor::from_values({n, d}, std::move(bumped)), p, segment, true);
    for (std::size_t i = 0; i < na; ++i) {
      for (std::size_t k = 0; k < d; ++k) {
        if (out_a.at(i, k) != out_b.at(i, k)) isolation_ok = false;
      }
    }
  }
  suite.passed = suite.max_error < suite.tolerance && isolation_ok;
  if (!isolation_ok) {
    suite.detail = "cross-graph isolation broke bit-identity";
    suite.max_error = std::max(suite.max_error, 1.0);
  }
  return suite;
}

// ---- suite 5: metric oracles ----------------------------------------------

SuiteResult suite_metric_oracles() {
  SuiteResult suite{"metric-oracles", 0.0, 0.0, false, ""};

  const std::vector<std::vector<double>> rows{{1, 2, 3},  {3, 3, 1},
                                              {3, 3, 1},  {0, -1, -2},
                                              {5, 6, 7},  {2, 9, 1}};
  std::vector<double> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  Tensor logits = Tensor::from_values({6, 3}, std::move(flat));
  const std::vector<int> labels{2, 0, 1, 0, 0, 1};

  // Brute-force references recomputed in place.
  std::vector<int> preds;
  for (std::size_t i = 0; i < 6; ++i) {
    int best = 0;
    for (int c = 1; c < 3; ++c) {
      if (rows[i][c] > rows[i][best]) best = c;
    }
    preds.push_back(best);
  }
  double acc_ref = 0.0;
  for (std::size_t i = 0; i < 6; ++i) acc_ref += preds[i] == labels[i];
  acc_ref /= 6.0;
  track(suite, std::abs(accuracy(logits, labels) - acc_ref), "accuracy");

  for (std::size_t num_classes : {3, 4}) {
    double f1_ref = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c) {
      double tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < 6; ++i) {
        const bool is_pred = preds[i] == static_cast<int>(c);
        const bool is_true = labels[i] == static_cast<int>(c);
        tp += is_pred && is_true;
        fp += is_pred && !is_true;
        fn += !is_pred && is_true;
      }
      if (tp + fp == 0 || tp + fn == 0) continue;
      const double prec = tp / (tp + fp), rec = tp / (tp + fn);
      if (prec + rec > 0) f1_ref += 2 * prec * rec / (prec + rec);
    }
    f1_ref /= static_cast<double>(num_classes);
    track(suite, std::abs(macro_f1(logits, labels, num_classes) - f1_ref),
          "macro-f1 " + std::to_string(num_classes) + " classes");
  }

  {
    Tensor ap_logits = Tensor::from_values(
        {5, 2}, {0.9, 0.2, 0.8, 0.3, 0.8, 0.4, 0.1, 0.5, 0.3, 0.6});
    const std::vector<std::vector<int>> bits{
        {1, 0}, {0, 0}, {1, 0}, {0, 0}, {1, 0}};
    double ref = 0.0;
    for (std::size_t l = 0; l < 2; ++l) {
      std::vector<std::size_t> order{0, 1, 2, 3, 4};
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) {
                         return ap_logits.at(a, l) > ap_logits.at(b, l);
                       });
      std::size_t pos = 0;
      for (const auto& row : bits) pos += row[l];
      if (pos == 0) continue;
      std::size_t seen = 0;
      double ap = 0.0;
      for (std::size_t r = 0; r < order.size(); ++r) {
        if (bits[order[r]][l]) {
          ++seen;
          ap += static_cast<double>(seen) / static_cast<double>(r + 1);
        }
      }
      ref += ap / static_cast<double>(pos);
    }
    ref /= 2.0;
    track(suite, std::abs(mean_average_precision(ap_logits, bits) - ref),
          "average precision");
  }

  struct RankCase {
    const char* name;
    std::vector<double> scores;
    std::vector<int> labels;
    std::vector<std::size_t> graphs;
  };
  const RankCase cases[] = {
      // Ranks 1, 2, 4: MRR must be 7/12 = 0.58333...
      {"mrr ranks 1,2,4",
       {10, 1, 2, 3, 5, 6, 1, 0.5, 2, 9, 8, 3, 1},
       {1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 0},
       {0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 2}},
      {"tie-heavy pairs",
       {3.0, 3.0, 1.0, 0.5, 0.5, 2.0, 1.0, -1.0, -2.0, 5.0},
       {1, 0, 0, 1, 0, 1, 0, 0, 1, 0},
       {0, 0, 0, 0, 0, 1, 1, 1, 1, 1}},
  };
  for (const RankCase& c : cases) {
    double mrr = 0, h1 = 0, h3 = 0, h10 = 0;
    std::size_t npos = 0;
    for (std::size_t i = 0; i < c.scores.size(); ++i) {
      if (c.labels[i] != 1) continue;
      std::size_t rank = 1;
      for (std::size_t j = 0; j < c.scores.size(); ++j) {
        if (c.labels[j] == 0 && c.graphs[j] == c.graphs[i] &&
            c.scores[j] >= c.scores[i]) {
          ++rank;
        }
      }
      mrr += 1.0 / static_cast<double>(rank);
      h1 += rank <= 1;
      h3 += rank <= 3;
      h10 += rank <= 10;
      ++npos;
    }
    const double dn = static_cast<double>(npos);
    std::vector<PairLabel> pairs;
    for (int l : c.labels) pairs.push_back({0, 1, l});
    RankMetrics rm = link_ranking(c.scores, pairs, c.graphs);
    track(suite, std::abs(rm.mrr - mrr / dn), std::string(c.name) + " mrr");
    track(suite, std::abs(rm.hits1 - h1 / dn), std::string(c.name) + " hits1");
    track(suite, std::abs(rm.hits3 - h3 / dn), std::string(c.name) + " hits3");
    track(suite, std::abs(rm.hits10 - h10 / dn),
          std::string(c.name) + " hits10");
  }
  if (std::abs(link_ranking(cases[0].scores,
                            [&] {
                              std::vector<PairLabel> pairs;
                              for (int l : cases[0].labels) {
                                pairs.push_back({0, 1, l});
                              }
                              return pairs;
                            }(),
                            cases[0].graphs)
                   .mrr -
               7.0 / 12.0) > 1e-15) {
    track(suite, 1.0, "hand MRR constant 7/12");
  }

  suite.passed = suite.max_error == 0.0;
  return suite;
}

// ---- suite 6: optimizer and schedule ---------------------------------------

SuiteResult suite_optimizer_schedule() {
  SuiteResult suite{"optimizer-schedule", 0.0, 1e-12, false, ""};

  Tensor x = Tensor::from_values({1, 1}, {1.0});
  x.set_requires_grad(true);
  std::vector<NamedTensor> params{{"x", x}};
  OptimizerConfig cfg;
  AdamState state;
  const double reference[3] = {0.9000000005, 0.8004122286917928,
                               0.7015862729460303};
  for (int step = 1; step <= 3; ++step) {
    x.zero_grad();
    x.mutable_grad()[0] = 2.0 * x.values()[0];
    adamw_step(params, state, cfg, step, 0.1);
    track(suite, std::abs(x.values()[0] - reference[step - 1]),
          "adamw step " + std::to_string(step));
  }

  OptimizerConfig sched;
  sched.base_lr = 0.4;
  sched.warmup_steps = 10;
  sched.total_steps = 100;
  track(suite, std::abs(lr_at(0, sched)), "lr at step 0");
  track(suite, std::abs(lr_at(10, sched) - 0.4), "lr at warmup end");
  track(suite, std::abs(lr_at(100, sched)), "lr at total steps");
  track(suite, std::abs(lr_at(55, sched) - 0.2), "lr at cosine midpoint");

  suite.passed = suite.max_error < suite.tolerance;
  return suite;
}

}  // namespace

std::vector<SuiteResult> run_verification() {
  return {suite_reduction_equivalence(),  suite_gradient_correctness(),
          suite_permutation_equivariance(), suite_attention_soundness(),
          suite_metric_oracles(),         suite_optimizer_schedule()};
}

}  // namespace diffgraph

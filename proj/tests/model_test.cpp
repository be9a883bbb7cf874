#include "diffgraph/model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "diffgraph/errors.hpp"
#include "diffgraph/graph.hpp"
#include "diffgraph/rng.hpp"

using namespace diffgraph;

namespace {

Graph random_labeled_graph(Rng& rng, std::size_t n, std::size_t width,
                           Labels labels = {}) {
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = u + 1; v < n; ++v) {
      if (rng.bernoulli(0.5)) edges.push_back({u, v});
    }
  }
  std::vector<double> feat(n * width);
  for (double& f : feat) f = rng.normal(0.0, 1.0);
  return make_graph(n, edges, Tensor::from_values({n, width}, std::move(feat)),
                    {}, std::move(labels));
}

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.num_layers = 1;
  cfg.hidden = 4;
  cfg.input_width = 3;
  cfg.num_heads = 2;
  cfg.mpnn_kind = MpnnKind::Gcn;
  cfg.head = HeadKind::GraphClass;
  cfg.num_classes = 2;
  cfg.seed = 7;
  return cfg;
}

void zero_params_matching(Model& m, const std::string& needle) {
  for (const NamedTensor& p : m.parameters()) {
    if (p.name.find(needle) != std::string::npos) {
      for (double& v : p.tensor.mutable_values()) v = 0.0;
    }
  }
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Replaces the single occurrence of `from` with the same-length `to`,
// keeping the archive's size fields valid.
std::string tamper(const std::string& bytes, const std::string& from,
                   const std::string& to) {
  EXPECT_EQ(from.size(), to.size());
  const std::size_t pos = bytes.find(from);
  EXPECT_NE(pos, std::string::npos) << "pattern not found: " << from;
  EXPECT_EQ(bytes.find(from, pos + 1), std::string::npos)
      << "pattern not unique: " << from;
  std::string out = bytes;
  out.replace(pos, from.size(), to);
  return out;
}

}  // namespace

// ---- configuration -------------------------------------------------------

TEST(ModelConfig, RejectsInvalidCombinations) {
  ModelConfig cfg = small_config();
  cfg.hidden = 5;  // not divisible by 2 heads
  EXPECT_THROW(Model m(cfg), ConfigError);
  cfg = small_config();
  cfg.num_layers = 0;
  EXPECT_THROW(Model m(cfg), ConfigError);
  cfg = small_config();
  cfg.use_local = false;
  cfg.use_global = false;
  EXPECT_THROW(Model m(cfg), ConfigError);
  cfg = small_config();
  cfg.num_classes = 0;
  EXPECT_THROW(Model m(cfg), ConfigError);
  cfg = small_config();
  cfg.head = HeadKind::LinkPred;
  cfg.num_classes = 0;  // ignored by the link head
  EXPECT_NO_THROW(Model m(cfg));
}

TEST(ModelConfig, KindAndHeadStringsRoundTrip) {
  for (MpnnKind k : {MpnnKind::Gcn, MpnnKind::Gat, MpnnKind::GatedGcn}) {
    EXPECT_EQ(mpnn_kind_from_string(to_string(k)), k);
  }
  for (HeadKind k : {HeadKind::GraphClass, HeadKind::NodeClass,
                     HeadKind::MultiLabel, HeadKind::LinkPred}) {
    EXPECT_EQ(head_kind_from_string(to_string(k)), k);
  }
  for (ReadoutMode m : {ReadoutMode::Mean, ReadoutMode::Sum}) {
    EXPECT_EQ(readout_mode_from_string(to_string(m)), m);
  }
  EXPECT_THROW(mpnn_kind_from_string("sage"), ConfigError);
  EXPECT_THROW(head_kind_from_string("regression"), ConfigError);
  EXPECT_THROW(readout_mode_from_string("max"), ConfigError);
}

// ---- parameter registry ---------------------------------------------------

TEST(ModelParams, CountMatchesHandComputedFormulas) {
  // GCN, K=1, d=4, d_in=3, 2 heads, both encoders on, graph head C=2:
  // 16 input + (16 mpnn + 40 diff + 8 bn + 88 mha + 8 bn + 40 ffn) + 10 head.
  ModelConfig a = small_config();
  EXPECT_EQ(Model(a).parameter_count(), 226u);

  // GatedGCN, edge width 2, K=2, d=4, 1 head, no encoders, link head:
  // 16 input + 12 edge + 2 * (96 mpnn + 8 bn + 64 mha + 8 bn + 40 ffn) + 16.
  ModelConfig b;
  b.num_layers = 2;
  b.hidden = 4;
  b.input_width = 3;
  b.edge_input_width = 2;
  b.num_heads = 1;
  b.mpnn_kind = MpnnKind::GatedGcn;
  b.use_diff_local = false;
  b.use_diff_global = false;
  b.head = HeadKind::LinkPred;
  EXPECT_EQ(Model(b).parameter_count(), 476u);

  // GAT without the global branch, K=1, d=4, node head C=3:
  // 16 input + (24 mpnn + 40 diff + 8 bn + 40 ffn) + 15 head.
  ModelConfig c;
  c.num_layers = 1;
  c.hidden = 4;
  c.input_width = 3;
  c.mpnn_kind = MpnnKind::Gat;
  c.use_global = false;
  c.head = HeadKind::NodeClass;
  c.num_classes = 3;
  EXPECT_EQ(Model(c).parameter_count(), 143u);
}

TEST(ModelParams, DisabledBranchesConstructNoParameters) {
  ModelConfig cfg = small_config();
  cfg.use_global = false;
  Model no_global(cfg);
  for (const NamedTensor& p : no_global.parameters()) {
    EXPECT_EQ(p.name.find("mha"), std::string::npos) << p.name;
    EXPECT_EQ(p.name.find("bn_global"), std::string::npos) << p.name;
  }
  cfg = small_config();
  cfg.mpnn_kind = MpnnKind::GatedGcn;
  cfg.edge_input_width = 2;
  cfg.use_local = false;
  Model no_local(cfg);
  for (const NamedTensor& p : no_local.parameters()) {
    EXPECT_EQ(p.name.find("mpnn"), std::string::npos) << p.name;
    EXPECT_EQ(p.name.find("bn_local"), std::string::npos) << p.name;
    EXPECT_EQ(p.name.find("diff_local"), std::string::npos) << p.name;
    EXPECT_EQ(p.name.find("edge_proj"), std::string::npos) << p.name;
  }
}

TEST(ModelParams, LookupByNameAndSeedDeterminism) {
  Model m(small_config());
  EXPECT_EQ(m.parameter("input_proj.w").shape(), (Shape{3, 4}));
  EXPECT_THROW(m.parameter("no_such_tensor"), ContractError);
  Model m2(small_config());
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    ASSERT_EQ(m.parameters()[i].name, m2.parameters()[i].name);
    const Tensor& a = m.parameters()[i].tensor;
    const Tensor& b = m2.parameters()[i].tensor;
    for (std::size_t j = 0; j < a.numel(); ++j) {
      EXPECT_EQ(a.values()[j], b.values()[j]);
    }
  }
}

// ---- forward ---------------------------------------------------------------

TEST(ModelForward, LogitShapesFollowHeadKind) {
  Rng rng(11);
  Labels gl;
  gl.kind = LabelKind::GraphClass;
  std::vector<Graph> gs = {random_labeled_graph(rng, 5, 3, gl),
                           random_labeled_graph(rng, 4, 3, gl)};
  Batch batch = batch_graphs(gs);

  ModelConfig cfg = small_config();
  EXPECT_EQ(Model(cfg).forward(batch, BatchNormMode::Eval).logits.shape(),
            (Shape{2, 2}));
  cfg.head = HeadKind::MultiLabel;
  cfg.num_classes = 5;
  EXPECT_EQ(Model(cfg).forward(batch, BatchNormMode::Eval).logits.shape(),
            (Shape{2, 5}));
  cfg.head = HeadKind::NodeClass;
  cfg.num_classes = 3;
  EXPECT_EQ(Model(cfg).forward(batch, BatchNormMode::Eval).logits.shape(),
            (Shape{9, 3}));

  Labels pl;
  pl.kind = LabelKind::LinkPairs;
  pl.pairs = {{0, 2, 1}, {1, 3, 0}};
  Graph pg = random_labeled_graph(rng, 5, 3, pl);
  Batch pbatch = batch_graphs({pg});
  cfg.head = HeadKind::LinkPred;
  Predictions pred = Model(cfg).forward(pbatch, BatchNormMode::Eval);
  EXPECT_EQ(pred.logits.shape(), (Shape{2, 1}));
  EXPECT_EQ(pred.node_embeddings.shape(), (Shape{5, 4}));
}

TEST(ModelForward, InputWidthMismatchRejected) {
  Rng rng(13);
  Batch batch = batch_graphs({random_labeled_graph(rng, 4, 5)});
  Model m(small_config());  // expects width 3
  EXPECT_THROW(m.forward(batch, BatchNormMode::Eval), ConfigError);
}

TEST(ModelForward, BareMpnnCompositionOracle) {
  // K=1, zeroed diff encoders, no global branch: the model must equal the
  // projection -> message-passing -> batchnorm -> residual -> FFN -> readout
  // -> linear head pipeline assembled by hand from its own tensors.
  Rng rng(17);
  ModelConfig cfg = small_config();
  cfg.use_global = false;
  Model m(cfg);
  zero_params_matching(m, "diff_local");

  Labels gl;
  gl.kind = LabelKind::GraphClass;
  std::vector<Graph> gs = {random_labeled_graph(rng, 5, 3, gl),
                           random_labeled_graph(rng, 3, 3, gl)};
  Batch batch = batch_graphs(gs);
  Tensor got = m.forward(batch, BatchNormMode::Eval).logits;

  Tensor h = add(matmul(batch.merged.node_features, m.parameter("input_proj.w")),
                 m.parameter("input_proj.b"));
  MpnnParams mp;
  mp.kind = MpnnKind::Gcn;
  mp.gcn.w = m.parameter("block0.mpnn.w");
  mp.diff.w1 = m.parameter("block0.diff_local.w1");
  mp.diff.b1 = m.parameter("block0.diff_local.b1");
  mp.diff.w2 = m.parameter("block0.diff_local.w2");
  mp.diff.b2 = m.parameter("block0.diff_local.b2");
  Tensor local = mpnn_forward(batch.merged, h, {}, mp, true,
                              BatchNormMode::Eval)
                     .nodes;
  BatchNormState state(4);
  Tensor hbar = add(batchnorm(local, m.parameter("block0.bn_local.gamma"),
                              m.parameter("block0.bn_local.beta"), state,
                              BatchNormMode::Eval),
                    h);
  FFNParams ffn = {m.parameter("block0.ffn.w1"), m.parameter("block0.ffn.b1"),
                   m.parameter("block0.ffn.w2"), m.parameter("block0.ffn.b2")};
  Tensor hout = add(ffn_forward(hbar, ffn), hbar);
  Tensor expect = add(matmul(readout(batch, hout, ReadoutMode::Mean),
                             m.parameter("head.w")),
                      m.parameter("head.b"));
  ASSERT_EQ(got.shape(), expect.shape());
  for (std::size_t i = 0; i < got.numel(); ++i) {
    EXPECT_NEAR(got.values()[i], expect.values()[i], 1e-12);
  }
}

TEST(ModelForward, GraphLogitsInvariantUnderNodePermutation) {
  Rng rng(19);
  ModelConfig cfg = small_config();
  cfg.mpnn_kind = MpnnKind::GatedGcn;
  cfg.edge_input_width = 2;
  Model m(cfg);

  const std::size_t n = 7;
  std::vector<std::pair<std::size_t, std::size_t>> edges = {
      {0, 1}, {0, 3}, {1, 2}, {2, 5}, {3, 4}, {4, 6}, {5, 6}, {1, 6}};
  std::vector<double> feat(n * 3), efeat(edges.size() * 2);
  for (double& f : feat) f = rng.normal(0.0, 1.0);
  for (double& f : efeat) f = rng.normal(0.0, 1.0);
  Labels gl;
  gl.kind = LabelKind::GraphClass;
  Graph g = make_graph(n, edges, Tensor::from_values({n, 3}, feat),
                       Tensor::from_values({edges.size(), 2}, efeat), gl);

  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  rng.shuffle(perm);
  std::vector<std::pair<std::size_t, std::size_t>> pedges;
  for (auto [u, v] : edges) pedges.push_back({perm[u], perm[v]});
  std::vector<double> pfeat(n * 3);
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t j = 0; j < 3; ++j) pfeat[perm[u] * 3 + j] = feat[u * 3 + j];
  }
  Graph pg = make_graph(n, pedges, Tensor::from_values({n, 3}, pfeat),
                        Tensor::from_values({edges.size(), 2}, efeat), gl);

  Tensor a = m.forward(batch_graphs({g}), BatchNormMode::Eval).logits;
  Tensor b = m.forward(batch_graphs({pg}), BatchNormMode::Eval).logits;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    EXPECT_NEAR(a.values()[i], b.values()[i], 1e-9);
  }
}

TEST(ModelForward, EvalModeIsBitDeterministic) {
  Rng rng(23);
  Labels gl;
  gl.kind = LabelKind::GraphClass;
  Batch batch = batch_graphs({random_labeled_graph(rng, 6, 3, gl)});
  ModelConfig cfg = small_config();
  cfg.mpnn_kind = MpnnKind::Gat;
  Model m(cfg);
  Tensor a = m.forward(batch, BatchNormMode::Eval).logits;
  Tensor b = m.forward(batch, BatchNormMode::Eval).logits;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    EXPECT_EQ(a.values()[i], b.values()[i]);
  }
}

TEST(ModelForward, ZeroedEncodersMatchPlainHybridModel) {
  // Zero every differential encoder in a diff-enabled model, mirror the
  // remaining weights into a config with the encoders compiled out, and the
  // two models must agree.
  Rng rng(29);
  for (MpnnKind kind : {MpnnKind::Gcn, MpnnKind::Gat, MpnnKind::GatedGcn}) {
    ModelConfig cfg = small_config();
    cfg.mpnn_kind = kind;
    cfg.num_layers = 2;
    Model with_diff(cfg);
    zero_params_matching(with_diff, "diff_local");
    zero_params_matching(with_diff, "diff.");

    ModelConfig plain_cfg = cfg;
    plain_cfg.use_diff_local = false;
    plain_cfg.use_diff_global = false;
    Model plain(plain_cfg);
    for (const NamedTensor& p : plain.parameters()) {
      Tensor src = with_diff.parameter(p.name);
      std::copy(src.values().begin(), src.values().end(),
                p.tensor.mutable_values().begin());
    }

    Labels gl;
    gl.kind = LabelKind::GraphClass;
    Batch batch = batch_graphs({random_labeled_graph(rng, 6, 3, gl),
                                random_labeled_graph(rng, 4, 3, gl)});
    Tensor a = with_diff.forward(batch, BatchNormMode::Eval).logits;
    Tensor b = plain.forward(batch, BatchNormMode::Eval).logits;
    for (std::size_t i = 0; i < a.numel(); ++i) {
      EXPECT_NEAR(a.values()[i], b.values()[i], 1e-10)
          << "kind " << static_cast<int>(kind);
    }
  }
}

TEST(ModelForward, LargeInputsStayFinite) {
  Rng rng(31);
  ModelConfig cfg = small_config();
  cfg.mpnn_kind = MpnnKind::GatedGcn;
  Model m(cfg);
  Labels gl;
  gl.kind = LabelKind::GraphClass;
  Graph g = random_labeled_graph(rng, 8, 3, gl);
  for (double& v : g.node_features.mutable_values()) v *= 1e3;
  Batch batch = batch_graphs({g});
  for (BatchNormMode mode : {BatchNormMode::Train, BatchNormMode::Eval}) {
    Tensor logits = m.forward(batch, mode).logits;
    for (double v : logits.values()) EXPECT_TRUE(std::isfinite(v));
  }
}

// ---- link head -------------------------------------------------------------

TEST(LinkHead, DotProductSemanticsThroughIdentityTrunk) {
  // Zeroing every block weight makes each block the identity map in eval
  // mode, and an identity input projection passes features through, so the
  // head sees exactly the raw features.
  ModelConfig cfg;
  cfg.num_layers = 1;
  cfg.hidden = 3;
  cfg.input_width = 3;
  cfg.num_heads = 1;
  cfg.mpnn_kind = MpnnKind::Gcn;
  cfg.head = HeadKind::LinkPred;
  Model m(cfg);
  for (const NamedTensor& p : m.parameters()) {
    Tensor t = p.tensor;
    if (p.name == "input_proj.w" || p.name == "head.map.w") {
      std::span<double> v = t.mutable_values();
      for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) v[i * 3 + j] = i == j ? 1.0 : 0.0;
      }
    } else if (p.name.find("gamma") == std::string::npos) {
      for (double& v : t.mutable_values()) v = 0.0;
    }
  }
  // Unit vectors: nodes 0 and 1 identical, node 2 orthogonal, node 3 zero.
  Graph g = make_graph(
      4, {{0, 1}, {1, 2}, {2, 3}},
      Tensor::from_values({4, 3},
                          {1, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 0}));
  Batch batch = batch_graphs({g});
  Tensor scores =
      m.link_score(batch, {{0, 1}, {0, 2}, {0, 3}}, BatchNormMode::Eval);
  EXPECT_DOUBLE_EQ(scores.at(0, 0), 1.0);  // identical unit vectors
  EXPECT_DOUBLE_EQ(scores.at(1, 0), 0.0);  // orthogonal
  EXPECT_DOUBLE_EQ(scores.at(2, 0), 0.0);  // zero embedding
  EXPECT_GT(scores.at(0, 0), scores.at(1, 0));
}

TEST(LinkHead, ScoresMatchBruteForceOracle) {
  Rng rng(37);
  ModelConfig cfg = small_config();
  cfg.head = HeadKind::LinkPred;
  Model m(cfg);
  Labels pl;
  pl.kind = LabelKind::LinkPairs;
  pl.pairs = {{0, 1, 1}, {0, 3, 0}, {1, 2, 0}, {2, 3, 1}};
  Graph g = random_labeled_graph(rng, 4, 3, pl);
  Batch batch = batch_graphs({g});
  Predictions pred = m.forward(batch, BatchNormMode::Eval);
  const Tensor& h = pred.node_embeddings;
  Tensor w = m.parameter("head.map.w");
  // mapped = h * w, score(u, v) = <mapped_u, mapped_v>, by explicit loops.
  std::vector<std::vector<double>> mapped(4, std::vector<double>(4, 0.0));
  for (std::size_t u = 0; u < 4; ++u) {
    for (std::size_t j = 0; j < 4; ++j) {
      for (std::size_t k = 0; k < 4; ++k) {
        mapped[u][j] += h.at(u, k) * w.at(k, j);
      }
    }
  }
  for (std::size_t i = 0; i < pl.pairs.size(); ++i) {
    double want = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      want += mapped[pl.pairs[i].u][j] * mapped[pl.pairs[i].v][j];
    }
    EXPECT_NEAR(pred.logits.at(i, 0), want, 1e-12);
  }
}

TEST(LinkHead, OutOfRangePairRejected) {
  Rng rng(41);
  ModelConfig cfg = small_config();
  cfg.head = HeadKind::LinkPred;
  Model m(cfg);
  Batch batch = batch_graphs({random_labeled_graph(rng, 4, 3)});
  EXPECT_THROW(m.link_score(batch, {{0, 9}}, BatchNormMode::Eval),
               ValidationError);
  ModelConfig gc = small_config();
  Model graph_model(gc);
  EXPECT_THROW(graph_model.link_score(batch, {{0, 1}}, BatchNormMode::Eval),
               ConfigError);
}

// ---- checkpoints ------------------------------------------------------------

TEST(Checkpoint, RoundTripRestoresForwardBitIdentically) {
  Rng rng(43);
  ModelConfig cfg = small_config();
  cfg.mpnn_kind = MpnnKind::GatedGcn;
  cfg.num_layers = 2;
  Model m(cfg);
  m.step = 123;
  // Simulate training history in the running statistics.
  for (auto& [name, vec] : m.running_stats()) {
    const bool is_var = name.find("running_var") != std::string::npos;
    for (double& v : *vec) {
      v = is_var ? 0.5 + rng.uniform01() : rng.normal(0.0, 0.5);
    }
  }
  Labels gl;
  gl.kind = LabelKind::GraphClass;
  Batch batch = batch_graphs({random_labeled_graph(rng, 5, 3, gl)});
  Tensor before = m.forward(batch, BatchNormMode::Eval).logits;

  const std::string path = temp_path("diffgraph_ckpt_roundtrip.tar");
  CheckpointExtra extra;
  extra.buffers.push_back({"moment.input_proj.w", {1.5, -2.5, 3.25}});
  save_checkpoint(m, path, &extra);
  LoadedCheckpoint loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.model.step, 123);
  ASSERT_EQ(loaded.extra.buffers.size(), 1u);
  EXPECT_EQ(loaded.extra.buffers[0].first, "moment.input_proj.w");
  EXPECT_EQ(loaded.extra.buffers[0].second, (std::vector<double>{1.5, -2.5, 3.25}));

  Tensor after = loaded.model.forward(batch, BatchNormMode::Eval).logits;
  for (std::size_t i = 0; i < before.numel(); ++i) {
    EXPECT_EQ(before.values()[i], after.values()[i]);
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  Rng rng(47);
  ModelConfig cfg = small_config();
  cfg.mpnn_kind = MpnnKind::Gat;
  Model m(cfg);
  for (auto& [name, vec] : m.running_stats()) {
    const bool is_var = name.find("running_var") != std::string::npos;
    for (double& v : *vec) {
      v = is_var ? 0.5 + rng.uniform01() : rng.normal(0.0, 0.5);
    }
  }
  const std::string p1 = temp_path("diffgraph_ckpt_a.tar");
  const std::string p2 = temp_path("diffgraph_ckpt_b.tar");
  save_checkpoint(m, p1);
  LoadedCheckpoint loaded = load_checkpoint(p1);
  save_checkpoint(loaded.model, p2);
  EXPECT_EQ(read_file(p1), read_file(p2));
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST(Checkpoint, ZeroedModelLoadsAllZeroParameters) {
  Model m(small_config());
  for (const NamedTensor& p : m.parameters()) {
    for (double& v : p.tensor.mutable_values()) v = 0.0;
  }
  const std::string path = temp_path("diffgraph_ckpt_zero.tar");
  save_checkpoint(m, path);
  LoadedCheckpoint loaded = load_checkpoint(path);
  for (const NamedTensor& p : loaded.model.parameters()) {
    for (double v : p.tensor.values()) EXPECT_EQ(v, 0.0);
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, TamperedFilesRaiseDistinctErrors) {
  ModelConfig cfg;
  cfg.num_layers = 1;
  cfg.hidden = 4;
  cfg.input_width = 3;
  cfg.mpnn_kind = MpnnKind::Gat;
  cfg.use_global = false;
  cfg.head = HeadKind::NodeClass;
  cfg.num_classes = 3;  // head.b is the only [3]-shaped tensor
  Model m(cfg);
  const std::string path = temp_path("diffgraph_ckpt_tamper.tar");
  save_checkpoint(m, path);
  const std::string original = read_file(path);

  write_file(path, tamper(original, "\"format_version\":1",
                          "\"format_version\":9"));
  EXPECT_THROW(load_checkpoint(path), CheckpointVersionError);

  write_file(path, tamper(original, "\"shape\":[3]", "\"shape\":[4]"));
  try {
    load_checkpoint(path);
    FAIL() << "expected CheckpointShapeError";
  } catch (const CheckpointShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("head.b"), std::string::npos);
  }

  write_file(path, tamper(original, "\"name\":\"head.b\"",
                          "\"name\":\"head.x\""));
  try {
    load_checkpoint(path);
    FAIL() << "expected CheckpointMissingTensorError";
  } catch (const CheckpointMissingTensorError& e) {
    EXPECT_NE(std::string(e.what()).find("head.b"), std::string::npos);
  }

  std::filesystem::remove(path);
}

TEST(Checkpoint, UnreadableOrGarbageFilesRejected) {
  EXPECT_THROW(load_checkpoint(temp_path("diffgraph_no_such_ckpt.tar")),
               LoadError);
  const std::string path = temp_path("diffgraph_ckpt_garbage.tar");
  write_file(path, std::string(2048, 'x'));
  EXPECT_THROW(load_checkpoint(path), LoadError);
  std::filesystem::remove(path);
}

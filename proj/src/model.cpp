#include "diffgraph/model.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "diffgraph/errors.hpp"
#include "diffgraph/rng.hpp"

namespace diffgraph {

namespace {

using nlohmann::json;

Tensor glorot(Rng& rng, std::size_t fan_in, std::size_t fan_out,
              const Shape& shape) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-limit, limit);
  return Tensor::from_values(shape, std::move(v), true);
}

std::string shape_string(const Shape& s) {
  std::ostringstream out;
  out << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out << " ";
    out << s[i];
  }
  out << "]";
  return out.str();
}

}  // namespace

std::string to_string(MpnnKind kind) {
  switch (kind) {
    case MpnnKind::Gcn: return "gcn";
    case MpnnKind::Gat: return "gat";
    case MpnnKind::GatedGcn: return "gatedgcn";
  }
  throw ContractError("to_string: unknown mpnn kind");
}

std::string to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::GraphClass: return "graph-class";
    case HeadKind::NodeClass: return "node-class";
    case HeadKind::MultiLabel: return "multi-label";
    case HeadKind::LinkPred: return "link-pred";
  }
  throw ContractError("to_string: unknown head kind");
}

std::string to_string(ReadoutMode mode) {
  return mode == ReadoutMode::Mean ? "mean" : "sum";
}

MpnnKind mpnn_kind_from_string(const std::string& s) {
  if (s == "gcn") return MpnnKind::Gcn;
  if (s == "gat") return MpnnKind::Gat;
  if (s == "gatedgcn") return MpnnKind::GatedGcn;
  throw ConfigError("unknown mpnn kind '" + s +
                    "' (expected gcn, gat, or gatedgcn)");
}

HeadKind head_kind_from_string(const std::string& s) {
  if (s == "graph-class") return HeadKind::GraphClass;
  if (s == "node-class") return HeadKind::NodeClass;
  if (s == "multi-label") return HeadKind::MultiLabel;
  if (s == "link-pred") return HeadKind::LinkPred;
  throw ConfigError(
      "unknown head kind '" + s +
      "' (expected graph-class, node-class, multi-label, or link-pred)");
}

ReadoutMode readout_mode_from_string(const std::string& s) {
  if (s == "mean") return ReadoutMode::Mean;
  if (s == "sum") return ReadoutMode::Sum;
  throw ConfigError("unknown readout mode '" + s + "' (expected mean or sum)");
}

void ModelConfig::validate() const {
  if (num_layers < 1) throw ConfigError("model: num_layers must be at least 1");
  if (hidden < 1) throw ConfigError("model: hidden width must be positive");
  if (input_width < 1) {
    throw ConfigError("model: input width must be positive");
  }
  if (!use_local && !use_global) {
    throw ConfigError(
        "model: at least one of the local and global branches must be "
        "enabled");
  }
  if (use_global) {
    if (num_heads < 1) {
      throw ConfigError("model: attention needs at least one head");
    }
    if (hidden % num_heads != 0) {
      throw ConfigError("model: hidden width must be divisible by the head "
                        "count");
    }
  }
  if (head != HeadKind::LinkPred && num_classes < 1) {
    throw ConfigError("model: class count must be positive");
  }
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  const std::size_t d = cfg_.hidden;

  auto reg = [this](const std::string& name, Tensor t) {
    params_.push_back({name, t});
    return t;
  };

  input_w_ = reg("input_proj.w", glorot(rng, cfg_.input_width, d,
                                        {cfg_.input_width, d}));
  input_b_ = reg("input_proj.b", Tensor::zeros({d}, true));

  const bool needs_edges =
      cfg_.mpnn_kind == MpnnKind::GatedGcn && cfg_.use_local;
  if (needs_edges) {
    if (cfg_.edge_input_width > 0) {
      edge_w_ = reg("edge_proj.w", glorot(rng, cfg_.edge_input_width, d,
                                          {cfg_.edge_input_width, d}));
    }
    edge_b_ = reg("edge_proj.b", Tensor::zeros({d}, true));
  }

  blocks_.resize(cfg_.num_layers);
  for (std::size_t k = 0; k < cfg_.num_layers; ++k) {
    const std::string pre = "block" + std::to_string(k) + ".";
    BlockParams& b = blocks_[k];
    b.mpnn.kind = cfg_.mpnn_kind;
    if (cfg_.use_local) {
      switch (cfg_.mpnn_kind) {
        case MpnnKind::Gcn:
          b.mpnn.gcn.w = reg(pre + "mpnn.w", glorot(rng, d, d, {d, d}));
          break;
        case MpnnKind::Gat:
          b.mpnn.gat.w = reg(pre + "mpnn.w", glorot(rng, d, d, {d, d}));
          b.mpnn.gat.attn =
              reg(pre + "mpnn.attn", glorot(rng, 2 * d, 1, {2 * d, 1}));
          break;
        case MpnnKind::GatedGcn:
          b.mpnn.gated.wu = reg(pre + "mpnn.wu", glorot(rng, d, d, {d, d}));
          b.mpnn.gated.wv = reg(pre + "mpnn.wv", glorot(rng, d, d, {d, d}));
          b.mpnn.gated.wa = reg(pre + "mpnn.wa", glorot(rng, d, d, {d, d}));
          b.mpnn.gated.wb = reg(pre + "mpnn.wb", glorot(rng, d, d, {d, d}));
          b.mpnn.gated.wc = reg(pre + "mpnn.wc", glorot(rng, d, d, {d, d}));
          b.mpnn.gated.bn_edge_gamma =
              reg(pre + "mpnn.bn_edge.gamma", Tensor::full({d}, 1.0, true));
          b.mpnn.gated.bn_edge_beta =
              reg(pre + "mpnn.bn_edge.beta", Tensor::zeros({d}, true));
          b.mpnn.gated.bn_node_gamma =
              reg(pre + "mpnn.bn_node.gamma", Tensor::full({d}, 1.0, true));
          b.mpnn.gated.bn_node_beta =
              reg(pre + "mpnn.bn_node.beta", Tensor::zeros({d}, true));
          b.mpnn.gated.bn_edge_state = BatchNormState(d);
          b.mpnn.gated.bn_node_state = BatchNormState(d);
          break;
      }
      if (cfg_.use_diff_local) {
        b.mpnn.diff.w1 = reg(pre + "diff_local.w1", glorot(rng, d, d, {d, d}));
        b.mpnn.diff.b1 = reg(pre + "diff_local.b1", Tensor::zeros({d}, true));
        b.mpnn.diff.w2 = reg(pre + "diff_local.w2", glorot(rng, d, d, {d, d}));
        b.mpnn.diff.b2 = reg(pre + "diff_local.b2", Tensor::zeros({d}, true));
      }
      b.bn_local_gamma =
          reg(pre + "bn_local.gamma", Tensor::full({d}, 1.0, true));
      b.bn_local_beta = reg(pre + "bn_local.beta", Tensor::zeros({d}, true));
      b.bn_local_state = BatchNormState(d);
    }
    if (cfg_.use_global) {
      const std::size_t dh = d / cfg_.num_heads;
      for (std::size_t i = 0; i < cfg_.num_heads; ++i) {
        const std::string hp = pre + "mha.head" + std::to_string(i) + ".";
        MhaHeadParams head;
        head.wq = reg(hp + "wq", glorot(rng, d, dh, {d, dh}));
        head.wk = reg(hp + "wk", glorot(rng, d, dh, {d, dh}));
        head.wv = reg(hp + "wv", glorot(rng, d, dh, {d, dh}));
        if (cfg_.use_diff_global) {
          head.diff.w1 = reg(hp + "diff.w1", glorot(rng, dh, dh, {dh, dh}));
          head.diff.b1 = reg(hp + "diff.b1", Tensor::zeros({dh}, true));
          head.diff.w2 = reg(hp + "diff.w2", glorot(rng, dh, dh, {dh, dh}));
          head.diff.b2 = reg(hp + "diff.b2", Tensor::zeros({dh}, true));
        }
        b.mha.heads.push_back(std::move(head));
      }
      b.mha.w_out = reg(pre + "mha.w_out", glorot(rng, d, d, {d, d}));
      b.bn_global_gamma =
          reg(pre + "bn_global.gamma", Tensor::full({d}, 1.0, true));
      b.bn_global_beta = reg(pre + "bn_global.beta", Tensor::zeros({d}, true));
      b.bn_global_state = BatchNormState(d);
    }
    b.ffn.w1 = reg(pre + "ffn.w1", glorot(rng, d, d, {d, d}));
    b.ffn.b1 = reg(pre + "ffn.b1", Tensor::zeros({d}, true));
    b.ffn.w2 = reg(pre + "ffn.w2", glorot(rng, d, d, {d, d}));
    b.ffn.b2 = reg(pre + "ffn.b2", Tensor::zeros({d}, true));
  }

  if (cfg_.head == HeadKind::LinkPred) {
    link_w_ = reg("head.map.w", glorot(rng, d, d, {d, d}));
  } else {
    head_w_ = reg("head.w", glorot(rng, d, cfg_.num_classes,
                                   {d, cfg_.num_classes}));
    head_b_ = reg("head.b", Tensor::zeros({cfg_.num_classes}, true));
  }
}

std::size_t Model::parameter_count() const {
  std::size_t total = 0;
  for (const NamedTensor& p : params_) total += p.tensor.numel();
  return total;
}

Tensor Model::parameter(const std::string& name) const {
  for (const NamedTensor& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw ContractError("model has no parameter named '" + name + "'");
}

std::vector<std::pair<std::string, std::vector<double>*>>
Model::running_stats() {
  std::vector<std::pair<std::string, std::vector<double>*>> out;
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    const std::string pre = "block" + std::to_string(k) + ".";
    BlockParams& b = blocks_[k];
    if (cfg_.use_local && cfg_.mpnn_kind == MpnnKind::GatedGcn) {
      out.push_back({pre + "mpnn.bn_edge.running_mean",
                     &b.mpnn.gated.bn_edge_state.running_mean});
      out.push_back({pre + "mpnn.bn_edge.running_var",
                     &b.mpnn.gated.bn_edge_state.running_var});
      out.push_back({pre + "mpnn.bn_node.running_mean",
                     &b.mpnn.gated.bn_node_state.running_mean});
      out.push_back({pre + "mpnn.bn_node.running_var",
                     &b.mpnn.gated.bn_node_state.running_var});
    }
    if (cfg_.use_local) {
      out.push_back(
          {pre + "bn_local.running_mean", &b.bn_local_state.running_mean});
      out.push_back(
          {pre + "bn_local.running_var", &b.bn_local_state.running_var});
    }
    if (cfg_.use_global) {
      out.push_back(
          {pre + "bn_global.running_mean", &b.bn_global_state.running_mean});
      out.push_back(
          {pre + "bn_global.running_var", &b.bn_global_state.running_var});
    }
  }
  return out;
}

std::vector<std::pair<std::string, const std::vector<double>*>>
Model::running_stats() const {
  std::vector<std::pair<std::string, const std::vector<double>*>> out;
  for (auto& [name, vec] : const_cast<Model*>(this)->running_stats()) {
    out.push_back({name, vec});
  }
  return out;
}

Tensor Model::trunk(const Batch& batch, BatchNormMode mode) {
  const Graph& g = batch.merged;
  if (g.node_features.shape()[1] != cfg_.input_width) {
    throw ConfigError("model expects input width " +
                      std::to_string(cfg_.input_width) + " but the batch has " +
                      std::to_string(g.node_features.shape()[1]));
  }
  Tensor h = add(matmul(g.node_features, input_w_), input_b_);

  Tensor edges;
  const bool needs_edges =
      cfg_.mpnn_kind == MpnnKind::GatedGcn && cfg_.use_local;
  if (needs_edges) {
    const std::size_t etot = g.num_edges();
    if (cfg_.edge_input_width > 0) {
      if (!g.has_edge_features() ||
          g.edge_features.shape()[1] != cfg_.edge_input_width) {
        throw ConfigError("model expects edge width " +
                          std::to_string(cfg_.edge_input_width) +
                          " but the batch disagrees");
      }
      edges = add(matmul(g.edge_features, edge_w_), edge_b_);
    } else if (etot > 0) {
      edges = add(Tensor::zeros({etot, cfg_.hidden}), edge_b_);
    } else {
      edges = Tensor::zeros({0, cfg_.hidden});
    }
  }

  for (BlockParams& b : blocks_) {
    BlockResult r =
        encoder_block(g, batch.graph_index, h, edges, b, cfg_.use_diff_local,
                      cfg_.use_diff_global, mode, cfg_.use_local,
                      cfg_.use_global);
    h = r.nodes;
    edges = r.edges;
  }
  return h;
}

Tensor Model::score_pairs(
    const Tensor& h,
    const std::vector<std::pair<std::size_t, std::size_t>>& pairs) const {
  const std::size_t n = h.shape()[0];
  std::vector<std::size_t> us, vs;
  us.reserve(pairs.size());
  vs.reserve(pairs.size());
  for (const auto& [u, v] : pairs) {
    if (u >= n || v >= n) {
      throw ValidationError("link pair (" + std::to_string(u) + ", " +
                            std::to_string(v) +
                            ") indexes outside the batch of " +
                            std::to_string(n) + " nodes");
    }
    us.push_back(u);
    vs.push_back(v);
  }
  if (pairs.empty()) return Tensor::zeros({0, 1});
  Tensor mapped = matmul(h, link_w_);
  Tensor prod = mul(gather_rows(mapped, us), gather_rows(mapped, vs));
  return matmul(prod, Tensor::full({cfg_.hidden, 1}, 1.0));
}

Predictions Model::forward(const Batch& batch, BatchNormMode mode) {
  Tensor h = trunk(batch, mode);
  Predictions out;
  out.node_embeddings = h;
  switch (cfg_.head) {
    case HeadKind::GraphClass:
    case HeadKind::MultiLabel:
      out.logits =
          add(matmul(readout(batch, h, cfg_.readout_mode), head_w_), head_b_);
      break;
    case HeadKind::NodeClass:
      out.logits = add(matmul(h, head_w_), head_b_);
      break;
    case HeadKind::LinkPred: {
      std::vector<std::pair<std::size_t, std::size_t>> pairs;
      pairs.reserve(batch.pairs.size());
      for (const PairLabel& p : batch.pairs) pairs.push_back({p.u, p.v});
      out.logits = score_pairs(h, pairs);
      break;
    }
  }
  return out;
}

Tensor Model::link_score(
    const Batch& batch,
    const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
    BatchNormMode mode) {
  if (cfg_.head != HeadKind::LinkPred) {
    throw ConfigError("link_score requires a model with the link-pred head");
  }
  return score_pairs(trunk(batch, mode), pairs);
}

// ---- checkpoint serialization -------------------------------------------

namespace {

struct TarEntry {
  std::string name;
  std::string data;
};

void append_octal(std::string& header, std::size_t offset, std::size_t width,
                  std::uint64_t value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%0*llo", static_cast<int>(width - 1),
                static_cast<unsigned long long>(value));
  std::memcpy(&header[offset], buf, width - 1);
}

std::string tar_bytes(const std::vector<TarEntry>& entries) {
  std::string out;
  for (const TarEntry& e : entries) {
    std::string header(512, '\0');
    if (e.name.size() >= 100) {
      throw ContractError("archive entry name too long: " + e.name);
    }
    std::memcpy(&header[0], e.name.data(), e.name.size());
    append_octal(header, 100, 8, 0644);   // mode
    append_octal(header, 108, 8, 0);      // uid
    append_octal(header, 116, 8, 0);      // gid
    append_octal(header, 124, 12, e.data.size());
    append_octal(header, 136, 12, 0);     // mtime pinned for determinism
    std::memset(&header[148], ' ', 8);
    header[156] = '0';
    std::memcpy(&header[257], "ustar", 6);
    header[263] = '0';
    header[264] = '0';
    unsigned checksum = 0;
    for (unsigned char c : header) checksum += c;
    char buf[8];
    std::snprintf(buf, sizeof buf, "%06o", checksum);
    std::memcpy(&header[148], buf, 6);
    header[154] = '\0';
    header[155] = ' ';
    out += header;
    out += e.data;
    out.append((512 - e.data.size() % 512) % 512, '\0');
  }
  out.append(1024, '\0');
  return out;
}

std::vector<TarEntry> parse_tar(const std::string& bytes,
                                const std::string& path) {
  std::vector<TarEntry> entries;
  std::size_t pos = 0;
  while (pos + 512 <= bytes.size()) {
    const char* header = bytes.data() + pos;
    if (header[0] == '\0') break;  // terminator block
    if (std::memcmp(header + 257, "ustar", 5) != 0) {
      throw LoadError(path + ": not a checkpoint archive");
    }
    std::string name(header, strnlen(header, 100));
    std::size_t size = 0;
    for (std::size_t i = 124; i < 135 && header[i] != '\0'; ++i) {
      if (header[i] < '0' || header[i] > '7') {
        throw LoadError(path + ": corrupt archive entry size");
      }
      size = size * 8 + static_cast<std::size_t>(header[i] - '0');
    }
    pos += 512;
    if (pos + size > bytes.size()) {
      throw LoadError(path + ": archive entry '" + name + "' is truncated");
    }
    entries.push_back({name, bytes.substr(pos, size)});
    pos += size + (512 - size % 512) % 512;
  }
  return entries;
}

void write_le_doubles(std::string& out, const double* values, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int byte = 0; byte < 8; ++byte) {
      out.push_back(static_cast<char>((bits >> (8 * byte)) & 0xff));
    }
  }
}

std::vector<double> read_le_doubles(const std::string& in, std::size_t offset,
                                    std::size_t n) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    for (int byte = 7; byte >= 0; --byte) {
      bits = (bits << 8) |
             static_cast<unsigned char>(in[offset + i * 8 + byte]);
    }
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

json config_to_json(const ModelConfig& cfg) {
  return {{"num_layers", cfg.num_layers},
          {"hidden", cfg.hidden},
          {"input_width", cfg.input_width},
          {"edge_input_width", cfg.edge_input_width},
          {"num_heads", cfg.num_heads},
          {"mpnn_kind", to_string(cfg.mpnn_kind)},
          {"use_diff_local", cfg.use_diff_local},
          {"use_diff_global", cfg.use_diff_global},
          {"use_local", cfg.use_local},
          {"use_global", cfg.use_global},
          {"readout", to_string(cfg.readout_mode)},
          {"head", to_string(cfg.head)},
          {"num_classes", cfg.num_classes},
          {"seed", cfg.seed}};
}

ModelConfig config_from_json(const json& j, const std::string& path) {
  try {
    ModelConfig cfg;
    cfg.num_layers = j.at("num_layers").get<std::size_t>();
    cfg.hidden = j.at("hidden").get<std::size_t>();
    cfg.input_width = j.at("input_width").get<std::size_t>();
    cfg.edge_input_width = j.at("edge_input_width").get<std::size_t>();
    cfg.num_heads = j.at("num_heads").get<std::size_t>();
    cfg.mpnn_kind = mpnn_kind_from_string(j.at("mpnn_kind").get<std::string>());
    cfg.use_diff_local = j.at("use_diff_local").get<bool>();
    cfg.use_diff_global = j.at("use_diff_global").get<bool>();
    cfg.use_local = j.at("use_local").get<bool>();
    cfg.use_global = j.at("use_global").get<bool>();
    cfg.readout_mode = readout_mode_from_string(j.at("readout").get<std::string>());
    cfg.head = head_kind_from_string(j.at("head").get<std::string>());
    cfg.num_classes = j.at("num_classes").get<std::size_t>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    return cfg;
  } catch (const json::exception& e) {
    throw LoadError(path + ": malformed config in manifest: " + e.what());
  }
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path,
                     const CheckpointExtra* extra) {
  json tensors = json::array();
  std::string payload;
  std::size_t offset = 0;
  for (const NamedTensor& p : model.parameters()) {
    tensors.push_back({{"name", p.name},
                       {"shape", p.tensor.shape()},
                       {"offset", offset}});
    write_le_doubles(payload, p.tensor.values().data(), p.tensor.numel());
    offset += p.tensor.numel() * 8;
  }
  json stats = json::array();
  for (const auto& [name, vec] : model.running_stats()) {
    stats.push_back({{"name", name}, {"size", vec->size()}, {"offset", offset}});
    write_le_doubles(payload, vec->data(), vec->size());
    offset += vec->size() * 8;
  }
  json manifest = {{"format_version", 1},
                   {"step", model.step},
                   {"config", config_to_json(model.config())},
                   {"tensors", tensors},
                   {"stats", stats}};
  if (extra != nullptr && !extra->buffers.empty()) {
    json extras = json::array();
    for (const auto& [name, vec] : extra->buffers) {
      extras.push_back(
          {{"name", name}, {"size", vec.size()}, {"offset", offset}});
      write_le_doubles(payload, vec.data(), vec.size());
      offset += vec.size() * 8;
    }
    manifest["extra"] = extras;
  }

  const std::string bytes =
      tar_bytes({{"manifest.json", manifest.dump()}, {"params.bin", payload}});
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint to '" + path + "'");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();

  std::string manifest_text, payload;
  bool have_manifest = false, have_payload = false;
  for (TarEntry& e : parse_tar(bytes, path)) {
    if (e.name == "manifest.json") {
      manifest_text = std::move(e.data);
      have_manifest = true;
    } else if (e.name == "params.bin") {
      payload = std::move(e.data);
      have_payload = true;
    } else {
      throw LoadError(path + ": unexpected archive entry '" + e.name + "'");
    }
  }
  if (!have_manifest || !have_payload) {
    throw LoadError(path + ": archive must contain manifest.json and "
                    "params.bin");
  }

  json manifest;
  try {
    manifest = json::parse(manifest_text);
  } catch (const json::exception& e) {
    throw LoadError(path + ": malformed manifest: " + e.what());
  }
  int version = -1;
  if (manifest.contains("format_version") &&
      manifest["format_version"].is_number_integer()) {
    version = manifest["format_version"].get<int>();
  }
  if (version != 1) {
    throw CheckpointVersionError(
        path + ": unsupported checkpoint format version " +
        std::to_string(version));
  }
  if (!manifest.contains("config")) {
    throw LoadError(path + ": manifest has no config section");
  }

  ModelConfig cfg = config_from_json(manifest["config"], path);
  LoadedCheckpoint loaded{Model(cfg), {}};
  Model& model = loaded.model;
  try {
    model.step = manifest.value("step", 0L);
  } catch (const json::exception& e) {
    throw LoadError(path + ": malformed step counter: " + e.what());
  }

  struct Entry {
    Shape shape;
    std::size_t offset = 0;
    bool is_stat = false;
    std::size_t size = 0;
  };
  std::vector<std::pair<std::string, Entry>> table;
  try {
    for (const json& t : manifest.at("tensors")) {
      table.push_back({t.at("name").get<std::string>(),
                       {t.at("shape").get<Shape>(),
                        t.at("offset").get<std::size_t>(), false, 0}});
    }
    for (const json& t : manifest.at("stats")) {
      table.push_back({t.at("name").get<std::string>(),
                       {{}, t.at("offset").get<std::size_t>(), true,
                        t.at("size").get<std::size_t>()}});
    }
  } catch (const json::exception& e) {
    throw LoadError(path + ": malformed tensor table: " + e.what());
  }

  auto find = [&table, &path](const std::string& name) -> const Entry& {
    for (const auto& [n, entry] : table) {
      if (n == name) return entry;
    }
    throw CheckpointMissingTensorError(path + ": checkpoint is missing tensor '" +
                                       name + "'");
  };

  std::size_t expected = model.parameters().size();
  for (const NamedTensor& p : model.parameters()) {
    const Entry& e = find(p.name);
    if (e.is_stat || e.shape != p.tensor.shape()) {
      throw CheckpointShapeError(
          path + ": tensor '" + p.name + "' has shape " +
          shape_string(e.shape) + " but the model expects " +
          shape_string(p.tensor.shape()));
    }
    if (e.offset + p.tensor.numel() * 8 > payload.size()) {
      throw LoadError(path + ": tensor '" + p.name +
                      "' extends past the end of params.bin");
    }
    std::vector<double> vals = read_le_doubles(payload, e.offset,
                                               p.tensor.numel());
    std::copy(vals.begin(), vals.end(), p.tensor.mutable_values().begin());
  }
  for (auto& [name, vec] : model.running_stats()) {
    const Entry& e = find(name);
    ++expected;
    if (!e.is_stat || e.size != vec->size()) {
      throw CheckpointShapeError(path + ": running stat '" + name +
                                 "' does not match the model's width");
    }
    if (e.offset + vec->size() * 8 > payload.size()) {
      throw LoadError(path + ": stat '" + name +
                      "' extends past the end of params.bin");
    }
    *vec = read_le_doubles(payload, e.offset, vec->size());
  }
  if (table.size() != expected) {
    throw CheckpointMissingTensorError(
        path + ": checkpoint carries tensors the model does not expect");
  }

  if (manifest.contains("extra")) {
    try {
      for (const json& t : manifest.at("extra")) {
        const std::size_t offset = t.at("offset").get<std::size_t>();
        const std::size_t size = t.at("size").get<std::size_t>();
        if (offset + size * 8 > payload.size()) {
          throw LoadError(path + ": extra buffer extends past params.bin");
        }
        loaded.extra.buffers.push_back(
            {t.at("name").get<std::string>(),
             read_le_doubles(payload, offset, size)});
      }
    } catch (const json::exception& e) {
      throw LoadError(path + ": malformed extra table: " + e.what());
    }
  }
  return loaded;
}

}  // namespace diffgraph

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "diffgraph/errors.hpp"
#include "diffgraph/format.hpp"
#include "diffgraph/graph.hpp"
#include "diffgraph/model.hpp"
#include "diffgraph/training.hpp"
#include "diffgraph/verify.hpp"

using namespace diffgraph;
using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

// ---- run configuration -----------------------------------------------

struct RunConfig {
  ModelConfig model;
  OptimizerConfig opt;
  std::size_t batch_size = 32;
  long epochs = 200;
  double clip_norm = 5.0;
  std::string data_train, data_val, data_test;
  std::string output_dir;
  std::vector<std::uint64_t> seeds{0};
};

json default_config() {
  const ModelConfig m;
  const OptimizerConfig o;
  json j;
  j["model.num_layers"] = m.num_layers;
  j["model.hidden"] = m.hidden;
  j["model.input_width"] = m.input_width;
  j["model.edge_input_width"] = m.edge_input_width;
  j["model.num_heads"] = m.num_heads;
  j["model.mpnn_kind"] = to_string(m.mpnn_kind);
  j["model.use_diff_local"] = m.use_diff_local;
  j["model.use_diff_global"] = m.use_diff_global;
  j["model.use_local"] = m.use_local;
  j["model.use_global"] = m.use_global;
  j["model.readout_mode"] = to_string(m.readout_mode);
  j["model.head"] = to_string(m.head);
  j["model.num_classes"] = m.num_classes;
  j["model.seed"] = m.seed;
  j["optimizer.base_lr"] = o.base_lr;
  j["optimizer.beta1"] = o.beta1;
  j["optimizer.beta2"] = o.beta2;
  j["optimizer.eps"] = o.eps;
  j["optimizer.weight_decay"] = o.weight_decay;
  j["optimizer.warmup_steps"] = o.warmup_steps;
  j["optimizer.total_steps"] = o.total_steps;
  j["train.batch_size"] = 32;
  j["train.epochs"] = 200;
  j["train.clip_norm"] = 5.0;
  j["data.train"] = "";
  j["data.val"] = "";
  j["data.test"] = "";
  j["output_dir"] = "";
  j["seeds"] = json::array({0});
  return j;
}

bool is_integer_key(const json& v) {
  return v.is_number_integer() || v.is_number_unsigned();
}

void merge_config_file(json& canon, const json& file,
                       const std::string& path) {
  if (!file.is_object()) {
    throw ConfigError("config file '" + path +
                      "' must hold a flat JSON object");
  }
  for (const auto& [key, value] : file.items()) {
    if (!canon.contains(key)) {
      throw ConfigError("unknown configuration key '" + key + "' in " + path);
    }
    const json& cur = canon.at(key);
    if (cur.is_boolean()) {
      if (!value.is_boolean()) {
        throw ConfigError("key '" + key + "' expects true or false");
      }
    } else if (cur.is_string()) {
      if (!value.is_string()) {
        throw ConfigError("key '" + key + "' expects a string");
      }
    } else if (cur.is_array()) {
      if (!value.is_array() || value.empty()) {
        throw ConfigError("key '" + key + "' expects a nonempty array");
      }
      for (const json& e : value) {
        if (!is_integer_key(e) || (e.is_number_integer() &&
                                   e.get<long long>() < 0)) {
          throw ConfigError("key '" + key +
                            "' expects nonnegative integers");
        }
      }
    } else if (cur.is_number_float()) {
      if (!value.is_number()) {
        throw ConfigError("key '" + key + "' expects a number");
      }
    } else {
      if (!is_integer_key(value)) {
        throw ConfigError("key '" + key + "' expects an integer");
      }
    }
    if (cur.is_number_float() && value.is_number()) {
      canon[key] = value.get<double>();
    } else {
      canon[key] = value;
    }
  }
}

void apply_override(json& canon, const std::string& arg) {
  const std::size_t eq = arg.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw UsageError("override '" + arg + "' is not of the form key=value");
  }
  const std::string key = arg.substr(0, eq);
  const std::string raw = arg.substr(eq + 1);
  if (!canon.contains(key)) {
    throw ConfigError("unknown configuration key '" + key + "'");
  }
  json& cur = canon[key];
  auto fail = [&]() {
    throw ConfigError("cannot parse override value '" + raw + "' for key '" +
                      key + "'");
  };
  if (cur.is_boolean()) {
    if (raw == "true" || raw == "1") {
      cur = true;
    } else if (raw == "false" || raw == "0") {
      cur = false;
    } else {
      fail();
    }
  } else if (cur.is_string()) {
    cur = raw;
  } else if (cur.is_array()) {
    json arr = json::array();
    std::size_t start = 0;
    while (start <= raw.size()) {
      const std::size_t comma = raw.find(',', start);
      const std::string part =
          raw.substr(start, comma == std::string::npos ? std::string::npos
                                                       : comma - start);
      std::size_t used = 0;
      unsigned long long v = 0;
      try {
        v = std::stoull(part, &used);
      } catch (const std::exception&) {
        fail();
      }
      if (used != part.size() || part.empty()) fail();
      arr.push_back(v);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (arr.empty()) fail();
    cur = arr;
  } else if (cur.is_number_float()) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(raw, &used);
    } catch (const std::exception&) {
      fail();
    }
    if (used != raw.size()) fail();
    cur = v;
  } else {
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(raw, &used);
    } catch (const std::exception&) {
      fail();
    }
    if (used != raw.size()) fail();
    cur = v;
  }
}

long long get_int(const json& canon, const std::string& key) {
  return canon.at(key).get<long long>();
}

std::size_t get_size(const json& canon, const std::string& key) {
  const long long v = get_int(canon, key);
  if (v < 0) throw ConfigError("key '" + key + "' must not be negative");
  return static_cast<std::size_t>(v);
}

RunConfig materialize(const json& canon) {
  RunConfig rc;
  rc.model.num_layers = get_size(canon, "model.num_layers");
  rc.model.hidden = get_size(canon, "model.hidden");
  rc.model.input_width = get_size(canon, "model.input_width");
  rc.model.edge_input_width = get_size(canon, "model.edge_input_width");
  rc.model.num_heads = get_size(canon, "model.num_heads");
  rc.model.mpnn_kind =
      mpnn_kind_from_string(canon.at("model.mpnn_kind").get<std::string>());
  rc.model.use_diff_local = canon.at("model.use_diff_local").get<bool>();
  rc.model.use_diff_global = canon.at("model.use_diff_global").get<bool>();
  rc.model.use_local = canon.at("model.use_local").get<bool>();
  rc.model.use_global = canon.at("model.use_global").get<bool>();
  rc.model.readout_mode = readout_mode_from_string(
      canon.at("model.readout_mode").get<std::string>());
  rc.model.head =
      head_kind_from_string(canon.at("model.head").get<std::string>());
  rc.model.num_classes = get_size(canon, "model.num_classes");
  if (get_int(canon, "model.seed") < 0) {
    throw ConfigError("key 'model.seed' must not be negative");
  }
  rc.model.seed = canon.at("model.seed").get<std::uint64_t>();
  rc.opt.base_lr = canon.at("optimizer.base_lr").get<double>();
  rc.opt.beta1 = canon.at("optimizer.beta1").get<double>();
  rc.opt.beta2 = canon.at("optimizer.beta2").get<double>();
  rc.opt.eps = canon.at("optimizer.eps").get<double>();
  rc.opt.weight_decay = canon.at("optimizer.weight_decay").get<double>();
  rc.opt.warmup_steps = get_int(canon, "optimizer.warmup_steps");
  rc.opt.total_steps = get_int(canon, "optimizer.total_steps");
  rc.batch_size = get_size(canon, "train.batch_size");
  rc.epochs = get_int(canon, "train.epochs");
  rc.clip_norm = canon.at("train.clip_norm").get<double>();
  rc.data_train = canon.at("data.train").get<std::string>();
  rc.data_val = canon.at("data.val").get<std::string>();
  rc.data_test = canon.at("data.test").get<std::string>();
  rc.output_dir = canon.at("output_dir").get<std::string>();
  rc.seeds.clear();
  for (const json& s : canon.at("seeds")) {
    rc.seeds.push_back(s.get<std::uint64_t>());
  }
  if (rc.seeds.empty()) throw ConfigError("seeds must not be empty");
  return rc;
}

std::size_t threads_from_env() {
  const char* env = std::getenv("DIFFGRAPH_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(env, &used);
  } catch (const std::exception&) {
    v = 0;
  }
  if (used != std::string(env).size() || v < 1) {
    throw ConfigError("DIFFGRAPH_THREADS must be a positive integer, got '" +
                      std::string(env) + "'");
  }
  return static_cast<std::size_t>(v);
}

// ---- commands ---------------------------------------------------------

std::size_t count_classes(const std::vector<Graph>& data) {
  std::size_t classes = 0;
  for (const Graph& g : data) {
    switch (g.labels.kind) {
      case LabelKind::GraphClass:
        classes = std::max(classes,
                           static_cast<std::size_t>(g.labels.graph_class) + 1);
        break;
      case LabelKind::NodeClass:
        for (int c : g.labels.node_classes) {
          classes = std::max(classes, static_cast<std::size_t>(c) + 1);
        }
        break;
      case LabelKind::GraphMultiLabel:
        classes = std::max(classes, g.labels.graph_bits.size());
        break;
      case LabelKind::LinkPairs:
        classes = 2;
        break;
      case LabelKind::None:
        break;
    }
  }
  return classes;
}

int cmd_gen(const std::string& kind, std::uint64_t seed, const GenParams& gp,
            const std::string& out, bool force) {
  if (fs::exists(out) && !force) {
    throw UsageError("output file '" + out +
                     "' exists; pass --force to overwrite");
  }
  std::vector<Graph> data = gen_synthetic(kind, seed, gp);
  save_dataset(data, out);
  std::printf("wrote %zu graphs (%zu nodes each, %zu classes) to %s\n",
              data.size(), data[0].num_nodes, count_classes(data),
              out.c_str());
  return 0;
}

int cmd_train(const std::string& config_path,
              const std::vector<std::string>& overrides) {
  std::ifstream in(config_path);
  if (!in) throw LoadError("cannot open config file: " + config_path);
  json file;
  try {
    file = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError("config file '" + config_path +
                     "' is not valid JSON: " + e.what());
  }
  json canon = default_config();
  merge_config_file(canon, file, config_path);
  for (const std::string& kv : overrides) apply_override(canon, kv);

  RunConfig rc = materialize(canon);
  rc.model.validate();
  rc.opt.validate();
  if (rc.data_train.empty()) {
    throw ConfigError("key 'data.train' must name a dataset file");
  }
  if (rc.output_dir.empty()) {
    throw ConfigError("key 'output_dir' must name a directory");
  }

  std::vector<Graph> train_set = load_dataset(rc.data_train);
  std::vector<Graph> val_set, test_set;
  if (!rc.data_val.empty()) val_set = load_dataset(rc.data_val);
  if (!rc.data_test.empty()) test_set = load_dataset(rc.data_test);
  if (train_set[0].feature_width() != rc.model.input_width) {
    throw ConfigError(
        "model.input_width is " + std::to_string(rc.model.input_width) +
        " but the train dataset carries " +
        std::to_string(train_set[0].feature_width()) + " features per node");
  }

  const std::size_t threads = threads_from_env();
  fs::create_directories(rc.output_dir);
  const fs::path out(rc.output_dir);
  {
    std::ofstream echo(out / "config.resolved.json");
    if (!echo) {
      throw Error("cannot write " + (out / "config.resolved.json").string());
    }
    echo << canon.dump(2) << "\n";
  }
  fs::remove(out / "metrics.csv");

  for (std::uint64_t seed : rc.seeds) {
    ModelConfig mc = rc.model;
    mc.seed = rc.model.seed + seed;
    Model model(mc);

    TrainConfig tc;
    tc.opt = rc.opt;
    tc.batch_size = rc.batch_size;
    tc.epochs = rc.epochs;
    tc.run_seed = seed;
    tc.clip_norm = rc.clip_norm;
    tc.eval_threads = threads;
    tc.metrics_csv = (out / "metrics.csv").string();
    tc.best_checkpoint = (out / "best.ckpt").string();
    tc.last_checkpoint = (out / "last.ckpt").string();
    TrainResult res = train_loop(model, train_set, val_set, test_set, tc);

    const std::string metric = primary_metric(rc.model.head);
    std::printf("seed %llu: steps %ld best_epoch %ld best %s %s",
                static_cast<unsigned long long>(seed), res.steps,
                res.best_epoch, metric.c_str(),
                format_g17(res.best_val.metric(metric)).c_str());
    if (!test_set.empty()) {
      std::printf(" test %s %s", metric.c_str(),
                  format_g17(res.test_at_best.metric(metric)).c_str());
    }
    std::printf("\n");
  }
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path,
             std::size_t batch_size, const std::string& csv,
             const std::string& task) {
  LoadedCheckpoint loaded = load_checkpoint(ckpt_path);
  if (!task.empty() &&
      head_kind_from_string(task) != loaded.model.config().head) {
    throw ConfigError("checkpoint head '" +
                      to_string(loaded.model.config().head) +
                      "' does not match requested task '" + task + "'");
  }
  std::vector<Graph> data = load_dataset(data_path);
  if (data[0].feature_width() != loaded.model.config().input_width) {
    throw ConfigError(
        "model.input_width is " +
        std::to_string(loaded.model.config().input_width) +
        " but the dataset carries " +
        std::to_string(data[0].feature_width()) + " features per node");
  }
  EvalResult res =
      evaluate(loaded.model, data, batch_size, threads_from_env());

  std::string line = "loss " + format_g17(res.loss);
  for (const auto& [name, value] : res.metrics) {
    line += " " + name + " " + format_g17(value);
  }
  std::printf("%s\n", line.c_str());

  if (!csv.empty()) {
    const bool fresh = !fs::exists(csv) || fs::file_size(csv) == 0;
    std::ofstream outcsv(csv, std::ios::app);
    if (!outcsv) throw Error("cannot open metrics file '" + csv + "'");
    if (fresh) outcsv << "run_seed,epoch,split,loss,metric_name,metric_value\n";
    for (const auto& [name, value] : res.metrics) {
      outcsv << loaded.model.config().seed << "," << loaded.model.step
             << ",eval," << format_g17(res.loss) << "," << name << ","
             << format_g17(value) << "\n";
    }
  }
  return 0;
}

int cmd_verify(bool corrupt) {
  testing::corrupt_backward = corrupt;
  const std::vector<SuiteResult> suites = run_verification();
  testing::corrupt_backward = false;
  std::size_t failed = 0;
  for (const SuiteResult& s : suites) {
    std::printf("%-26s %s  max error %.3e  tolerance %.1e%s%s\n",
                s.name.c_str(), s.passed ? "pass" : "FAIL", s.max_error,
                s.tolerance, s.detail.empty() ? "" : "  ", s.detail.c_str());
    failed += s.passed ? 0 : 1;
  }
  if (failed == 0) {
    std::printf("verification passed (%zu suites)\n", suites.size());
    return 0;
  }
  std::printf("verification FAILED (%zu of %zu suites)\n", failed,
              suites.size());
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"graph representation learning with differential encoding"};
  app.require_subcommand(1);

  std::string gen_kind, gen_out;
  std::uint64_t gen_seed = 0;
  GenParams gp;
  bool gen_force = false;
  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->add_option("kind", gen_kind,
                  "dataset kind: sbm-node, cycle-vs-path, pair-contact")
      ->required();
  gen->add_option("--out", gen_out, "output dataset path")->required();
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--count", gp.num_graphs, "number of graphs");
  gen->add_option("--n", gp.size, "nodes per graph (per block for sbm-node)");
  gen->add_option("--blocks", gp.blocks, "sbm-node: number of blocks");
  gen->add_option("--p-in", gp.p_in, "sbm-node: within-block edge probability");
  gen->add_option("--p-out", gp.p_out,
                  "sbm-node: cross-block edge probability");
  gen->add_option("--noise", gp.noise, "sbm-node: feature noise scale");
  gen->add_option("--r-edge", gp.r_edge, "pair-contact: edge radius");
  gen->add_option("--r-contact", gp.r_contact, "pair-contact: contact radius");
  gen->add_flag("--force", gen_force, "overwrite an existing output file");

  std::string train_config;
  CLI::App* train = app.add_subcommand("train", "train from a config file");
  train->add_option("--config", train_config, "JSON run config")->required();
  train->allow_extras();

  std::string eval_ckpt, eval_data, eval_csv, eval_task;
  std::size_t eval_batch = 32;
  CLI::App* evalc = app.add_subcommand("eval", "evaluate a checkpoint");
  evalc->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
  evalc->add_option("--data", eval_data, "dataset path")->required();
  evalc->add_option("--batch-size", eval_batch, "evaluation batch size");
  evalc->add_option("--csv", eval_csv, "append metric rows to this CSV");
  evalc->add_option("--task", eval_task,
                    "expected head kind; fails on mismatch");

  bool corrupt = false;
  CLI::App* verifyc =
      app.add_subcommand("verify", "run the fixed-seed property suites");
  verifyc->add_flag("--corrupt-backward", corrupt)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) {
      return cmd_gen(gen_kind, gen_seed, gp, gen_out, gen_force);
    }
    if (train->parsed()) {
      return cmd_train(train_config, train->remaining());
    }
    if (evalc->parsed()) {
      return cmd_eval(eval_ckpt, eval_data, eval_batch, eval_csv, eval_task);
    }
    if (verifyc->parsed()) {
      return cmd_verify(corrupt);
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

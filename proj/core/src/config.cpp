#include "hnfl/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "hnfl/errors.hpp"
#include "hnfl/rng.hpp"
#include "hnfl/zoo.hpp"

namespace hnfl {

namespace {

using json = nlohmann::ordered_json;

struct ParseCtx {
  const std::string& text;
  const std::string& name;
};

std::int64_t line_of(const std::string& text, const std::string& key) {
  std::size_t pos = text.find('"' + key + '"');
  if (pos == std::string::npos) return 1;
  return 1 + static_cast<std::int64_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

[[noreturn]] void fail_at(const ParseCtx& ctx, const std::string& key, const std::string& msg) {
  throw config_error(ctx.name + ":" + std::to_string(line_of(ctx.text, key)) + ": " + msg);
}

void reject_unknown(const ParseCtx& ctx, const json& obj, const std::string& section,
                    const std::set<std::string>& known) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!known.count(it.key())) {
      fail_at(ctx, it.key(), "unknown key '" + it.key() + "' in " + section);
    }
  }
}

std::int64_t get_int(const ParseCtx& ctx, const json& obj, const std::string& key,
                     std::int64_t fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer()) fail_at(ctx, key, "'" + key + "' must be an integer");
  return v.get<std::int64_t>();
}

std::uint64_t get_uint(const ParseCtx& ctx, const json& obj, const std::string& key,
                       std::uint64_t fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && v.get<std::int64_t>() < 0 && !v.is_number_unsigned())) {
    fail_at(ctx, key, "'" + key + "' must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

double get_double(const ParseCtx& ctx, const json& obj, const std::string& key, double fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number()) fail_at(ctx, key, "'" + key + "' must be a number");
  return v.get<double>();
}

bool get_bool(const ParseCtx& ctx, const json& obj, const std::string& key, bool fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_boolean()) fail_at(ctx, key, "'" + key + "' must be true or false");
  return v.get<bool>();
}

std::string get_string(const ParseCtx& ctx, const json& obj, const std::string& key,
                       const std::string& fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_string()) fail_at(ctx, key, "'" + key + "' must be a string");
  return v.get<std::string>();
}

std::vector<std::string> get_string_list(const ParseCtx& ctx, const json& obj,
                                         const std::string& key,
                                         std::vector<std::string> fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_array()) fail_at(ctx, key, "'" + key + "' must be a list of strings");
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string()) fail_at(ctx, key, "'" + key + "' must be a list of strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

json preset_json(const ParseCtx& ctx, const std::string& name) {
  if (name == "cifar100-noniid1-50") {
    return json{
        {"algorithm", "pfedhn"},
        {"dataset", {{"kind", "cifar100"}, {"paths", {"cifar-100-binary/train.bin"}}}},
        {"partition", {{"scheme", "quantity_skew"}, {"classes_per_client", 10}}},
        {"clients",
         {{"count", 50}, {"archs", {"lenet", "mlp", "vgg8", "resnet10", "resnet12"}}}},
        {"round", {{"rounds", 500}, {"lambda", 0.99}}},
    };
  }
  fail_at(ctx, "preset", "unknown preset '" + name + "'");
}

/// File keys override preset keys; one level of section nesting merges.
json merge_over(json base, const json& top) {
  for (auto it = top.begin(); it != top.end(); ++it) {
    if (it.value().is_object() && base.contains(it.key()) && base.at(it.key()).is_object()) {
      for (auto inner = it.value().begin(); inner != it.value().end(); ++inner) {
        base[it.key()][inner.key()] = inner.value();
      }
    } else {
      base[it.key()] = it.value();
    }
  }
  return base;
}

bool is_blank(const std::string& text) {
  return std::all_of(text.begin(), text.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

std::string join_path(const std::string& dir, const std::string& path) {
  if (path.empty() || path.front() == '/') return path;
  if (dir.empty() || dir == ".") return path;
  if (dir.back() == '/') return dir + path;
  return dir + "/" + path;
}

const std::set<std::string> kZooNames = [] {
  std::set<std::string> s;
  for (const auto& n : zoo_names()) s.insert(n);
  return s;
}();

}  // namespace

std::vector<std::string> config_preset_names() { return {"cifar100-noniid1-50"}; }

RunConfig parse_config_text(const std::string& text, const std::string& name) {
  ParseCtx ctx{text, name};
  if (is_blank(text)) {
    throw config_error(name +
                       ": empty config; required keys: 'dataset' (section) and 'clients' with "
                       "'count'; all other keys have defaults");
  }
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t byte = e.byte > 0 ? e.byte - 1 : 0;
    byte = std::min(byte, text.size());
    std::int64_t line =
        1 + static_cast<std::int64_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
    throw config_error(name + ":" + std::to_string(line) + ": " + e.what());
  }
  if (!root.is_object()) throw config_error(name + ":1: top level must be an object");

  if (root.contains("preset")) {
    if (!root.at("preset").is_string()) fail_at(ctx, "preset", "'preset' must be a string");
    json expanded = preset_json(ctx, root.at("preset").get<std::string>());
    root.erase("preset");
    root = merge_over(std::move(expanded), root);
  }

  reject_unknown(ctx, root, "the top level",
                 {"seed", "workers", "algorithm", "dataset", "partition", "clients",
                  "global_arch", "round", "checkpoint_every", "hypernet", "outputs"});

  std::vector<std::string> missing;
  if (!root.contains("dataset")) missing.push_back("'dataset'");
  if (!root.contains("clients")) missing.push_back("'clients'");
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size(); ++i) {
      if (i) list += ", ";
      list += missing[i];
    }
    throw config_error(name + ": missing required keys: " + list +
                       "; all other keys have defaults");
  }

  RunConfig cfg;
  cfg.seed = get_uint(ctx, root, "seed", 0);
  cfg.workers = get_int(ctx, root, "workers", 0);
  if (cfg.workers < 0) fail_at(ctx, "workers", "'workers' must be non-negative");
  try {
    cfg.algorithm = algorithm_from_name(get_string(ctx, root, "algorithm", "pfedhn"));
  } catch (const config_error& e) {
    fail_at(ctx, "algorithm", e.what());
  }

  {
    const json& d = root.at("dataset");
    if (!d.is_object()) fail_at(ctx, "dataset", "'dataset' must be a section");
    reject_unknown(ctx, d, "dataset",
                   {"kind", "classes", "per_class", "dim", "spread", "paths", "images", "labels",
                    "name", "idx_classes"});
    DatasetSpec& ds = cfg.dataset;
    ds.kind = get_string(ctx, d, "kind", ds.kind);
    ds.classes = get_int(ctx, d, "classes", ds.classes);
    ds.per_class = get_int(ctx, d, "per_class", ds.per_class);
    ds.dim = get_int(ctx, d, "dim", ds.dim);
    ds.spread = get_double(ctx, d, "spread", ds.spread);
    ds.paths = get_string_list(ctx, d, "paths", ds.paths);
    ds.images = get_string(ctx, d, "images", ds.images);
    ds.labels = get_string(ctx, d, "labels", ds.labels);
    ds.name = get_string(ctx, d, "name", ds.name);
    ds.idx_classes = get_int(ctx, d, "idx_classes", ds.idx_classes);
    if (ds.kind == "synth_blobs") {
      if (ds.classes < 1) fail_at(ctx, "classes", "'classes' must be at least 1");
      if (ds.per_class < 1) fail_at(ctx, "per_class", "'per_class' must be at least 1");
      if (ds.dim < 1) fail_at(ctx, "dim", "'dim' must be at least 1");
      if (!(ds.spread > 0.0)) fail_at(ctx, "spread", "'spread' must be positive");
    } else if (ds.kind == "cifar10" || ds.kind == "cifar100") {
      if (ds.paths.empty()) fail_at(ctx, "kind", "'" + ds.kind + "' needs 'paths'");
    } else if (ds.kind == "idx") {
      if (ds.images.empty() || ds.labels.empty()) {
        fail_at(ctx, "kind", "'idx' needs 'images' and 'labels'");
      }
      if (ds.idx_classes < 0) fail_at(ctx, "idx_classes", "'idx_classes' must be non-negative");
    } else {
      fail_at(ctx, "kind", "unknown dataset kind '" + ds.kind + "'");
    }
  }

  if (root.contains("partition")) {
    const json& p = root.at("partition");
    if (!p.is_object()) fail_at(ctx, "partition", "'partition' must be a section");
    reject_unknown(ctx, p, "partition", {"scheme", "classes_per_client", "beta", "strict_coverage"});
    PartitionSpec& ps = cfg.partition;
    ps.scheme = get_string(ctx, p, "scheme", ps.scheme);
    ps.classes_per_client = get_int(ctx, p, "classes_per_client", ps.classes_per_client);
    ps.beta = get_double(ctx, p, "beta", ps.beta);
    ps.strict_coverage = get_bool(ctx, p, "strict_coverage", ps.strict_coverage);
    if (ps.scheme != "quantity_skew" && ps.scheme != "dirichlet") {
      fail_at(ctx, "scheme", "unknown partition scheme '" + ps.scheme + "'");
    }
    if (ps.classes_per_client < 1) {
      fail_at(ctx, "classes_per_client", "'classes_per_client' must be at least 1");
    }
    if (!(ps.beta > 0.0)) fail_at(ctx, "beta", "'beta' must be positive");
  }

  {
    const json& c = root.at("clients");
    if (!c.is_object()) fail_at(ctx, "clients", "'clients' must be a section");
    reject_unknown(ctx, c, "clients", {"count", "archs"});
    cfg.clients.count = get_int(ctx, c, "count", 0);
    if (cfg.clients.count < 1) fail_at(ctx, "count", "'count' must be at least 1");
    cfg.clients.archs = get_string_list(ctx, c, "archs", cfg.clients.archs);
    if (cfg.clients.archs.empty()) fail_at(ctx, "archs", "'archs' must list at least one model");
    for (const auto& a : cfg.clients.archs) {
      if (!kZooNames.count(a)) fail_at(ctx, "archs", "unknown architecture '" + a + "'");
    }
  }

  cfg.global_arch = get_string(ctx, root, "global_arch", "");
  if (!cfg.global_arch.empty() && !kZooNames.count(cfg.global_arch)) {
    fail_at(ctx, "global_arch", "unknown architecture '" + cfg.global_arch + "'");
  }

  if (root.contains("round")) {
    const json& r = root.at("round");
    if (!r.is_object()) fail_at(ctx, "round", "'round' must be a section");
    reject_unknown(ctx, r, "round",
                   {"rounds", "epochs", "participation", "lambda", "temperature",
                    "prune_fraction", "global_deployment", "separate_global_sampling", "lr",
                    "momentum", "weight_decay", "batch_size"});
    RoundConfig& rc = cfg.round;
    rc.rounds = get_int(ctx, r, "rounds", rc.rounds);
    rc.local_epochs = get_int(ctx, r, "epochs", rc.local_epochs);
    rc.participation = get_double(ctx, r, "participation", rc.participation);
    rc.lambda = get_double(ctx, r, "lambda", rc.lambda);
    rc.temperature = get_double(ctx, r, "temperature", rc.temperature);
    rc.prune_fraction = get_double(ctx, r, "prune_fraction", rc.prune_fraction);
    rc.global_deployment = get_double(ctx, r, "global_deployment", rc.global_deployment);
    rc.separate_global_sampling =
        get_bool(ctx, r, "separate_global_sampling", rc.separate_global_sampling);
    rc.client_lr = get_double(ctx, r, "lr", rc.client_lr);
    rc.client_momentum = get_double(ctx, r, "momentum", rc.client_momentum);
    rc.client_weight_decay = get_double(ctx, r, "weight_decay", rc.client_weight_decay);
    rc.batch_size = get_int(ctx, r, "batch_size", rc.batch_size);
  }
  try {
    cfg.round.validate();
  } catch (const config_error& e) {
    fail_at(ctx, "round", e.what());
  }

  cfg.checkpoint_every = get_int(ctx, root, "checkpoint_every", 0);
  if (cfg.checkpoint_every < 0) {
    fail_at(ctx, "checkpoint_every", "'checkpoint_every' must be non-negative");
  }

  if (root.contains("hypernet")) {
    const json& h = root.at("hypernet");
    if (!h.is_object()) fail_at(ctx, "hypernet", "'hypernet' must be a section");
    reject_unknown(ctx, h, "hypernet",
                   {"embedding_dim", "hidden_dim", "chunk_width", "grouping", "use_heads",
                    "shared_group_embeddings", "adam_lr"});
    HypernetConfig& hc = cfg.hypernet;
    hc.embedding_dim = get_int(ctx, h, "embedding_dim", hc.embedding_dim);
    hc.hidden_dim = get_int(ctx, h, "hidden_dim", hc.hidden_dim);
    hc.chunk_width = get_int(ctx, h, "chunk_width", hc.chunk_width);
    hc.use_heads = get_bool(ctx, h, "use_heads", hc.use_heads);
    hc.shared_group_embeddings =
        get_bool(ctx, h, "shared_group_embeddings", hc.shared_group_embeddings);
    hc.adam_lr = get_double(ctx, h, "adam_lr", hc.adam_lr);
    if (h.contains("grouping")) {
      try {
        hc.grouping = head_grouping_from_name(get_string(ctx, h, "grouping", ""));
      } catch (const config_error& e) {
        fail_at(ctx, "grouping", e.what());
      }
    }
    if (hc.embedding_dim < 1) fail_at(ctx, "embedding_dim", "'embedding_dim' must be positive");
    if (hc.hidden_dim < 1) fail_at(ctx, "hidden_dim", "'hidden_dim' must be positive");
    if (hc.chunk_width < 1) fail_at(ctx, "chunk_width", "'chunk_width' must be positive");
    if (!(hc.adam_lr > 0.0)) fail_at(ctx, "adam_lr", "'adam_lr' must be positive");
  }

  if (root.contains("outputs")) {
    const json& o = root.at("outputs");
    if (!o.is_object()) fail_at(ctx, "outputs", "'outputs' must be a section");
    reject_unknown(ctx, o, "outputs", {"metrics_csv", "resolved_config", "checkpoint"});
    OutputSpec& os = cfg.outputs;
    os.metrics_csv = get_string(ctx, o, "metrics_csv", os.metrics_csv);
    os.resolved_config = get_string(ctx, o, "resolved_config", os.resolved_config);
    os.checkpoint = get_string(ctx, o, "checkpoint", os.checkpoint);
    if (os.metrics_csv.empty() || os.resolved_config.empty() || os.checkpoint.empty()) {
      fail_at(ctx, "outputs", "output paths must not be empty");
    }
  }

  return cfg;
}

RunConfig parse_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path);
}

std::string emit_resolved_config(const RunConfig& cfg) {
  json root;
  root["seed"] = cfg.seed;
  root["workers"] = cfg.workers;
  root["algorithm"] = algorithm_name(cfg.algorithm);
  json d;
  d["kind"] = cfg.dataset.kind;
  d["classes"] = cfg.dataset.classes;
  d["per_class"] = cfg.dataset.per_class;
  d["dim"] = cfg.dataset.dim;
  d["spread"] = cfg.dataset.spread;
  d["paths"] = cfg.dataset.paths;
  d["images"] = cfg.dataset.images;
  d["labels"] = cfg.dataset.labels;
  d["name"] = cfg.dataset.name;
  d["idx_classes"] = cfg.dataset.idx_classes;
  root["dataset"] = std::move(d);
  json p;
  p["scheme"] = cfg.partition.scheme;
  p["classes_per_client"] = cfg.partition.classes_per_client;
  p["beta"] = cfg.partition.beta;
  p["strict_coverage"] = cfg.partition.strict_coverage;
  root["partition"] = std::move(p);
  json c;
  c["count"] = cfg.clients.count;
  c["archs"] = cfg.clients.archs;
  root["clients"] = std::move(c);
  root["global_arch"] = cfg.global_arch;
  json r;
  r["rounds"] = cfg.round.rounds;
  r["epochs"] = cfg.round.local_epochs;
  r["participation"] = cfg.round.participation;
  r["lambda"] = cfg.round.lambda;
  r["temperature"] = cfg.round.temperature;
  r["prune_fraction"] = cfg.round.prune_fraction;
  r["global_deployment"] = cfg.round.global_deployment;
  r["separate_global_sampling"] = cfg.round.separate_global_sampling;
  r["lr"] = cfg.round.client_lr;
  r["momentum"] = cfg.round.client_momentum;
  r["weight_decay"] = cfg.round.client_weight_decay;
  r["batch_size"] = cfg.round.batch_size;
  root["round"] = std::move(r);
  root["checkpoint_every"] = cfg.checkpoint_every;
  json h;
  h["embedding_dim"] = cfg.hypernet.embedding_dim;
  h["hidden_dim"] = cfg.hypernet.hidden_dim;
  h["chunk_width"] = cfg.hypernet.chunk_width;
  h["grouping"] = head_grouping_name(cfg.hypernet.grouping);
  h["use_heads"] = cfg.hypernet.use_heads;
  h["shared_group_embeddings"] = cfg.hypernet.shared_group_embeddings;
  h["adam_lr"] = cfg.hypernet.adam_lr;
  root["hypernet"] = std::move(h);
  json o;
  o["metrics_csv"] = cfg.outputs.metrics_csv;
  o["resolved_config"] = cfg.outputs.resolved_config;
  o["checkpoint"] = cfg.outputs.checkpoint;
  root["outputs"] = std::move(o);
  return root.dump(2) + "\n";
}

std::string data_directory() {
  const char* dir = std::getenv("HNFL_DATA_DIR");
  if (dir && *dir) return dir;
  return ".";
}

Dataset load_dataset(const DatasetSpec& spec, const std::string& data_dir, std::uint64_t seed) {
  if (spec.kind == "synth_blobs") {
    return synth_blobs(spec.classes, spec.per_class, spec.dim, spec.spread, seed);
  }
  if (spec.kind == "cifar10" || spec.kind == "cifar100") {
    bool fine = spec.kind == "cifar100";
    std::vector<Dataset> parts;
    parts.reserve(spec.paths.size());
    for (const auto& p : spec.paths) {
      parts.push_back(load_cifar_binary(join_path(data_dir, p), fine));
    }
    if (parts.size() == 1) return std::move(parts.front());
    return concat_datasets(parts, parts.front().name);
  }
  if (spec.kind == "idx") {
    return load_idx(join_path(data_dir, spec.images), join_path(data_dir, spec.labels), spec.name,
                    spec.idx_classes);
  }
  throw config_error("unknown dataset kind '" + spec.kind + "'");
}

SimulationConfig build_simulation_config(const RunConfig& cfg) {
  SimulationConfig out;
  out.dataset = load_dataset(cfg.dataset, data_directory(), mix_seed(cfg.seed, "dataset"));
  std::uint64_t part_seed = mix_seed(cfg.seed, "partition");
  if (cfg.partition.scheme == "quantity_skew") {
    out.plan = partition_quantity_skew(out.dataset, cfg.clients.count,
                                       cfg.partition.classes_per_client, part_seed,
                                       cfg.partition.strict_coverage);
  } else {
    out.plan = partition_dirichlet(out.dataset, cfg.clients.count, cfg.partition.beta, part_seed);
  }
  out.client_archs.reserve(static_cast<std::size_t>(cfg.clients.count));
  for (std::int64_t i = 0; i < cfg.clients.count; ++i) {
    const std::string& name =
        cfg.clients.archs[static_cast<std::size_t>(i) % cfg.clients.archs.size()];
    out.client_archs.push_back(make_arch(name, out.dataset.classes));
  }
  if (!cfg.global_arch.empty()) {
    out.global_arch = make_arch(cfg.global_arch, out.dataset.classes);
  }
  out.algorithm = cfg.algorithm;
  out.round = cfg.round;
  out.hypernet = cfg.hypernet;
  out.seed = cfg.seed;
  std::int64_t workers = cfg.workers;
  if (workers < 1) {
    workers = static_cast<std::int64_t>(std::thread::hardware_concurrency());
    if (workers < 1) workers = 1;
  }
  out.workers = workers;
  return out;
}

}  // namespace hnfl

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hnfl/engine.hpp"

namespace hnfl {

struct DatasetSpec {
  std::string kind = "synth_blobs";  // synth_blobs | cifar10 | cifar100 | idx
  std::int64_t classes = 10;         // synth_blobs
  std::int64_t per_class = 100;
  std::int64_t dim = 64;
  double spread = 0.25;
  std::vector<std::string> paths;    // cifar binaries, joined with the data dir
  std::string images;                // idx image file
  std::string labels;                // idx label file
  std::string name = "idx";
  std::int64_t idx_classes = 0;      // 0 infers the class count from labels
};

struct PartitionSpec {
  std::string scheme = "quantity_skew";  // quantity_skew | dirichlet
  std::int64_t classes_per_client = 2;
  double beta = 0.5;
  bool strict_coverage = false;
};

struct ClientSpec {
  std::int64_t count = 0;  // required
  std::vector<std::string> archs = {"tiny_mlp"};  // cycled over count
};

struct OutputSpec {
  std::string metrics_csv = "metrics.csv";
  std::string resolved_config = "resolved.json";
  std::string checkpoint = "run.ckpt";
};

/// A fully resolved experiment description. Every field has a value after
/// parsing; emit_resolved_config makes the resolution auditable.
struct RunConfig {
  std::uint64_t seed = 0;
  std::int64_t workers = 0;  // 0 resolves to the available cores
  Algorithm algorithm = Algorithm::pfedhn;
  DatasetSpec dataset;
  PartitionSpec partition;
  ClientSpec clients;
  std::string global_arch;   // empty selects the smallest client model
  RoundConfig round;
  std::int64_t checkpoint_every = 0;  // 0 writes only the final checkpoint
  HypernetConfig hypernet;
  OutputSpec outputs;
};

/// Parses and validates config text. Unknown keys, type mismatches and
/// out-of-range values raise config_error anchored as "<name>:<line>: ...".
/// A "preset" key expands first; explicit keys override the preset.
RunConfig parse_config_text(const std::string& text, const std::string& name);
RunConfig parse_config(const std::string& path);

/// JSON with every field explicit, in a fixed key order. Reparsing the
/// emission yields an equal configuration.
std::string emit_resolved_config(const RunConfig& cfg);

std::vector<std::string> config_preset_names();

/// Directory prepended to relative dataset paths: $HNFL_DATA_DIR or ".".
std::string data_directory();

/// seed drives synthetic generation only; file-backed kinds ignore it.
Dataset load_dataset(const DatasetSpec& spec, const std::string& data_dir, std::uint64_t seed);

/// Loads the dataset, partitions it with the sub-seed fanout of cfg.seed,
/// and assembles the engine configuration. workers resolves to at least 1.
SimulationConfig build_simulation_config(const RunConfig& cfg);

}  // namespace hnfl

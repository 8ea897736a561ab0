#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "hnfl/tensor.hpp"

namespace hnfl {

/// Labeled examples with features stored as one tensor whose first dimension
/// indexes examples. Pixel loaders scale raw bytes to [0, 1].
struct Dataset {
  std::string name;
  std::int64_t classes = 0;
  Tensor features;
  std::vector<std::int64_t> labels;

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
  /// Nonempty, labels in [0, classes), feature count matches label count.
  void validate() const;
};

/// Features of one example set gathered into a new first dimension.
Tensor gather_features(const Dataset& ds, const std::vector<std::int64_t>& indices);
std::vector<std::int64_t> gather_labels(const Dataset& ds,
                                        const std::vector<std::int64_t>& indices);

/// Reinterprets per-example feature geometry; element count must match.
Dataset reshape_features(Dataset ds, const std::vector<std::int64_t>& example_shape);

/// Concatenates datasets with identical class counts and feature geometry.
Dataset concat_datasets(const std::vector<Dataset>& parts, std::string name);

struct ClientIndices {
  std::vector<std::int64_t> train;
  std::vector<std::int64_t> test;
};

/// Deterministic assignment of dataset indices to clients. Rebuilding with
/// the same scheme and seed reproduces the plan byte-for-byte.
struct PartitionPlan {
  std::string scheme;
  std::uint64_t seed = 0;
  std::vector<ClientIndices> clients;

  std::int64_t client_count() const { return static_cast<std::int64_t>(clients.size()); }
};

/// Label-skew partition: every client draws classes_per_client distinct
/// classes; each class's samples are split among its selectors proportional
/// to per-client weights drawn uniformly from [0.4, 0.6], rounded by largest
/// remainder. Classes no client drew are repaired by swaps that preserve
/// each client's class-set size, so every client's label set has exactly
/// classes_per_client labels whenever every class has enough samples. With
/// strict_coverage the call fails unless n_clients * classes_per_client can
/// cover every class.
PartitionPlan partition_quantity_skew(const Dataset& ds, std::int64_t n_clients,
                                      std::int64_t classes_per_client, std::uint64_t seed,
                                      bool strict_coverage = false);

/// Distribution-skew partition: per class, client shares are drawn from a
/// symmetric Dirichlet with concentration beta and rounded by largest
/// remainder. Clients left empty steal one sample from the largest client.
PartitionPlan partition_dirichlet(const Dataset& ds, std::int64_t n_clients, double beta,
                                  std::uint64_t seed);

/// Splits each client's pool 75/25 into train/test, stratified by label,
/// with the train total pinned to round(0.75 * pool size). Called by the
/// partition builders; exposed for custom pools.
ClientIndices split_train_test(const Dataset& ds, std::vector<std::int64_t> pool,
                               std::uint64_t seed);

/// Checks the plan against a dataset: no index repeats anywhere, all indices
/// in range, every client's train share is 75% of its pool within one
/// sample. Throws on violation.
void validate_partition(const PartitionPlan& plan, const Dataset& ds);

/// Structured-text round-trip for replay.
void save_partition_plan(const PartitionPlan& plan, std::ostream& out);
PartitionPlan load_partition_plan(std::istream& in);
void save_partition_plan_file(const PartitionPlan& plan, const std::string& path);
PartitionPlan load_partition_plan_file(const std::string& path);

/// Big-endian IDX (ubyte) tensor: magic 0x00 0x00 0x08 ndim, ndim 32-bit
/// dims, then raw bytes. The file length must match the header exactly.
Tensor load_idx_tensor(const std::string& path);

/// Pairs an IDX image file with an IDX label file. Class count is inferred
/// from the largest label unless given.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::string name, std::int64_t classes = 0);

/// Binary batch rows: one label byte plus 3072 pixel bytes, or with
/// fine_labels a coarse and a fine label byte before the pixels (the fine
/// label is kept and the class count is 100).
Dataset load_cifar_binary(const std::string& path, bool fine_labels);

/// Gaussian clusters around unit-norm class means; features [C*per_class, dim],
/// labels in class-major blocks.
Dataset synth_blobs(std::int64_t classes, std::int64_t per_class, std::int64_t dim,
                    double spread, std::uint64_t seed);

/// Gamma(shape, 1) variate from the shared generator; supports shape < 1.
double gamma_sample(Rng& rng, double shape);

}  // namespace hnfl

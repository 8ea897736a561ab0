#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hnfl/arch.hpp"
#include "hnfl/data.hpp"
#include "hnfl/hypernet.hpp"
#include "hnfl/model.hpp"

namespace hnfl {

enum class Algorithm { pfedhn, pfedhn_g, pfedhn_gd, fedavg, local_only };

Algorithm algorithm_from_name(const std::string& name);
std::string algorithm_name(Algorithm a);

/// Bytes one serialized parameter value / sparse index occupies on the wire.
constexpr std::int64_t kWireValueBytes = 4;
constexpr std::int64_t kWireIndexBytes = 4;

/// ceil(fraction * n) with decimal literals like 0.3 snapped back to the
/// rational they denote, so 0.3 * 10 counts as 3 rather than 4.
std::int64_t scaled_count(double fraction, std::int64_t n);

/// Keeps the ceil(fraction * count) largest-magnitude entries (ties broken
/// toward the lower index) and zeroes the rest in place. Returns how many
/// entries were kept. fraction must lie in (0, 1).
std::int64_t prune_delta(std::vector<double>& delta, double fraction);

struct RoundConfig {
  std::int64_t rounds = 100;
  std::int64_t local_epochs = 2;
  double participation = 1.0;       // fraction of clients sampled per round
  double lambda = 0.99;             // CE weight in the distillation loss
  double temperature = 10.0;
  double prune_fraction = 0.0;      // 0 disables upload pruning
  double global_deployment = 1.0;   // fraction of clients holding the global model
  bool separate_global_sampling = false;
  double client_lr = 1e-3;
  double client_momentum = 0.9;
  double client_weight_decay = 1e-4;
  std::int64_t batch_size = 64;

  void validate() const;
};

struct MetricsRow {
  std::int64_t round = 0;
  std::string phase;
  std::int64_t client_id = 0;
  double accuracy = 0.0;
  double loss = 0.0;
  std::int64_t uplink_bytes = 0;
  std::int64_t downlink_bytes = 0;
};

std::string metrics_csv_header();
std::string metrics_csv_line(const MetricsRow& row);

struct RoundMetrics {
  std::int64_t round = 0;
  std::vector<MetricsRow> rows;      // ordered by (phase emission, client id)
  double mean_accuracy = 0.0;        // over the round's final phase rows
  double seconds_global = 0.0;
  double seconds_personal = 0.0;
};

struct SimulationConfig {
  Dataset dataset;
  PartitionPlan plan;
  std::vector<ArchitectureSpec> client_archs;  // one per plan client
  Algorithm algorithm = Algorithm::pfedhn;
  RoundConfig round;
  HypernetConfig hypernet;
  /// Global-model architecture for the distillation algorithms; defaults to
  /// the architecture of the client with the fewest served parameters.
  std::optional<ArchitectureSpec> global_arch;
  std::uint64_t seed = 0;
  std::int64_t workers = 1;
  /// Absolute id of the first client; later clients follow consecutively.
  std::int64_t client_id_base = 0;
  /// Serialized server network to start from instead of a fresh one.
  std::string pretrained_hypernet;
  HypernetFreeze freeze = HypernetFreeze::none;
  /// Phase label for client rows in place of "personal" (e.g. "holdout").
  std::string phase_tag_override;
};

/// Single-process federated run: one server, all clients simulated in
/// process. Client training inside a round is independent and runs on a
/// worker pool; results are applied sequentially in ascending client id, so
/// the outcome does not depend on the worker count.
class Simulation {
 public:
  explicit Simulation(SimulationConfig cfg);
  ~Simulation();
  Simulation(Simulation&&) noexcept;
  Simulation& operator=(Simulation&&) noexcept;

  RoundMetrics run_round();

  std::int64_t next_round() const { return next_round_; }
  std::int64_t client_count() const;
  const SimulationConfig& config() const { return cfg_; }

  /// Participants of a given round, ascending local index. Pure function of
  /// (seed, round), so callers can predict or replay the draw.
  std::vector<std::int64_t> sampled_participants(std::int64_t round) const;

  const Hypernetwork* hypernet() const { return hn_.get(); }
  Hypernetwork* hypernet() { return hn_.get(); }
  const Model* global_model() const { return global_model_.get(); }
  const Model& client_model(std::int64_t local_id) const;
  std::int64_t client_weight(std::int64_t local_id) const;

  /// Serialized server network, suitable for SimulationConfig::pretrained_hypernet.
  std::string hypernet_blob() const;

  void save_checkpoint(std::ostream& out) const;
  void save_checkpoint_file(const std::string& path) const;
  /// Restores state produced by save_checkpoint for an identically
  /// configured simulation; seed, algorithm and fleet shape must match.
  void load_checkpoint(std::istream& in);
  void load_checkpoint_file(const std::string& path);

 private:
  struct ClientRuntime;
  struct TrainResult;

  std::vector<std::int64_t> sample(std::int64_t round, const char* tag) const;
  std::int64_t deployed_count() const;
  void make_batch(const ClientRuntime& c, const std::vector<std::int64_t>& indices,
                  std::int64_t start, std::int64_t count, Tensor& x,
                  std::vector<std::int64_t>& labels) const;
  void train_client_model(Model& m, const ClientRuntime& c, std::int64_t round, const char* tag,
                          Model* teacher, double lambda) const;
  EvalResult eval_on_test(const ClientRuntime& c, Model& m) const;
  std::string personal_tag() const;

  void round_hypernet(std::int64_t round, RoundMetrics& out, bool with_global);
  void round_fedavg(std::int64_t round, RoundMetrics& out);
  void round_local(std::int64_t round, RoundMetrics& out);

  SimulationConfig cfg_;
  std::vector<ClientRuntime> clients_;
  std::unique_ptr<Hypernetwork> hn_;
  std::optional<ArchitectureSpec> global_arch_;
  std::unique_ptr<Model> global_model_;
  std::int64_t next_round_ = 1;
  std::int64_t round_offset_ = 0;
};

}  // namespace hnfl

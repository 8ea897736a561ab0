#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "hnfl/arch.hpp"
#include "hnfl/ops.hpp"
#include "hnfl/rng.hpp"
#include "hnfl/tensor.hpp"

namespace hnfl {

/// How clients are assigned to shared output heads.
///   by_chunk_count: one head per distinct chunk count (the default).
///   by_param_count: one head per distinct flat parameter count.
///   per_client:     every client gets a private head.
enum class HeadGrouping { by_chunk_count, by_param_count, per_client };

HeadGrouping head_grouping_from_name(const std::string& name);
std::string head_grouping_name(HeadGrouping g);

/// Which parts of the server network stay fixed during generalization runs.
///   embeddings_only: extractor and every head frozen; only embeddings move.
///   new_head:        extractor frozen; heads created after the freeze train.
enum class HypernetFreeze { none, embeddings_only, new_head };

HypernetFreeze hypernet_freeze_from_name(const std::string& name);
std::string hypernet_freeze_name(HypernetFreeze f);

struct HypernetConfig {
  std::int64_t embedding_dim = 64;  // width of one embedding row
  std::int64_t hidden_dim = 100;    // extractor hidden width
  std::int64_t chunk_width = 3072;  // output entries per chunk
  HeadGrouping grouping = HeadGrouping::by_chunk_count;
  // false: the extractor's final layer maps straight to chunk_width and no
  // heads exist (ablation configuration).
  bool use_heads = true;
  // true: clients in the same head group read and train one shared embedding
  // matrix. The global slot always keeps a private embedding.
  bool shared_group_embeddings = false;
  double adam_lr = 2e-4;
};

/// ceil(param_count / chunk_width); the number of embedding rows and head
/// channels a flat vector of that size needs.
std::int64_t chunk_count_for(std::int64_t param_count, std::int64_t chunk_width);

/// A parameter tensor with its own optimizer moments.
struct HnParam {
  Tensor value;
  AdamSlot adam;
};

/// One output head shared by every client with the same group key. Channel j
/// maps the extractor feature of embedding row j to one chunk of the output.
struct HeadGroup {
  std::int64_t key = 0;
  std::int64_t chunks = 0;
  bool frozen = false;
  std::vector<HnParam> channel_w;  // each [hidden_dim, chunk_width]
  std::vector<HnParam> channel_b;  // each [chunk_width]
  std::vector<std::int64_t> members;
};

/// Gradients of s = <generated params, upstream> for one client's path:
/// the extractor tensors, that client's group channels, and its embedding.
struct HypernetGrads {
  std::vector<Tensor> extractor;
  std::vector<Tensor> head_w;
  std::vector<Tensor> head_b;
  Tensor embedding;  // [chunks, embedding_dim]
};

/// Server network that turns per-client embedding matrices into flat model
/// parameter vectors and absorbs client deltas through exact vector-Jacobian
/// products. Generation is const; updates must be applied from one thread in
/// a deterministic order.
class Hypernetwork {
public:
  /// Client id reserved for the global-model slot.
  static constexpr std::int64_t kGlobalSlot = -1;

  struct Registration {
    std::int64_t chunks = 0;
    std::int64_t group_key = 0;
  };

  struct GlobalDelta {
    std::int64_t client_id = 0;
    std::vector<double> delta;
    double weight = 1.0;  // example count m_i
  };

  Hypernetwork(const HypernetConfig& cfg, std::uint64_t seed);

  /// Registers a client that needs param_count generated values. Joins an
  /// existing head group when the key matches, otherwise creates one. A
  /// positive model_layer_count enables the depth advisory: chunk counts at
  /// or below the model's layer count tend to underfit, and a warning is
  /// recorded. arch_name is stamped onto generated FlatParams.
  Registration register_client(std::int64_t client_id, std::int64_t param_count,
                               std::int64_t model_layer_count = 0, std::string arch_name = "");

  /// Registers the global-model slot with its own embedding. Reuses the head
  /// group matching its parameter count when one exists.
  Registration register_global(std::int64_t param_count, std::string arch_name = "");

  bool has_client(std::int64_t client_id) const;
  bool has_global() const { return has_client(kGlobalSlot); }
  /// Smallest registered client parameter count. Errors with no clients.
  std::int64_t min_client_param_count() const;
  std::int64_t param_count_of(std::int64_t client_id) const;
  std::int64_t chunk_count_of(std::int64_t client_id) const;
  std::int64_t group_key_of(std::int64_t client_id) const;
  bool same_head(std::int64_t a, std::int64_t b) const;

  /// Starts a new round; serve marks from earlier rounds become stale.
  void begin_round(std::int64_t round);
  std::int64_t round() const { return round_; }

  /// Generates and records that the client was served this round, which
  /// arms apply_personal_update.
  FlatParams serve_client(std::int64_t client_id);
  FlatParams serve_global();
  /// Generation without a serve mark, for evaluation.
  FlatParams peek_client(std::int64_t client_id) const;
  FlatParams peek_global() const;

  /// Gradient of <generated params for this client, upstream> with respect
  /// to every live tensor on the client's path. upstream must have exactly
  /// param_count_of(client_id) entries.
  HypernetGrads vjp_for_client(std::int64_t client_id, const std::vector<double>& upstream) const;

  /// delta = trained params minus served params. Descends along -delta:
  /// one optimizer step on the extractor, the client's head group, and its
  /// embedding, honoring freezes. All-zero deltas leave every byte fixed.
  void apply_personal_update(std::int64_t client_id, const std::vector<double>& delta);

  /// Single descent step along the weighted average -sum(w_i/W * delta_i)
  /// through the global slot. Weights are example counts.
  void apply_global_update(const std::vector<GlobalDelta>& deltas);

  void freeze_for_generalization(HypernetFreeze mode);
  HypernetFreeze freeze_mode() const { return freeze_; }

  const HypernetConfig& config() const { return cfg_; }
  /// Optimizer step size for later updates. Serialized state keeps geometry
  /// and moments; the step size follows the active run.
  void set_adam_lr(double lr) { cfg_.adam_lr = lr; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  std::vector<Tensor*> extractor_tensors();
  std::vector<const Tensor*> extractor_tensors() const;
  std::vector<std::int64_t> group_keys() const;
  HeadGroup& group(std::int64_t key);
  const HeadGroup& group(std::int64_t key) const;
  Tensor& embedding_of(std::int64_t client_id);
  const Tensor& embedding_of(std::int64_t client_id) const;

  /// Content hashes over parameter values (optimizer state excluded).
  std::uint64_t extractor_hash() const;
  std::uint64_t heads_hash() const;
  std::uint64_t embeddings_hash() const;
  std::uint64_t state_hash() const;

  /// Versioned binary state dump; load(save(x)) reproduces x byte-exactly,
  /// including optimizer moments and the init stream position.
  void save(std::ostream& out) const;
  static Hypernetwork load(std::istream& in);

private:
  struct ClientSlot {
    std::int64_t param_count = 0;
    std::int64_t chunks = 0;
    std::int64_t group_key = 0;
    std::int64_t embedding_id = 0;
    std::string arch_name;
    std::int64_t last_served_round = -1;
  };

  const ClientSlot& slot(std::int64_t client_id) const;
  std::int64_t group_key_for(std::int64_t client_id, std::int64_t param_count,
                             std::int64_t chunks) const;
  HeadGroup& ensure_group(std::int64_t key, std::int64_t chunks);
  HnParam& embedding_param(std::int64_t embedding_id);
  const HnParam& embedding_param(std::int64_t embedding_id) const;
  Registration register_slot(std::int64_t client_id, std::int64_t param_count,
                             std::int64_t model_layer_count, std::string arch_name);
  FlatParams generate(const ClientSlot& s) const;
  HypernetGrads vjp(const ClientSlot& s, const std::vector<double>& upstream) const;
  void descend(const ClientSlot& s, const HypernetGrads& g);

  HypernetConfig cfg_;
  std::uint64_t base_seed_ = 0;
  Rng rng_;  // extractor and head creation stream
  HypernetFreeze freeze_ = HypernetFreeze::none;
  std::int64_t round_ = 0;
  std::vector<HnParam> extractor_;  // w1 b1 w2 b2 w3 b3
  std::map<std::int64_t, HeadGroup> groups_;
  std::map<std::int64_t, ClientSlot> clients_;
  std::map<std::int64_t, HnParam> embeddings_;
  std::vector<std::string> warnings_;
};

}  // namespace hnfl

#include "hnfl/hypernet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "hnfl/errors.hpp"
#include "hnfl/serial.hpp"

namespace hnfl {

namespace {

constexpr char kMagic[8] = {'H', 'N', 'F', 'L', 'H', 'N', 'E', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_param(std::ostream& out, const HnParam& p) {
  write_tensor(out, p.value);
  write_tensor(out, p.adam.m);
  write_tensor(out, p.adam.u);
  write_pod<std::int64_t>(out, p.adam.t);
}

HnParam read_param(std::istream& in) {
  HnParam p;
  p.value = read_tensor(in);
  p.adam.m = read_tensor(in);
  p.adam.u = read_tensor(in);
  p.adam.t = read_pod<std::int64_t>(in);
  return p;
}

struct Fnv {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  void bytes(const void* p, std::size_t n) {
    auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  }
  void i64(std::int64_t v) { bytes(&v, sizeof(v)); }
  void tensor(const Tensor& t) {
    i64(static_cast<std::int64_t>(t.shape.size()));
    for (auto d : t.shape) i64(d);
    bytes(t.data.data(), t.data.size() * sizeof(double));
  }
};

bool all_zero(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

Tensor row_of(const Tensor& m, std::int64_t r) {
  std::int64_t w = m.shape[1];
  Tensor out = Tensor::zeros({1, w});
  std::copy(m.data.begin() + r * w, m.data.begin() + (r + 1) * w, out.data.begin());
  return out;
}

}  // namespace

HeadGrouping head_grouping_from_name(const std::string& name) {
  if (name == "by_chunk_count") return HeadGrouping::by_chunk_count;
  if (name == "by_param_count") return HeadGrouping::by_param_count;
  if (name == "per_client") return HeadGrouping::per_client;
  throw config_error("unknown head grouping '" + name + "'");
}

std::string head_grouping_name(HeadGrouping g) {
  switch (g) {
    case HeadGrouping::by_chunk_count: return "by_chunk_count";
    case HeadGrouping::by_param_count: return "by_param_count";
    case HeadGrouping::per_client: return "per_client";
  }
  throw config_error("invalid head grouping value");
}

HypernetFreeze hypernet_freeze_from_name(const std::string& name) {
  if (name == "none") return HypernetFreeze::none;
  if (name == "embeddings-only") return HypernetFreeze::embeddings_only;
  if (name == "new-head") return HypernetFreeze::new_head;
  throw config_error("unknown freeze mode '" + name + "'");
}

std::string hypernet_freeze_name(HypernetFreeze f) {
  switch (f) {
    case HypernetFreeze::none: return "none";
    case HypernetFreeze::embeddings_only: return "embeddings-only";
    case HypernetFreeze::new_head: return "new-head";
  }
  throw config_error("invalid freeze mode value");
}

std::int64_t chunk_count_for(std::int64_t param_count, std::int64_t chunk_width) {
  if (param_count < 1) throw config_error("parameter count must be positive");
  if (chunk_width < 1) throw config_error("chunk width must be positive");
  return (param_count + chunk_width - 1) / chunk_width;
}

Hypernetwork::Hypernetwork(const HypernetConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), base_seed_(seed), rng_(mix_seed(seed, "hypernet")) {
  if (cfg_.embedding_dim < 1 || cfg_.hidden_dim < 1 || cfg_.chunk_width < 1) {
    throw config_error("hypernetwork dimensions must be positive");
  }
  std::int64_t d = cfg_.embedding_dim;
  std::int64_t h = cfg_.hidden_dim;
  std::int64_t out3 = cfg_.use_heads ? h : cfg_.chunk_width;
  double b1 = 1.0 / std::sqrt(static_cast<double>(d));
  double b2 = 1.0 / std::sqrt(static_cast<double>(h));
  extractor_.resize(6);
  extractor_[0].value = Tensor::rand_uniform({d, h}, rng_, b1);
  extractor_[1].value = Tensor::rand_uniform({h}, rng_, b1);
  extractor_[2].value = Tensor::rand_uniform({h, h}, rng_, b2);
  extractor_[3].value = Tensor::rand_uniform({h}, rng_, b2);
  extractor_[4].value = Tensor::rand_uniform({h, out3}, rng_, b2);
  extractor_[5].value = Tensor::rand_uniform({out3}, rng_, b2);
}

std::int64_t Hypernetwork::group_key_for(std::int64_t client_id, std::int64_t param_count,
                                         std::int64_t chunks) const {
  switch (cfg_.grouping) {
    case HeadGrouping::by_chunk_count: return chunks;
    case HeadGrouping::by_param_count: return param_count;
    case HeadGrouping::per_client: return client_id;
  }
  throw config_error("invalid head grouping value");
}

HeadGroup& Hypernetwork::ensure_group(std::int64_t key, std::int64_t chunks) {
  auto it = groups_.find(key);
  if (it != groups_.end()) {
    require_shape(it->second.chunks == chunks, "head group chunk count mismatch");
    return it->second;
  }
  HeadGroup g;
  g.key = key;
  g.chunks = chunks;
  g.frozen = freeze_ == HypernetFreeze::embeddings_only;
  if (cfg_.use_heads) {
    double bound = 1.0 / std::sqrt(static_cast<double>(cfg_.hidden_dim));
    for (std::int64_t j = 0; j < chunks; ++j) {
      HnParam w, b;
      w.value = Tensor::rand_uniform({cfg_.hidden_dim, cfg_.chunk_width}, rng_, bound);
      b.value = Tensor::rand_uniform({cfg_.chunk_width}, rng_, bound);
      g.channel_w.push_back(std::move(w));
      g.channel_b.push_back(std::move(b));
    }
  }
  return groups_.emplace(key, std::move(g)).first->second;
}

HnParam& Hypernetwork::embedding_param(std::int64_t embedding_id) {
  return embeddings_.at(embedding_id);
}

const HnParam& Hypernetwork::embedding_param(std::int64_t embedding_id) const {
  return embeddings_.at(embedding_id);
}

Hypernetwork::Registration Hypernetwork::register_slot(std::int64_t client_id,
                                                       std::int64_t param_count,
                                                       std::int64_t model_layer_count,
                                                       std::string arch_name) {
  if (param_count < 1) throw config_error("client parameter count must be positive");
  if (clients_.count(client_id)) {
    throw config_error("client " + std::to_string(client_id) + " already registered");
  }
  std::int64_t chunks = chunk_count_for(param_count, cfg_.chunk_width);
  if (model_layer_count > 0 && chunks <= model_layer_count) {
    warnings_.push_back("client " + std::to_string(client_id) + ": chunk count " +
                        std::to_string(chunks) + " does not exceed model layer count " +
                        std::to_string(model_layer_count) +
                        "; generation quality degrades below one chunk per layer");
  }
  std::int64_t key = group_key_for(client_id, param_count, chunks);
  HeadGroup& g = ensure_group(key, chunks);
  g.members.push_back(client_id);

  std::int64_t embedding_id = client_id;
  if (cfg_.shared_group_embeddings && client_id != kGlobalSlot) embedding_id = key;
  if (!embeddings_.count(embedding_id)) {
    Rng erng(mix_seed(base_seed_, "embedding", static_cast<std::uint64_t>(embedding_id)));
    HnParam e;
    e.value = Tensor::randn({chunks, cfg_.embedding_dim}, erng,
                            std::sqrt(1.0 / static_cast<double>(cfg_.embedding_dim)));
    embeddings_.emplace(embedding_id, std::move(e));
  } else {
    require_shape(embeddings_.at(embedding_id).value.shape[0] == chunks,
                  "shared embedding chunk count mismatch");
  }

  ClientSlot s;
  s.param_count = param_count;
  s.chunks = chunks;
  s.group_key = key;
  s.embedding_id = embedding_id;
  s.arch_name = std::move(arch_name);
  clients_.emplace(client_id, std::move(s));
  return {chunks, key};
}

Hypernetwork::Registration Hypernetwork::register_client(std::int64_t client_id,
                                                         std::int64_t param_count,
                                                         std::int64_t model_layer_count,
                                                         std::string arch_name) {
  if (client_id < 0) throw config_error("client ids must be non-negative");
  return register_slot(client_id, param_count, model_layer_count, std::move(arch_name));
}

Hypernetwork::Registration Hypernetwork::register_global(std::int64_t param_count,
                                                         std::string arch_name) {
  return register_slot(kGlobalSlot, param_count, 0, std::move(arch_name));
}

bool Hypernetwork::has_client(std::int64_t client_id) const {
  return clients_.count(client_id) != 0;
}

const Hypernetwork::ClientSlot& Hypernetwork::slot(std::int64_t client_id) const {
  auto it = clients_.find(client_id);
  if (it == clients_.end()) {
    throw config_error("unknown client " + std::to_string(client_id));
  }
  return it->second;
}

std::int64_t Hypernetwork::min_client_param_count() const {
  std::int64_t best = -1;
  for (const auto& [id, s] : clients_) {
    if (id == kGlobalSlot) continue;
    if (best < 0 || s.param_count < best) best = s.param_count;
  }
  if (best < 0) throw config_error("no clients registered");
  return best;
}

std::int64_t Hypernetwork::param_count_of(std::int64_t client_id) const {
  return slot(client_id).param_count;
}

std::int64_t Hypernetwork::chunk_count_of(std::int64_t client_id) const {
  return slot(client_id).chunks;
}

std::int64_t Hypernetwork::group_key_of(std::int64_t client_id) const {
  return slot(client_id).group_key;
}

bool Hypernetwork::same_head(std::int64_t a, std::int64_t b) const {
  return slot(a).group_key == slot(b).group_key;
}

void Hypernetwork::begin_round(std::int64_t round) {
  if (round < round_) throw config_error("round numbers must not decrease");
  round_ = round;
}

FlatParams Hypernetwork::generate(const ClientSlot& s) const {
  const Tensor& V = embedding_param(s.embedding_id).value;
  DenseCache c1, c2, c3;
  ReluCache r1, r2;
  Tensor a1 = relu_forward(
      dense_forward(V, extractor_[0].value, extractor_[1].value, c1), r1);
  Tensor a2 = relu_forward(
      dense_forward(a1, extractor_[2].value, extractor_[3].value, c2), r2);
  Tensor f = dense_forward(a2, extractor_[4].value, extractor_[5].value, c3);

  FlatParams out;
  out.arch_name = s.arch_name;
  out.values.resize(static_cast<std::size_t>(s.param_count));
  const HeadGroup& g = groups_.at(s.group_key);
  std::int64_t n = cfg_.chunk_width;
  for (std::int64_t j = 0; j < s.chunks; ++j) {
    std::int64_t take = std::min(n, s.param_count - j * n);
    if (cfg_.use_heads) {
      DenseCache ch;
      Tensor chunk = dense_forward(row_of(f, j), g.channel_w[static_cast<std::size_t>(j)].value,
                                   g.channel_b[static_cast<std::size_t>(j)].value, ch);
      std::copy(chunk.data.begin(), chunk.data.begin() + take,
                out.values.begin() + j * n);
    } else {
      std::copy(f.data.begin() + j * n, f.data.begin() + j * n + take,
                out.values.begin() + j * n);
    }
  }
  return out;
}

FlatParams Hypernetwork::serve_client(std::int64_t client_id) {
  const ClientSlot& s = slot(client_id);
  clients_.at(client_id).last_served_round = round_;
  return generate(s);
}

FlatParams Hypernetwork::serve_global() { return serve_client(kGlobalSlot); }

FlatParams Hypernetwork::peek_client(std::int64_t client_id) const {
  return generate(slot(client_id));
}

FlatParams Hypernetwork::peek_global() const { return peek_client(kGlobalSlot); }

HypernetGrads Hypernetwork::vjp(const ClientSlot& s, const std::vector<double>& upstream) const {
  require_shape(static_cast<std::int64_t>(upstream.size()) == s.param_count,
                "upstream gradient length does not match client parameter count");
  const Tensor& V = embedding_param(s.embedding_id).value;
  DenseCache c1, c2, c3;
  ReluCache r1, r2;
  Tensor a1 = relu_forward(
      dense_forward(V, extractor_[0].value, extractor_[1].value, c1), r1);
  Tensor a2 = relu_forward(
      dense_forward(a1, extractor_[2].value, extractor_[3].value, c2), r2);
  Tensor f = dense_forward(a2, extractor_[4].value, extractor_[5].value, c3);

  const HeadGroup& g = groups_.at(s.group_key);
  std::int64_t n = cfg_.chunk_width;
  HypernetGrads grads;
  // Entries of the final chunk beyond the client's parameter count carry
  // zero upstream gradient.
  Tensor grad_f = Tensor::zeros(f.shape);
  for (std::int64_t j = 0; j < s.chunks; ++j) {
    std::int64_t take = std::min(n, s.param_count - j * n);
    Tensor uj = Tensor::zeros({1, n});
    std::copy(upstream.begin() + j * n, upstream.begin() + j * n + take, uj.data.begin());
    if (cfg_.use_heads) {
      DenseCache ch;
      dense_forward(row_of(f, j), g.channel_w[static_cast<std::size_t>(j)].value,
                    g.channel_b[static_cast<std::size_t>(j)].value, ch);
      Tensor gf_row, gw, gb;
      dense_backward(uj, ch, gf_row, gw, gb);
      std::copy(gf_row.data.begin(), gf_row.data.end(),
                grad_f.data.begin() + j * f.shape[1]);
      grads.head_w.push_back(std::move(gw));
      grads.head_b.push_back(std::move(gb));
    } else {
      std::copy(uj.data.begin(), uj.data.end(), grad_f.data.begin() + j * n);
    }
  }

  Tensor g_a2, gw3, gb3;
  dense_backward(grad_f, c3, g_a2, gw3, gb3);
  Tensor g_z2 = relu_backward(g_a2, r2);
  Tensor g_a1, gw2, gb2;
  dense_backward(g_z2, c2, g_a1, gw2, gb2);
  Tensor g_z1 = relu_backward(g_a1, r1);
  Tensor g_v, gw1, gb1;
  dense_backward(g_z1, c1, g_v, gw1, gb1);

  grads.extractor = {std::move(gw1), std::move(gb1), std::move(gw2),
                     std::move(gb2), std::move(gw3), std::move(gb3)};
  grads.embedding = std::move(g_v);
  return grads;
}

HypernetGrads Hypernetwork::vjp_for_client(std::int64_t client_id,
                                           const std::vector<double>& upstream) const {
  return vjp(slot(client_id), upstream);
}

void Hypernetwork::descend(const ClientSlot& s, const HypernetGrads& g) {
  double lr = cfg_.adam_lr;
  if (freeze_ == HypernetFreeze::none) {
    for (std::size_t i = 0; i < extractor_.size(); ++i) {
      adam_step(extractor_[i].value, g.extractor[i], extractor_[i].adam, lr, 0.9, 0.999, 1e-8);
    }
  }
  HeadGroup& grp = groups_.at(s.group_key);
  if (cfg_.use_heads && !grp.frozen) {
    for (std::size_t j = 0; j < grp.channel_w.size(); ++j) {
      adam_step(grp.channel_w[j].value, g.head_w[j], grp.channel_w[j].adam, lr, 0.9, 0.999, 1e-8);
      adam_step(grp.channel_b[j].value, g.head_b[j], grp.channel_b[j].adam, lr, 0.9, 0.999, 1e-8);
    }
  }
  HnParam& e = embedding_param(s.embedding_id);
  adam_step(e.value, g.embedding, e.adam, lr, 0.9, 0.999, 1e-8);
}

void Hypernetwork::apply_personal_update(std::int64_t client_id,
                                         const std::vector<double>& delta) {
  const ClientSlot& s = slot(client_id);
  if (s.last_served_round != round_) {
    throw config_error("client " + std::to_string(client_id) +
                       " was not served in round " + std::to_string(round_));
  }
  require_shape(static_cast<std::int64_t>(delta.size()) == s.param_count,
                "delta length does not match client parameter count");
  if (all_zero(delta)) return;
  std::vector<double> upstream(delta.size());
  for (std::size_t i = 0; i < delta.size(); ++i) upstream[i] = -delta[i];
  descend(s, vjp(s, upstream));
}

void Hypernetwork::apply_global_update(const std::vector<GlobalDelta>& deltas) {
  if (deltas.empty()) throw config_error("global update needs at least one delta");
  const ClientSlot& s = slot(kGlobalSlot);
  if (s.last_served_round != round_) {
    throw config_error("global model was not served in round " + std::to_string(round_));
  }
  double total = 0.0;
  for (const auto& d : deltas) {
    slot(d.client_id);
    require_shape(static_cast<std::int64_t>(d.delta.size()) == s.param_count,
                  "global delta length does not match global parameter count");
    if (d.weight < 0.0) throw config_error("delta weights must be non-negative");
    total += d.weight;
  }
  if (total <= 0.0) throw config_error("delta weights must sum to a positive total");

  std::vector<double> upstream(static_cast<std::size_t>(s.param_count), 0.0);
  for (const auto& d : deltas) {
    double w = d.weight / total;
    for (std::size_t i = 0; i < upstream.size(); ++i) upstream[i] -= w * d.delta[i];
  }
  if (all_zero(upstream)) return;
  descend(s, vjp(s, upstream));
}

void Hypernetwork::freeze_for_generalization(HypernetFreeze mode) {
  freeze_ = mode;
  // Heads existing at freeze time stop training in both modes; groups
  // created afterwards train only in new-head mode.
  for (auto& [key, g] : groups_) g.frozen = mode != HypernetFreeze::none;
}

std::vector<Tensor*> Hypernetwork::extractor_tensors() {
  std::vector<Tensor*> out;
  for (auto& p : extractor_) out.push_back(&p.value);
  return out;
}

std::vector<const Tensor*> Hypernetwork::extractor_tensors() const {
  std::vector<const Tensor*> out;
  for (const auto& p : extractor_) out.push_back(&p.value);
  return out;
}

std::vector<std::int64_t> Hypernetwork::group_keys() const {
  std::vector<std::int64_t> keys;
  for (const auto& [key, g] : groups_) keys.push_back(key);
  return keys;
}

HeadGroup& Hypernetwork::group(std::int64_t key) {
  auto it = groups_.find(key);
  if (it == groups_.end()) throw config_error("unknown head group " + std::to_string(key));
  return it->second;
}

const HeadGroup& Hypernetwork::group(std::int64_t key) const {
  auto it = groups_.find(key);
  if (it == groups_.end()) throw config_error("unknown head group " + std::to_string(key));
  return it->second;
}

Tensor& Hypernetwork::embedding_of(std::int64_t client_id) {
  return embeddings_.at(slot(client_id).embedding_id).value;
}

const Tensor& Hypernetwork::embedding_of(std::int64_t client_id) const {
  return embeddings_.at(slot(client_id).embedding_id).value;
}

std::uint64_t Hypernetwork::extractor_hash() const {
  Fnv f;
  for (const auto& p : extractor_) f.tensor(p.value);
  return f.h;
}

std::uint64_t Hypernetwork::heads_hash() const {
  Fnv f;
  for (const auto& [key, g] : groups_) {
    f.i64(key);
    for (const auto& p : g.channel_w) f.tensor(p.value);
    for (const auto& p : g.channel_b) f.tensor(p.value);
  }
  return f.h;
}

std::uint64_t Hypernetwork::embeddings_hash() const {
  Fnv f;
  for (const auto& [id, p] : embeddings_) {
    f.i64(id);
    f.tensor(p.value);
  }
  return f.h;
}

std::uint64_t Hypernetwork::state_hash() const {
  Fnv f;
  f.i64(static_cast<std::int64_t>(extractor_hash()));
  f.i64(static_cast<std::int64_t>(heads_hash()));
  f.i64(static_cast<std::int64_t>(embeddings_hash()));
  return f.h;
}

void Hypernetwork::save(std::ostream& out) const {
  write_bytes(out, kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(out, kVersion);
  write_pod<std::int64_t>(out, cfg_.embedding_dim);
  write_pod<std::int64_t>(out, cfg_.hidden_dim);
  write_pod<std::int64_t>(out, cfg_.chunk_width);
  write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(cfg_.grouping));
  write_pod<std::uint8_t>(out, cfg_.use_heads ? 1 : 0);
  write_pod<std::uint8_t>(out, cfg_.shared_group_embeddings ? 1 : 0);
  write_pod<double>(out, cfg_.adam_lr);
  write_pod<std::uint64_t>(out, base_seed_);
  write_pod<std::uint64_t>(out, rng_.state());
  write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(freeze_));
  write_pod<std::int64_t>(out, round_);

  for (const auto& p : extractor_) write_param(out, p);

  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(groups_.size()));
  for (const auto& [key, g] : groups_) {
    write_pod<std::int64_t>(out, key);
    write_pod<std::int64_t>(out, g.chunks);
    write_pod<std::uint8_t>(out, g.frozen ? 1 : 0);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(g.members.size()));
    for (auto m : g.members) write_pod<std::int64_t>(out, m);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(g.channel_w.size()));
    for (std::size_t j = 0; j < g.channel_w.size(); ++j) {
      write_param(out, g.channel_w[j]);
      write_param(out, g.channel_b[j]);
    }
  }

  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(clients_.size()));
  for (const auto& [id, s] : clients_) {
    write_pod<std::int64_t>(out, id);
    write_pod<std::int64_t>(out, s.param_count);
    write_pod<std::int64_t>(out, s.chunks);
    write_pod<std::int64_t>(out, s.group_key);
    write_pod<std::int64_t>(out, s.embedding_id);
    write_string(out, s.arch_name);
    write_pod<std::int64_t>(out, s.last_served_round);
  }

  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(embeddings_.size()));
  for (const auto& [id, p] : embeddings_) {
    write_pod<std::int64_t>(out, id);
    write_param(out, p);
  }

  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(warnings_.size()));
  for (const auto& w : warnings_) write_string(out, w);

  if (!out) throw io_error("failed to write hypernetwork checkpoint");
}

Hypernetwork Hypernetwork::load(std::istream& in) {
  char magic[8];
  read_bytes(in, magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw io_error("not a hypernetwork checkpoint");
  }
  auto version = read_pod<std::uint32_t>(in);
  if (version != kVersion) {
    throw io_error("unsupported hypernetwork checkpoint version " + std::to_string(version));
  }
  HypernetConfig cfg;
  cfg.embedding_dim = read_pod<std::int64_t>(in);
  cfg.hidden_dim = read_pod<std::int64_t>(in);
  cfg.chunk_width = read_pod<std::int64_t>(in);
  cfg.grouping = static_cast<HeadGrouping>(read_pod<std::uint8_t>(in));
  cfg.use_heads = read_pod<std::uint8_t>(in) != 0;
  cfg.shared_group_embeddings = read_pod<std::uint8_t>(in) != 0;
  cfg.adam_lr = read_pod<double>(in);
  auto base_seed = read_pod<std::uint64_t>(in);

  Hypernetwork hn(cfg, base_seed);
  hn.rng_ = Rng(read_pod<std::uint64_t>(in));
  hn.freeze_ = static_cast<HypernetFreeze>(read_pod<std::uint8_t>(in));
  hn.round_ = read_pod<std::int64_t>(in);

  for (auto& p : hn.extractor_) p = read_param(in);

  auto group_count = read_pod<std::uint32_t>(in);
  hn.groups_.clear();
  for (std::uint32_t i = 0; i < group_count; ++i) {
    HeadGroup g;
    g.key = read_pod<std::int64_t>(in);
    g.chunks = read_pod<std::int64_t>(in);
    g.frozen = read_pod<std::uint8_t>(in) != 0;
    auto members = read_pod<std::uint32_t>(in);
    for (std::uint32_t m = 0; m < members; ++m) g.members.push_back(read_pod<std::int64_t>(in));
    auto channels = read_pod<std::uint32_t>(in);
    for (std::uint32_t j = 0; j < channels; ++j) {
      g.channel_w.push_back(read_param(in));
      g.channel_b.push_back(read_param(in));
    }
    std::int64_t key = g.key;
    hn.groups_.emplace(key, std::move(g));
  }

  auto client_count = read_pod<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < client_count; ++i) {
    std::int64_t id = read_pod<std::int64_t>(in);
    ClientSlot s;
    s.param_count = read_pod<std::int64_t>(in);
    s.chunks = read_pod<std::int64_t>(in);
    s.group_key = read_pod<std::int64_t>(in);
    s.embedding_id = read_pod<std::int64_t>(in);
    s.arch_name = read_string(in);
    s.last_served_round = read_pod<std::int64_t>(in);
    hn.clients_.emplace(id, std::move(s));
  }

  auto embedding_count = read_pod<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < embedding_count; ++i) {
    std::int64_t id = read_pod<std::int64_t>(in);
    hn.embeddings_.emplace(id, read_param(in));
  }

  auto warning_count = read_pod<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < warning_count; ++i) hn.warnings_.push_back(read_string(in));
  return hn;
}

}  // namespace hnfl

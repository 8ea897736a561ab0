#include "hnfl/engine.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "hnfl/errors.hpp"
#include "hnfl/serial.hpp"

namespace hnfl {

namespace {

constexpr char kMagic[8] = {'H', 'N', 'F', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

double now_seconds() {
  auto t = std::chrono::steady_clock::now().time_since_epoch();
  return std::chrono::duration<double>(t).count();
}

/// Runs fn(0..count-1) on up to `workers` threads. Tasks only write to their
/// own result slot, so the schedule cannot change any outcome.
void run_tasks(std::int64_t count, std::int64_t workers,
               const std::function<void(std::int64_t)>& fn) {
  if (count <= 0) return;
  std::int64_t w = std::min(workers, count);
  if (w <= 1) {
    for (std::int64_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::int64_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr err;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(w));
  for (std::int64_t t = 0; t < w; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        std::int64_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!err) err = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

std::string format_metric(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<double> subtract(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

}  // namespace

Algorithm algorithm_from_name(const std::string& name) {
  if (name == "pfedhn") return Algorithm::pfedhn;
  if (name == "pfedhn_g") return Algorithm::pfedhn_g;
  if (name == "pfedhn_gd") return Algorithm::pfedhn_gd;
  if (name == "fedavg") return Algorithm::fedavg;
  if (name == "local") return Algorithm::local_only;
  throw config_error("unknown algorithm: " + name);
}

std::string algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::pfedhn: return "pfedhn";
    case Algorithm::pfedhn_g: return "pfedhn_g";
    case Algorithm::pfedhn_gd: return "pfedhn_gd";
    case Algorithm::fedavg: return "fedavg";
    case Algorithm::local_only: return "local";
  }
  throw config_error("unknown algorithm value");
}

std::int64_t scaled_count(double fraction, std::int64_t n) {
  double t = fraction * static_cast<double>(n);
  double nearest = std::round(t);
  if (std::abs(t - nearest) < 1e-9 * std::max(1.0, std::abs(t))) t = nearest;
  return static_cast<std::int64_t>(std::ceil(t));
}

std::int64_t prune_delta(std::vector<double>& delta, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw config_error("prune fraction must lie in (0, 1)");
  }
  std::int64_t n = static_cast<std::int64_t>(delta.size());
  if (n == 0) return 0;
  std::int64_t keep = std::min(scaled_count(fraction, n), n);
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), std::int64_t{0});
  std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    double ma = std::abs(delta[static_cast<std::size_t>(a)]);
    double mb = std::abs(delta[static_cast<std::size_t>(b)]);
    if (ma != mb) return ma > mb;
    return a < b;
  });
  std::vector<char> kept(static_cast<std::size_t>(n), 0);
  for (std::int64_t i = 0; i < keep; ++i) kept[static_cast<std::size_t>(order[i])] = 1;
  for (std::int64_t i = 0; i < n; ++i) {
    if (!kept[static_cast<std::size_t>(i)]) delta[static_cast<std::size_t>(i)] = 0.0;
  }
  return keep;
}

void RoundConfig::validate() const {
  if (rounds < 0) throw config_error("rounds must be non-negative");
  if (local_epochs < 0) throw config_error("local epochs must be non-negative");
  if (!(participation > 0.0 && participation <= 1.0)) {
    throw config_error("participation must lie in (0, 1]");
  }
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw config_error("lambda must lie in [0, 1]");
  if (!(temperature > 0.0)) throw config_error("temperature must be positive");
  if (!(prune_fraction >= 0.0 && prune_fraction < 1.0)) {
    throw config_error("prune fraction must lie in [0, 1)");
  }
  if (!(global_deployment >= 0.0 && global_deployment <= 1.0)) {
    throw config_error("global deployment must lie in [0, 1]");
  }
  if (!(client_lr > 0.0)) throw config_error("client learning rate must be positive");
  if (!(client_momentum >= 0.0 && client_momentum < 1.0)) {
    throw config_error("client momentum must lie in [0, 1)");
  }
  if (!(client_weight_decay >= 0.0)) throw config_error("weight decay must be non-negative");
  if (batch_size < 1) throw config_error("batch size must be at least 1");
}

std::string metrics_csv_header() {
  return "round,phase,client_id,accuracy,loss,uplink_bytes,downlink_bytes";
}

std::string metrics_csv_line(const MetricsRow& row) {
  std::string out;
  out += std::to_string(row.round);
  out += ',';
  out += row.phase;
  out += ',';
  out += std::to_string(row.client_id);
  out += ',';
  out += format_metric(row.accuracy);
  out += ',';
  out += format_metric(row.loss);
  out += ',';
  out += std::to_string(row.uplink_bytes);
  out += ',';
  out += std::to_string(row.downlink_bytes);
  return out;
}

struct Simulation::ClientRuntime {
  std::int64_t local_id = 0;
  std::int64_t abs_id = 0;
  ArchitectureSpec arch;
  std::vector<std::int64_t> train_idx;
  std::vector<std::int64_t> test_idx;
  std::int64_t weight = 0;  // training example count m_i
  std::int64_t param_count = 0;
  Model model;

  ClientRuntime(std::int64_t lid, std::int64_t aid, ArchitectureSpec a,
                std::vector<std::int64_t> tr, std::vector<std::int64_t> te)
      : local_id(lid),
        abs_id(aid),
        arch(a),
        train_idx(std::move(tr)),
        test_idx(std::move(te)),
        weight(static_cast<std::int64_t>(train_idx.size())),
        param_count(flat_param_count(a)),
        model(std::move(a)) {}
};

struct Simulation::TrainResult {
  std::vector<double> values;  // delta for hypernet paths, weights for fedavg
};

Simulation::Simulation(SimulationConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.round.validate();
  cfg_.dataset.validate();
  validate_partition(cfg_.plan, cfg_.dataset);
  std::int64_t n = cfg_.plan.client_count();
  if (n < 1) throw config_error("at least one client is required");
  if (static_cast<std::int64_t>(cfg_.client_archs.size()) != n) {
    throw config_error("one architecture per partition client is required");
  }
  if (cfg_.workers < 1) throw config_error("worker count must be at least 1");
  if (cfg_.dataset.size() == 0) throw config_error("dataset is empty");
  std::int64_t example_numel = cfg_.dataset.features.numel() / cfg_.dataset.size();

  clients_.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const ArchitectureSpec& a = cfg_.client_archs[static_cast<std::size_t>(i)];
    validate_arch(a);
    if (a.classes != cfg_.dataset.classes) {
      throw config_error("client " + std::to_string(i) + " architecture expects " +
                         std::to_string(a.classes) + " classes but the dataset has " +
                         std::to_string(cfg_.dataset.classes));
    }
    std::int64_t in_numel = 1;
    for (auto d : a.input_shape) in_numel *= d;
    if (in_numel != example_numel) {
      throw config_error("client " + std::to_string(i) + " input shape needs " +
                         std::to_string(in_numel) + " values per example but the dataset has " +
                         std::to_string(example_numel));
    }
    const ClientIndices& part = cfg_.plan.clients[static_cast<std::size_t>(i)];
    if (part.train.empty()) {
      throw config_error("client " + std::to_string(i) + " has no training examples");
    }
    if (part.test.empty()) {
      throw config_error("client " + std::to_string(i) + " has no test examples");
    }
    clients_.emplace_back(i, cfg_.client_id_base + i, a, part.train, part.test);
    Rng init_rng(mix_seed(cfg_.seed, "model-init", clients_.back().abs_id));
    clients_.back().model.init_params(init_rng);
  }

  bool uses_hypernet = cfg_.algorithm == Algorithm::pfedhn ||
                       cfg_.algorithm == Algorithm::pfedhn_g ||
                       cfg_.algorithm == Algorithm::pfedhn_gd;
  bool uses_global = cfg_.algorithm == Algorithm::pfedhn_g || cfg_.algorithm == Algorithm::pfedhn_gd;

  if (!uses_hypernet && cfg_.freeze != HypernetFreeze::none) {
    throw config_error("freeze modes require a hypernetwork algorithm");
  }

  if (uses_hypernet) {
    if (!cfg_.pretrained_hypernet.empty()) {
      std::istringstream in(cfg_.pretrained_hypernet, std::ios::binary);
      hn_ = std::make_unique<Hypernetwork>(Hypernetwork::load(in));
      hn_->set_adam_lr(cfg_.hypernet.adam_lr);
      if (cfg_.freeze != HypernetFreeze::none) hn_->freeze_for_generalization(cfg_.freeze);
      round_offset_ = hn_->round();
    } else {
      hn_ = std::make_unique<Hypernetwork>(cfg_.hypernet, cfg_.seed);
      if (cfg_.freeze != HypernetFreeze::none) hn_->freeze_for_generalization(cfg_.freeze);
    }
    for (auto& c : clients_) {
      if (hn_->has_client(c.abs_id)) {
        if (hn_->param_count_of(c.abs_id) != c.param_count) {
          throw config_error("client " + std::to_string(c.abs_id) +
                             " is already registered with a different parameter count");
        }
      } else {
        hn_->register_client(c.abs_id, c.param_count,
                             static_cast<std::int64_t>(c.arch.layers.size()), c.arch.name);
      }
    }
  }

  if (uses_global) {
    if (cfg_.global_arch) {
      global_arch_ = *cfg_.global_arch;
    } else {
      std::int64_t best = 0;
      for (std::int64_t i = 1; i < n; ++i) {
        if (clients_[static_cast<std::size_t>(i)].param_count <
            clients_[static_cast<std::size_t>(best)].param_count) {
          best = i;
        }
      }
      global_arch_ = clients_[static_cast<std::size_t>(best)].arch;
    }
    validate_arch(*global_arch_);
    if (global_arch_->classes != cfg_.dataset.classes) {
      throw config_error("global architecture class count does not match the dataset");
    }
    for (const auto& l : global_arch_->layers) {
      if (l.local_only && layer_has_params(l.kind)) {
        throw config_error("the global architecture cannot contain local-only layers");
      }
    }
    std::int64_t kg = flat_param_count(*global_arch_);
    if (hn_->has_global()) {
      if (hn_->param_count_of(Hypernetwork::kGlobalSlot) != kg) {
        throw config_error("the global slot is already registered with a different size");
      }
    } else {
      hn_->register_global(kg, global_arch_->name);
    }
  }

  if (cfg_.algorithm == Algorithm::fedavg) {
    const ArchitectureSpec& first = clients_.front().arch;
    std::uint64_t h0 = flat_layout_hash(first);
    for (const auto& c : clients_) {
      if (c.arch.name != first.name || flat_layout_hash(c.arch) != h0) {
        throw config_error("weight averaging requires every client to share one architecture");
      }
    }
    global_model_ = std::make_unique<Model>(first);
    Rng init_rng(mix_seed(cfg_.seed, "model-init", cfg_.client_id_base));
    global_model_->init_params(init_rng);
  }
}

Simulation::~Simulation() = default;
Simulation::Simulation(Simulation&&) noexcept = default;
Simulation& Simulation::operator=(Simulation&&) noexcept = default;

std::int64_t Simulation::client_count() const {
  return static_cast<std::int64_t>(clients_.size());
}

const Model& Simulation::client_model(std::int64_t local_id) const {
  if (local_id < 0 || local_id >= client_count()) throw config_error("client index out of range");
  return clients_[static_cast<std::size_t>(local_id)].model;
}

std::int64_t Simulation::client_weight(std::int64_t local_id) const {
  if (local_id < 0 || local_id >= client_count()) throw config_error("client index out of range");
  return clients_[static_cast<std::size_t>(local_id)].weight;
}

std::vector<std::int64_t> Simulation::sample(std::int64_t round, const char* tag) const {
  std::int64_t n = client_count();
  std::int64_t k = std::min(std::max<std::int64_t>(scaled_count(cfg_.round.participation, n), 1), n);
  std::vector<std::int64_t> ids(static_cast<std::size_t>(n));
  std::iota(ids.begin(), ids.end(), std::int64_t{0});
  Rng rng(mix_seed(cfg_.seed, tag, round));
  rng.shuffle(ids);
  ids.resize(static_cast<std::size_t>(k));
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<std::int64_t> Simulation::sampled_participants(std::int64_t round) const {
  return sample(round, "sample");
}

std::int64_t Simulation::deployed_count() const {
  return std::min(scaled_count(cfg_.round.global_deployment, client_count()), client_count());
}

void Simulation::make_batch(const ClientRuntime& c, const std::vector<std::int64_t>& indices,
                            std::int64_t start, std::int64_t count, Tensor& x,
                            std::vector<std::int64_t>& labels) const {
  std::vector<std::int64_t> batch(indices.begin() + start, indices.begin() + start + count);
  x = gather_features(cfg_.dataset, batch);
  std::vector<std::int64_t> shape;
  shape.push_back(count);
  shape.insert(shape.end(), c.arch.input_shape.begin(), c.arch.input_shape.end());
  x.shape = std::move(shape);
  labels = gather_labels(cfg_.dataset, batch);
}

void Simulation::train_client_model(Model& m, const ClientRuntime& c, std::int64_t round,
                                    const char* tag, Model* teacher, double lambda) const {
  SgdState opt;
  opt.lr = cfg_.round.client_lr;
  opt.momentum = cfg_.round.client_momentum;
  opt.weight_decay = cfg_.round.client_weight_decay;
  std::int64_t m_count = static_cast<std::int64_t>(c.train_idx.size());
  for (std::int64_t epoch = 0; epoch < cfg_.round.local_epochs; ++epoch) {
    std::vector<std::int64_t> order = c.train_idx;
    Rng rng(mix_seed(cfg_.seed, tag, round, c.abs_id, epoch));
    rng.shuffle(order);
    for (std::int64_t start = 0; start < m_count; start += cfg_.round.batch_size) {
      std::int64_t count = std::min(cfg_.round.batch_size, m_count - start);
      Tensor x;
      std::vector<std::int64_t> labels;
      make_batch(c, order, start, count, x, labels);
      if (teacher) {
        ModelCache tc;
        Tensor teacher_logits = teacher->forward(x, false, tc);
        train_step_kd(m, x, labels, teacher_logits, lambda, cfg_.round.temperature, opt);
      } else {
        train_step_ce(m, x, labels, opt);
      }
    }
  }
}

EvalResult Simulation::eval_on_test(const ClientRuntime& c, Model& m) const {
  Tensor x = gather_features(cfg_.dataset, c.test_idx);
  std::vector<std::int64_t> shape;
  shape.push_back(static_cast<std::int64_t>(c.test_idx.size()));
  shape.insert(shape.end(), c.arch.input_shape.begin(), c.arch.input_shape.end());
  x.shape = std::move(shape);
  std::vector<std::int64_t> labels = gather_labels(cfg_.dataset, c.test_idx);
  return evaluate_model(m, x, labels);
}

std::string Simulation::personal_tag() const {
  return cfg_.phase_tag_override.empty() ? "personal" : cfg_.phase_tag_override;
}

RoundMetrics Simulation::run_round() {
  std::int64_t r = next_round_;
  RoundMetrics out;
  out.round = r;
  switch (cfg_.algorithm) {
    case Algorithm::pfedhn:
      round_hypernet(r, out, false);
      break;
    case Algorithm::pfedhn_g:
    case Algorithm::pfedhn_gd:
      round_hypernet(r, out, true);
      break;
    case Algorithm::fedavg:
      round_fedavg(r, out);
      break;
    case Algorithm::local_only:
      round_local(r, out);
      break;
  }
  ++next_round_;
  if (!out.rows.empty()) {
    const std::string& last_phase = out.rows.back().phase;
    double sum = 0.0;
    std::int64_t cnt = 0;
    for (const auto& row : out.rows) {
      if (row.phase == last_phase) {
        sum += row.accuracy;
        ++cnt;
      }
    }
    out.mean_accuracy = cnt ? sum / static_cast<double>(cnt) : 0.0;
  }
  return out;
}

void Simulation::round_hypernet(std::int64_t round, RoundMetrics& out, bool with_global) {
  hn_->begin_round(round_offset_ + round);
  std::vector<std::int64_t> part = sample(round, "sample");
  double eff_lambda = cfg_.algorithm == Algorithm::pfedhn_g ? 1.0 : cfg_.round.lambda;

  FlatParams teacher_flat;
  bool have_teacher = false;
  std::int64_t dn = deployed_count();

  if (with_global) {
    double t0 = now_seconds();
    std::vector<std::int64_t> gpart =
        cfg_.round.separate_global_sampling ? sample(round, "sample-global") : part;
    std::vector<std::int64_t> deployed;
    for (auto id : gpart) {
      if (id < dn) deployed.push_back(id);
    }
    if (!deployed.empty()) {
      FlatParams wg = hn_->serve_global();
      teacher_flat = wg;
      have_teacher = true;
      std::vector<TrainResult> results(deployed.size());
      run_tasks(static_cast<std::int64_t>(deployed.size()), cfg_.workers, [&](std::int64_t t) {
        const ClientRuntime& c = clients_[static_cast<std::size_t>(deployed[static_cast<std::size_t>(t)])];
        Model m(*global_arch_);
        m.unpack(wg);
        train_client_model(m, c, round, "batch-global", nullptr, 1.0);
        results[static_cast<std::size_t>(t)].values = subtract(m.pack().values, wg.values);
      });
      std::vector<Hypernetwork::GlobalDelta> deltas;
      deltas.reserve(deployed.size());
      for (std::size_t t = 0; t < deployed.size(); ++t) {
        const ClientRuntime& c = clients_[static_cast<std::size_t>(deployed[t])];
        deltas.push_back({c.abs_id, std::move(results[t].values),
                          static_cast<double>(c.weight)});
      }
      hn_->apply_global_update(deltas);

      FlatParams wg_post = hn_->peek_global();
      Model gm(*global_arch_);
      gm.unpack(wg_post);
      std::int64_t kg_bytes = wg.size() * kWireValueBytes;
      for (auto id : deployed) {
        const ClientRuntime& c = clients_[static_cast<std::size_t>(id)];
        EvalResult ev = eval_on_test(c, gm);
        out.rows.push_back({round, "global", c.abs_id, ev.accuracy, ev.loss, kg_bytes, kg_bytes});
      }
    }
    out.seconds_global = now_seconds() - t0;
  }

  double t1 = now_seconds();
  std::vector<FlatParams> served;
  served.reserve(part.size());
  for (auto id : part) {
    served.push_back(hn_->serve_client(clients_[static_cast<std::size_t>(id)].abs_id));
  }

  std::vector<TrainResult> results(part.size());
  run_tasks(static_cast<std::int64_t>(part.size()), cfg_.workers, [&](std::int64_t t) {
    const std::int64_t id = part[static_cast<std::size_t>(t)];
    ClientRuntime& c = clients_[static_cast<std::size_t>(id)];
    const FlatParams& theta = served[static_cast<std::size_t>(t)];
    c.model.unpack(theta);
    bool use_kd = have_teacher && eff_lambda < 1.0 && id < dn;
    if (use_kd) {
      Model teacher(*global_arch_);
      teacher.unpack(teacher_flat);
      train_client_model(c.model, c, round, "batch", &teacher, eff_lambda);
    } else {
      train_client_model(c.model, c, round, "batch", nullptr, 1.0);
    }
    results[static_cast<std::size_t>(t)].values = subtract(c.model.pack().values, theta.values);
  });

  std::vector<std::int64_t> uplink(part.size(), 0);
  for (std::size_t t = 0; t < part.size(); ++t) {
    ClientRuntime& c = clients_[static_cast<std::size_t>(part[t])];
    std::vector<double>& delta = results[t].values;
    if (cfg_.round.prune_fraction > 0.0) {
      std::int64_t kept = prune_delta(delta, cfg_.round.prune_fraction);
      uplink[t] = kept * (kWireIndexBytes + kWireValueBytes);
    } else {
      uplink[t] = c.param_count * kWireValueBytes;
    }
    hn_->apply_personal_update(c.abs_id, delta);
  }

  std::string tag = personal_tag();
  for (std::size_t t = 0; t < part.size(); ++t) {
    ClientRuntime& c = clients_[static_cast<std::size_t>(part[t])];
    Model ev_model = c.model;
    ev_model.unpack(hn_->peek_client(c.abs_id));
    EvalResult ev = eval_on_test(c, ev_model);
    out.rows.push_back({round, tag, c.abs_id, ev.accuracy, ev.loss, uplink[t],
                        c.param_count * kWireValueBytes});
  }
  out.seconds_personal = now_seconds() - t1;
}

void Simulation::round_fedavg(std::int64_t round, RoundMetrics& out) {
  double t0 = now_seconds();
  std::vector<std::int64_t> part = sample(round, "sample");
  FlatParams wg = global_model_->pack();

  std::vector<TrainResult> results(part.size());
  run_tasks(static_cast<std::int64_t>(part.size()), cfg_.workers, [&](std::int64_t t) {
    const ClientRuntime& c = clients_[static_cast<std::size_t>(part[static_cast<std::size_t>(t)])];
    Model m = *global_model_;
    train_client_model(m, c, round, "batch", nullptr, 1.0);
    results[static_cast<std::size_t>(t)].values = m.pack().values;
  });

  double total = 0.0;
  for (auto id : part) total += static_cast<double>(clients_[static_cast<std::size_t>(id)].weight);
  // Anchored at the first participant's upload so a fleet of identical
  // uploads averages to exactly that upload.
  std::vector<double> avg = results[0].values;
  for (std::size_t t = 1; t < part.size(); ++t) {
    double coef = static_cast<double>(clients_[static_cast<std::size_t>(part[t])].weight) / total;
    const std::vector<double>& w = results[t].values;
    for (std::size_t j = 0; j < avg.size(); ++j) avg[j] += coef * (w[j] - results[0].values[j]);
  }
  FlatParams merged;
  merged.arch_name = wg.arch_name;
  merged.values = std::move(avg);
  global_model_->unpack(merged);

  std::int64_t k_bytes = wg.size() * kWireValueBytes;
  for (auto id : part) {
    const ClientRuntime& c = clients_[static_cast<std::size_t>(id)];
    EvalResult ev = eval_on_test(c, *global_model_);
    out.rows.push_back({round, "global", c.abs_id, ev.accuracy, ev.loss, k_bytes, k_bytes});
  }
  out.seconds_personal = now_seconds() - t0;
}

void Simulation::round_local(std::int64_t round, RoundMetrics& out) {
  double t0 = now_seconds();
  std::vector<std::int64_t> part = sample(round, "sample");
  run_tasks(static_cast<std::int64_t>(part.size()), cfg_.workers, [&](std::int64_t t) {
    ClientRuntime& c = clients_[static_cast<std::size_t>(part[static_cast<std::size_t>(t)])];
    train_client_model(c.model, c, round, "batch", nullptr, 1.0);
  });
  for (auto id : part) {
    ClientRuntime& c = clients_[static_cast<std::size_t>(id)];
    EvalResult ev = eval_on_test(c, c.model);
    out.rows.push_back({round, "local", c.abs_id, ev.accuracy, ev.loss, 0, 0});
  }
  out.seconds_personal = now_seconds() - t0;
}

std::string Simulation::hypernet_blob() const {
  if (!hn_) throw config_error("this algorithm has no hypernetwork");
  std::ostringstream out(std::ios::binary);
  hn_->save(out);
  return out.str();
}

void Simulation::save_checkpoint(std::ostream& out) const {
  write_bytes(out, kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(out, kVersion);
  write_pod<std::uint64_t>(out, cfg_.seed);
  write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(cfg_.algorithm));
  write_pod<std::int64_t>(out, client_count());
  write_pod<std::int64_t>(out, cfg_.client_id_base);
  write_pod<std::int64_t>(out, next_round_);
  write_pod<std::uint8_t>(out, hn_ ? 1 : 0);
  if (hn_) {
    std::string blob = hypernet_blob();
    write_pod<std::uint64_t>(out, blob.size());
    write_bytes(out, blob.data(), blob.size());
  }
  write_pod<std::uint8_t>(out, global_model_ ? 1 : 0);
  if (global_model_) {
    write_pod<std::uint64_t>(out, global_model_->tensors().size());
    for (const auto& t : global_model_->tensors()) write_tensor(out, t);
  }
  for (const auto& c : clients_) {
    write_pod<std::uint64_t>(out, c.model.tensors().size());
    for (const auto& t : c.model.tensors()) write_tensor(out, t);
  }
  if (!out) throw io_error("failed to write checkpoint");
}

void Simulation::save_checkpoint_file(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open checkpoint file for writing: " + path);
  save_checkpoint(out);
}

void Simulation::load_checkpoint(std::istream& in) {
  char magic[8];
  read_bytes(in, magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw io_error("not a simulation checkpoint");
  }
  auto version = read_pod<std::uint32_t>(in);
  if (version != kVersion) throw io_error("unsupported checkpoint version");
  auto seed = read_pod<std::uint64_t>(in);
  auto alg = read_pod<std::uint8_t>(in);
  auto n = read_pod<std::int64_t>(in);
  auto base = read_pod<std::int64_t>(in);
  auto round = read_pod<std::int64_t>(in);
  if (seed != cfg_.seed) throw config_error("checkpoint seed does not match the configuration");
  if (alg != static_cast<std::uint8_t>(cfg_.algorithm)) {
    throw config_error("checkpoint algorithm does not match the configuration");
  }
  if (n != client_count() || base != cfg_.client_id_base) {
    throw config_error("checkpoint fleet does not match the configuration");
  }
  auto has_hn = read_pod<std::uint8_t>(in);
  if (static_cast<bool>(has_hn) != static_cast<bool>(hn_)) {
    throw io_error("checkpoint and configuration disagree about the hypernetwork");
  }
  if (has_hn) {
    auto len = read_pod<std::uint64_t>(in);
    if (len > (std::uint64_t{1} << 38)) throw io_error("corrupt hypernetwork blob length");
    std::string blob(static_cast<std::size_t>(len), '\0');
    if (len) read_bytes(in, blob.data(), blob.size());
    std::istringstream hin(blob, std::ios::binary);
    *hn_ = Hypernetwork::load(hin);
    hn_->set_adam_lr(cfg_.hypernet.adam_lr);
  }
  auto has_global = read_pod<std::uint8_t>(in);
  if (static_cast<bool>(has_global) != static_cast<bool>(global_model_)) {
    throw io_error("checkpoint and configuration disagree about the global model");
  }
  if (has_global) {
    auto count = read_pod<std::uint64_t>(in);
    if (count != global_model_->tensors().size()) {
      throw io_error("global model tensor count mismatch in checkpoint");
    }
    for (auto& t : global_model_->tensors()) {
      Tensor loaded = read_tensor(in);
      if (loaded.shape != t.shape) throw io_error("global model tensor shape mismatch");
      t = std::move(loaded);
    }
  }
  for (auto& c : clients_) {
    auto count = read_pod<std::uint64_t>(in);
    if (count != c.model.tensors().size()) {
      throw io_error("client model tensor count mismatch in checkpoint");
    }
    for (auto& t : c.model.tensors()) {
      Tensor loaded = read_tensor(in);
      if (loaded.shape != t.shape) throw io_error("client model tensor shape mismatch");
      t = std::move(loaded);
    }
  }
  next_round_ = round;
}

void Simulation::load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open checkpoint file: " + path);
  load_checkpoint(in);
}

}  // namespace hnfl

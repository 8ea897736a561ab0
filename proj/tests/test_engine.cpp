#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hnfl/data.hpp"
#include "hnfl/engine.hpp"
#include "hnfl/errors.hpp"
#include "hnfl/model.hpp"
#include "hnfl/rng.hpp"
#include "hnfl/zoo.hpp"

using namespace hnfl;

namespace {

struct EngineFixture {
  Dataset ds;
  PartitionPlan plan;
};

EngineFixture blob_fixture(std::int64_t classes, std::int64_t per_class, std::int64_t dim,
                           std::int64_t n_clients, std::int64_t classes_per_client,
                           std::uint64_t seed) {
  EngineFixture f;
  f.ds = synth_blobs(classes, per_class, dim, 0.35, seed);
  f.plan = partition_quantity_skew(f.ds, n_clients, classes_per_client, seed + 1);
  return f;
}

SimulationConfig base_config(EngineFixture f, Algorithm alg,
                             std::vector<ArchitectureSpec> archs, std::uint64_t seed) {
  SimulationConfig cfg;
  cfg.dataset = std::move(f.ds);
  cfg.plan = std::move(f.plan);
  cfg.client_archs = std::move(archs);
  cfg.algorithm = alg;
  cfg.seed = seed;
  cfg.round.local_epochs = 1;
  return cfg;
}

std::string run_csv(Simulation& sim, std::int64_t rounds) {
  std::string out = metrics_csv_header() + "\n";
  for (std::int64_t r = 0; r < rounds; ++r) {
    RoundMetrics m = sim.run_round();
    for (const auto& row : m.rows) out += metrics_csv_line(row) + "\n";
  }
  return out;
}

std::vector<ArchitectureSpec> repeat_arch(const ArchitectureSpec& a, std::int64_t n) {
  return std::vector<ArchitectureSpec>(static_cast<std::size_t>(n), a);
}

/// Four architectures over a 192-value input, one of them with batchnorm.
std::vector<ArchitectureSpec> mixed_fleet(std::int64_t classes) {
  return {make_arch("tiny_mlp192", classes), make_arch("tiny_cnn", classes),
          make_arch("tiny_lenet", classes), make_arch("tiny_resnet", classes)};
}

PartitionPlan manual_plan(std::vector<ClientIndices> clients) {
  PartitionPlan plan;
  plan.scheme = "manual";
  plan.seed = 0;
  plan.clients = std::move(clients);
  return plan;
}

ArchitectureSpec wide_mlp(std::int64_t classes) {
  ArchitectureSpec a;
  a.name = "wide_mlp";
  a.input_shape = {64};
  a.classes = classes;
  LayerSpec d1;
  d1.kind = LayerKind::dense;
  d1.in = 64;
  d1.out = 48;
  LayerSpec r;
  r.kind = LayerKind::relu;
  LayerSpec d2;
  d2.kind = LayerKind::dense;
  d2.in = 48;
  d2.out = classes;
  a.layers = {d1, r, d2};
  validate_arch(a);
  return a;
}

}  // namespace

TEST_CASE("scaled counts snap decimal fractions to their rational targets") {
  CHECK(scaled_count(0.3, 10) == 3);
  CHECK(scaled_count(0.7, 10) == 7);
  CHECK(scaled_count(1.0, 7) == 7);
  CHECK(scaled_count(0.1, 50) == 5);
  CHECK(scaled_count(0.5, 3) == 2);
  CHECK(scaled_count(0.3, 7) == 3);
  CHECK(scaled_count(0.0, 5) == 0);
  CHECK(scaled_count(0.3, 1210) == 363);
}

TEST_CASE("pruning keeps the largest-magnitude entries") {
  std::vector<double> delta = {0.5, -0.2, 0.1, 0.05, -0.9, 0.3, 0.02, 0.4, -0.15, 0.25};
  std::int64_t kept = prune_delta(delta, 0.3);
  CHECK(kept == 3);
  std::vector<double> expected = {0.5, 0.0, 0.0, 0.0, -0.9, 0.0, 0.0, 0.4, 0.0, 0.0};
  CHECK(delta == expected);
}

TEST_CASE("pruning breaks magnitude ties toward the lower index") {
  std::vector<double> delta = {1.0, -1.0, 1.0, -1.0};
  std::int64_t kept = prune_delta(delta, 0.5);
  CHECK(kept == 2);
  std::vector<double> expected = {1.0, -1.0, 0.0, 0.0};
  CHECK(delta == expected);
}

TEST_CASE("pruning matches a sort oracle on random vectors") {
  Rng rng(4200);
  for (int trial = 0; trial < 25; ++trial) {
    std::int64_t n = 1 + static_cast<std::int64_t>(rng.uniform_int(2000));
    double fraction = 0.05 + 0.9 * rng.uniform();
    std::vector<double> delta(static_cast<std::size_t>(n));
    for (auto& v : delta) v = rng.normal();
    // Inject ties so the index rule is exercised.
    if (n > 4) {
      delta[1] = delta[static_cast<std::size_t>(n - 1)];
      delta[2] = -delta[1];
    }
    std::vector<double> original = delta;
    std::int64_t kept = prune_delta(delta, fraction);

    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
      double ma = std::abs(original[static_cast<std::size_t>(a)]);
      double mb = std::abs(original[static_cast<std::size_t>(b)]);
      if (ma != mb) return ma > mb;
      return a < b;
    });
    std::int64_t expected_keep = std::min(scaled_count(fraction, n), n);
    REQUIRE(kept == expected_keep);
    std::set<std::int64_t> keep_set(order.begin(), order.begin() + expected_keep);
    for (std::int64_t i = 0; i < n; ++i) {
      if (keep_set.count(i)) {
        CHECK(delta[static_cast<std::size_t>(i)] == original[static_cast<std::size_t>(i)]);
      } else {
        CHECK(delta[static_cast<std::size_t>(i)] == 0.0);
      }
    }
  }
}

TEST_CASE("pruning rejects fractions outside the open unit interval") {
  std::vector<double> delta = {1.0, 2.0};
  CHECK_THROWS_AS(prune_delta(delta, 0.0), config_error);
  CHECK_THROWS_AS(prune_delta(delta, 1.0), config_error);
  CHECK_THROWS_AS(prune_delta(delta, -0.5), config_error);
}

TEST_CASE("algorithm names round-trip and reject unknowns") {
  for (auto a : {Algorithm::pfedhn, Algorithm::pfedhn_g, Algorithm::pfedhn_gd, Algorithm::fedavg,
                 Algorithm::local_only}) {
    CHECK(algorithm_from_name(algorithm_name(a)) == a);
  }
  CHECK_THROWS_AS(algorithm_from_name("sgd"), config_error);
}

TEST_CASE("round configuration rejects out-of-range values") {
  RoundConfig good;
  CHECK_NOTHROW(good.validate());
  auto broken = [&](auto mutate) {
    RoundConfig c;
    mutate(c);
    CHECK_THROWS_AS(c.validate(), config_error);
  };
  broken([](RoundConfig& c) { c.rounds = -1; });
  broken([](RoundConfig& c) { c.local_epochs = -1; });
  broken([](RoundConfig& c) { c.participation = 0.0; });
  broken([](RoundConfig& c) { c.participation = 1.5; });
  broken([](RoundConfig& c) { c.lambda = -0.1; });
  broken([](RoundConfig& c) { c.lambda = 1.1; });
  broken([](RoundConfig& c) { c.temperature = 0.0; });
  broken([](RoundConfig& c) { c.prune_fraction = 1.0; });
  broken([](RoundConfig& c) { c.global_deployment = -0.2; });
  broken([](RoundConfig& c) { c.client_lr = 0.0; });
  broken([](RoundConfig& c) { c.client_momentum = 1.0; });
  broken([](RoundConfig& c) { c.client_weight_decay = -1.0; });
  broken([](RoundConfig& c) { c.batch_size = 0; });
}

TEST_CASE("metrics formatting is stable") {
  CHECK(metrics_csv_header() == "round,phase,client_id,accuracy,loss,uplink_bytes,downlink_bytes");
  MetricsRow row{3, "personal", 7, 0.5, 1.25, 100, 200};
  CHECK(metrics_csv_line(row) == "3,personal,7,0.5,1.25,100,200");
}

TEST_CASE("single-client weight averaging equals local training bitwise") {
  auto archs = repeat_arch(make_arch("tiny_mlp", 4), 1);
  auto fed_cfg = base_config(blob_fixture(4, 30, 64, 1, 4, 21), Algorithm::fedavg, archs, 500);
  auto loc_cfg = base_config(blob_fixture(4, 30, 64, 1, 4, 21), Algorithm::local_only, archs, 500);
  Simulation fed(std::move(fed_cfg));
  Simulation loc(std::move(loc_cfg));
  for (int r = 0; r < 3; ++r) {
    fed.run_round();
    loc.run_round();
  }
  CHECK(fed.global_model()->pack().values == loc.client_model(0).pack().values);
}

TEST_CASE("zero-epoch weight averaging leaves the global model unchanged") {
  auto cfg = base_config(blob_fixture(4, 30, 64, 3, 2, 22), Algorithm::fedavg,
                         repeat_arch(make_arch("tiny_mlp", 4), 3), 501);
  cfg.round.local_epochs = 0;
  Simulation sim(std::move(cfg));
  std::vector<double> before = sim.global_model()->pack().values;
  sim.run_round();
  CHECK(sim.global_model()->pack().values == before);
}

TEST_CASE("weight averaging follows the anchored weighted-mean formula exactly") {
  Dataset ds = synth_blobs(3, 3, 64, 0.35, 77);
  PartitionPlan plan = manual_plan({{{0}, {6}}, {{1, 2}, {7}}, {{3, 4, 5}, {8}}});
  ArchitectureSpec arch = make_arch("tiny_mlp", 3);
  SimulationConfig cfg;
  cfg.dataset = ds;
  cfg.plan = plan;
  cfg.client_archs = repeat_arch(arch, 3);
  cfg.algorithm = Algorithm::fedavg;
  cfg.seed = 502;
  cfg.round.local_epochs = 1;

  // Replay of one round under the engine's published conventions: shared
  // initialization stream, per-(round, client, epoch) batch shuffles, and
  // the first-participant anchor in the average.
  Model start(arch);
  Rng init(mix_seed(502, "model-init", 0));
  start.init_params(init);
  std::vector<std::vector<double>> weights;
  std::vector<double> counts = {1.0, 2.0, 3.0};
  for (std::int64_t i = 0; i < 3; ++i) {
    Model m = start;
    SgdState opt;
    std::vector<std::int64_t> order = plan.clients[static_cast<std::size_t>(i)].train;
    Rng shuffle_rng(mix_seed(502, "batch", 1, i, 0));
    shuffle_rng.shuffle(order);
    Tensor x = gather_features(ds, order);
    x.shape = {static_cast<std::int64_t>(order.size()), 64};
    train_step_ce(m, x, gather_labels(ds, order), opt);
    weights.push_back(m.pack().values);
  }
  std::vector<double> expected = weights[0];
  double total = 6.0;
  for (std::size_t t = 1; t < 3; ++t) {
    double coef = counts[t] / total;
    for (std::size_t j = 0; j < expected.size(); ++j) {
      expected[j] += coef * (weights[t][j] - weights[0][j]);
    }
  }

  Simulation sim(std::move(cfg));
  CHECK(sim.client_weight(0) == 1);
  CHECK(sim.client_weight(1) == 2);
  CHECK(sim.client_weight(2) == 3);
  sim.run_round();
  CHECK(sim.global_model()->pack().values == expected);
}

TEST_CASE("mixed-fleet distillation runs are reproducible across repeats and worker counts") {
  auto make = [&](std::int64_t workers) {
    auto cfg = base_config(blob_fixture(4, 40, 192, 4, 2, 23), Algorithm::pfedhn_gd,
                           mixed_fleet(4), 503);
    cfg.round.lambda = 0.5;
    cfg.round.temperature = 4.0;
    cfg.workers = workers;
    return Simulation(std::move(cfg));
  };
  Simulation a = make(1);
  Simulation b = make(4);
  Simulation c = make(1);
  std::string csv_a = run_csv(a, 2);
  std::string csv_b = run_csv(b, 2);
  std::string csv_c = run_csv(c, 2);
  CHECK(csv_a == csv_b);
  CHECK(csv_a == csv_c);
  CHECK(a.hypernet()->state_hash() == b.hypernet()->state_hash());
  CHECK(a.hypernet()->state_hash() == c.hypernet()->state_hash());
}

TEST_CASE("distillation weight one collapses to the no-distillation variant bitwise") {
  auto make = [&](Algorithm alg) {
    auto cfg = base_config(blob_fixture(4, 30, 192, 3, 2, 24), alg,
                           {make_arch("tiny_mlp192", 4), make_arch("tiny_cnn", 4),
                            make_arch("tiny_lenet", 4)},
                           504);
    cfg.round.lambda = 1.0;
    return Simulation(std::move(cfg));
  };
  Simulation gd = make(Algorithm::pfedhn_gd);
  Simulation g = make(Algorithm::pfedhn_g);
  std::string csv_gd = run_csv(gd, 2);
  std::string csv_g = run_csv(g, 2);
  CHECK(csv_gd == csv_g);
  CHECK(gd.hypernet_blob() == g.hypernet_blob());
}

TEST_CASE("zero deployment reproduces the personalized-only algorithm") {
  auto make = [&](Algorithm alg, double deployment) {
    auto cfg = base_config(blob_fixture(4, 30, 64, 3, 2, 25), alg,
                           repeat_arch(make_arch("tiny_mlp", 4), 3), 505);
    cfg.round.lambda = 0.5;
    cfg.round.global_deployment = deployment;
    return Simulation(std::move(cfg));
  };
  Simulation gd = make(Algorithm::pfedhn_gd, 0.0);
  Simulation hn = make(Algorithm::pfedhn, 1.0);
  std::string csv_gd = run_csv(gd, 2);
  std::string csv_hn = run_csv(hn, 2);
  CHECK(csv_gd == csv_hn);
  for (std::int64_t i = 0; i < 3; ++i) {
    CHECK(gd.hypernet()->peek_client(i).values == hn.hypernet()->peek_client(i).values);
  }
}

TEST_CASE("an active teacher changes personalized training") {
  auto make = [&](double lambda) {
    auto cfg = base_config(blob_fixture(4, 30, 64, 3, 2, 26), Algorithm::pfedhn_gd,
                           repeat_arch(make_arch("tiny_mlp", 4), 3), 506);
    cfg.round.lambda = lambda;
    return Simulation(std::move(cfg));
  };
  Simulation kd = make(0.5);
  Simulation plain = make(1.0);
  kd.run_round();
  plain.run_round();
  CHECK(kd.hypernet_blob() != plain.hypernet_blob());
}

TEST_CASE("deployment limits which clients see the global model") {
  auto cfg = base_config(blob_fixture(4, 40, 64, 4, 2, 27), Algorithm::pfedhn_gd,
                         repeat_arch(make_arch("tiny_mlp", 4), 4), 507);
  cfg.round.lambda = 0.5;
  cfg.round.global_deployment = 0.5;
  Simulation sim(std::move(cfg));
  RoundMetrics m = sim.run_round();
  std::vector<std::int64_t> global_ids, personal_ids;
  std::int64_t kg_bytes = flat_param_count(make_arch("tiny_mlp", 4)) * kWireValueBytes;
  for (const auto& row : m.rows) {
    if (row.phase == "global") {
      global_ids.push_back(row.client_id);
      CHECK(row.uplink_bytes == kg_bytes);
      CHECK(row.downlink_bytes == kg_bytes);
    } else {
      CHECK(row.phase == "personal");
      personal_ids.push_back(row.client_id);
    }
  }
  CHECK(global_ids == std::vector<std::int64_t>{0, 1});
  CHECK(personal_ids == std::vector<std::int64_t>{0, 1, 2, 3});
  // Global rows precede personal rows within the round.
  CHECK(m.rows.front().phase == "global");
}

TEST_CASE("uplink accounting under pruning is exact") {
  auto cfg = base_config(blob_fixture(4, 30, 64, 2, 2, 28), Algorithm::pfedhn,
                         repeat_arch(make_arch("tiny_mlp", 4), 2), 508);
  cfg.round.prune_fraction = 0.3;
  Simulation sim(std::move(cfg));
  RoundMetrics m = sim.run_round();
  std::int64_t k = flat_param_count(make_arch("tiny_mlp", 4));
  std::int64_t kept = scaled_count(0.3, k);
  REQUIRE(m.rows.size() == 2);
  for (const auto& row : m.rows) {
    CHECK(row.uplink_bytes == kept * (kWireIndexBytes + kWireValueBytes));
    CHECK(row.downlink_bytes == k * kWireValueBytes);
  }
}

TEST_CASE("dense uploads account full parameter vectors") {
  auto cfg = base_config(blob_fixture(4, 30, 64, 2, 2, 29), Algorithm::pfedhn,
                         repeat_arch(make_arch("tiny_mlp", 4), 2), 509);
  Simulation sim(std::move(cfg));
  RoundMetrics m = sim.run_round();
  std::int64_t k = flat_param_count(make_arch("tiny_mlp", 4));
  for (const auto& row : m.rows) {
    CHECK(row.uplink_bytes == k * kWireValueBytes);
    CHECK(row.downlink_bytes == k * kWireValueBytes);
  }
}

TEST_CASE("rounds are numbered from one and rows stay ordered") {
  auto cfg = base_config(blob_fixture(4, 30, 64, 3, 2, 30), Algorithm::pfedhn,
                         repeat_arch(make_arch("tiny_mlp", 4), 3), 510);
  Simulation sim(std::move(cfg));
  RoundMetrics first = sim.run_round();
  CHECK(first.round == 1);
  CHECK(sim.next_round() == 2);
  std::vector<std::int64_t> ids;
  for (const auto& row : first.rows) {
    CHECK(row.round == 1);
    ids.push_back(row.client_id);
  }
  CHECK(std::is_sorted(ids.begin(), ids.end()));
  RoundMetrics second = sim.run_round();
  CHECK(second.round == 2);
}

TEST_CASE("participation sampling is deterministic and correctly sized") {
  auto cfg = base_config(blob_fixture(4, 40, 64, 4, 2, 31), Algorithm::local_only,
                         repeat_arch(make_arch("tiny_mlp", 4), 4), 511);
  cfg.round.participation = 0.5;
  Simulation sim(std::move(cfg));
  std::set<std::vector<std::int64_t>> seen;
  for (std::int64_t r = 1; r <= 5; ++r) {
    std::vector<std::int64_t> expected = sim.sampled_participants(r);
    CHECK(expected.size() == 2);
    RoundMetrics m = sim.run_round();
    std::vector<std::int64_t> got;
    for (const auto& row : m.rows) got.push_back(row.client_id);
    CHECK(got == expected);
    seen.insert(expected);
  }
  CHECK(seen.size() >= 2);
}

TEST_CASE("zero local epochs leave the server network fixed") {
  auto cfg = base_config(blob_fixture(4, 30, 64, 3, 2, 32), Algorithm::pfedhn,
                         repeat_arch(make_arch("tiny_mlp", 4), 3), 512);
  cfg.round.local_epochs = 0;
  Simulation sim(std::move(cfg));
  std::uint64_t before = sim.hypernet()->state_hash();
  RoundMetrics m = sim.run_round();
  sim.run_round();
  CHECK(sim.hypernet()->state_hash() == before);
  REQUIRE(!m.rows.empty());
  std::int64_t k = flat_param_count(make_arch("tiny_mlp", 4));
  CHECK(m.rows.front().uplink_bytes == k * kWireValueBytes);
}

TEST_CASE("resuming from a checkpoint reproduces the straight run") {
  auto make = [&] {
    auto cfg = base_config(blob_fixture(4, 40, 192, 4, 2, 33), Algorithm::pfedhn_gd,
                           mixed_fleet(4), 513);
    cfg.round.lambda = 0.5;
    return Simulation(std::move(cfg));
  };
  Simulation straight = make();
  std::string full_csv = run_csv(straight, 4);

  Simulation head = make();
  run_csv(head, 2);
  std::ostringstream saved(std::ios::binary);
  head.save_checkpoint(saved);

  Simulation resumed = make();
  std::istringstream in(saved.str(), std::ios::binary);
  resumed.load_checkpoint(in);
  CHECK(resumed.next_round() == 3);
  std::string tail_csv = run_csv(resumed, 2);

  // The straight run's rows for rounds 3 and 4 must appear verbatim.
  std::string tail_rows = tail_csv.substr(tail_csv.find('\n') + 1);
  CHECK(full_csv.find(tail_rows) != std::string::npos);
  CHECK(straight.hypernet_blob() == resumed.hypernet_blob());
  for (std::int64_t i = 0; i < 4; ++i) {
    CHECK(straight.client_model(i).pack().values == resumed.client_model(i).pack().values);
  }
}

TEST_CASE("weight-averaging checkpoints restore the global model bitwise") {
  auto make = [&] {
    return Simulation(base_config(blob_fixture(4, 30, 64, 2, 2, 34), Algorithm::fedavg,
                                  repeat_arch(make_arch("tiny_mlp", 4), 2), 514));
  };
  Simulation straight = make();
  run_csv(straight, 4);

  Simulation head = make();
  run_csv(head, 2);
  std::ostringstream saved(std::ios::binary);
  head.save_checkpoint(saved);

  Simulation resumed = make();
  std::istringstream in(saved.str(), std::ios::binary);
  resumed.load_checkpoint(in);
  run_csv(resumed, 2);
  CHECK(straight.global_model()->pack().values == resumed.global_model()->pack().values);
}

TEST_CASE("checkpoints reject mismatched configurations and corrupt bytes") {
  auto cfg_a = base_config(blob_fixture(4, 30, 64, 2, 2, 35), Algorithm::pfedhn,
                           repeat_arch(make_arch("tiny_mlp", 4), 2), 515);
  Simulation a(std::move(cfg_a));
  a.run_round();
  std::ostringstream saved(std::ios::binary);
  a.save_checkpoint(saved);
  std::string blob = saved.str();

  auto cfg_b = base_config(blob_fixture(4, 30, 64, 2, 2, 35), Algorithm::pfedhn,
                           repeat_arch(make_arch("tiny_mlp", 4), 2), 999);
  Simulation b(std::move(cfg_b));
  std::istringstream wrong_seed(blob, std::ios::binary);
  CHECK_THROWS_AS(b.load_checkpoint(wrong_seed), config_error);

  std::string corrupt = blob;
  corrupt[0] = 'X';
  std::istringstream bad_magic(corrupt, std::ios::binary);
  CHECK_THROWS_AS(a.load_checkpoint(bad_magic), io_error);

  std::istringstream truncated(blob.substr(0, blob.size() / 2), std::ios::binary);
  CHECK_THROWS_AS(a.load_checkpoint(truncated), io_error);
}

TEST_CASE("held-out clients train against a frozen server network") {
  auto train_cfg = base_config(blob_fixture(4, 40, 64, 3, 2, 36), Algorithm::pfedhn,
                               repeat_arch(make_arch("tiny_mlp", 4), 3), 516);
  Simulation trained(std::move(train_cfg));
  run_csv(trained, 2);
  std::string blob = trained.hypernet_blob();

  EngineFixture holdout = blob_fixture(4, 40, 64, 3, 2, 36);
  SimulationConfig cfg;
  cfg.dataset = std::move(holdout.ds);
  cfg.plan = partition_quantity_skew(cfg.dataset, 2, 2, 91);
  cfg.client_archs = repeat_arch(make_arch("tiny_mlp", 4), 2);
  cfg.algorithm = Algorithm::pfedhn;
  cfg.seed = 517;
  cfg.round.local_epochs = 1;
  cfg.client_id_base = 3;
  cfg.pretrained_hypernet = blob;
  cfg.freeze = HypernetFreeze::embeddings_only;
  cfg.phase_tag_override = "holdout";
  Simulation gen(std::move(cfg));

  std::uint64_t extractor_before = gen.hypernet()->extractor_hash();
  std::uint64_t heads_before = gen.hypernet()->heads_hash();
  std::uint64_t embeddings_before = gen.hypernet()->embeddings_hash();
  RoundMetrics m = gen.run_round();
  gen.run_round();
  CHECK(gen.hypernet()->extractor_hash() == extractor_before);
  CHECK(gen.hypernet()->heads_hash() == heads_before);
  CHECK(gen.hypernet()->embeddings_hash() != embeddings_before);
  std::vector<std::int64_t> ids;
  for (const auto& row : m.rows) {
    CHECK(row.phase == "holdout");
    ids.push_back(row.client_id);
  }
  CHECK(ids == std::vector<std::int64_t>{3, 4});
}

TEST_CASE("an unseen chunk count under new-head freeze adds exactly one group") {
  auto train_cfg = base_config(blob_fixture(4, 40, 64, 3, 2, 37), Algorithm::pfedhn,
                               repeat_arch(make_arch("tiny_mlp", 4), 3), 518);
  Simulation trained(std::move(train_cfg));
  run_csv(trained, 2);
  std::size_t groups_before = trained.hypernet()->group_keys().size();
  std::string blob = trained.hypernet_blob();

  EngineFixture holdout = blob_fixture(4, 40, 64, 3, 2, 37);
  SimulationConfig cfg;
  cfg.dataset = std::move(holdout.ds);
  cfg.plan = partition_quantity_skew(cfg.dataset, 2, 2, 92);
  cfg.client_archs = repeat_arch(wide_mlp(4), 2);
  cfg.algorithm = Algorithm::pfedhn;
  cfg.seed = 519;
  cfg.round.local_epochs = 1;
  cfg.client_id_base = 3;
  cfg.pretrained_hypernet = blob;
  cfg.freeze = HypernetFreeze::new_head;
  cfg.phase_tag_override = "holdout";
  Simulation gen(std::move(cfg));

  CHECK(gen.hypernet()->group_keys().size() == groups_before + 1);
  std::uint64_t extractor_before = gen.hypernet()->extractor_hash();
  std::uint64_t heads_before = gen.hypernet()->heads_hash();
  gen.run_round();
  gen.run_round();
  CHECK(gen.hypernet()->extractor_hash() == extractor_before);
  // The fresh head group trains while the original groups stay frozen.
  CHECK(gen.hypernet()->heads_hash() != heads_before);
}

TEST_CASE("generated batchnorm statistics evaluate without numeric failures") {
  auto cfg = base_config(blob_fixture(4, 30, 192, 2, 2, 38), Algorithm::pfedhn_gd,
                         {make_arch("tiny_resnet", 4), make_arch("tiny_mlp192", 4)}, 520);
  cfg.round.lambda = 0.5;
  cfg.global_arch = make_arch("tiny_resnet", 4);
  Simulation sim(std::move(cfg));
  RoundMetrics m = sim.run_round();
  for (const auto& row : m.rows) {
    CHECK(std::isfinite(row.accuracy));
    CHECK(std::isfinite(row.loss));
  }
}

TEST_CASE("configuration errors are reported before any round runs") {
  SUBCASE("weight averaging rejects mixed architectures") {
    auto cfg = base_config(blob_fixture(4, 30, 192, 2, 2, 39), Algorithm::fedavg,
                           {make_arch("tiny_mlp192", 4), make_arch("tiny_cnn", 4)}, 521);
    CHECK_THROWS_AS(Simulation{std::move(cfg)}, config_error);
  }
  SUBCASE("input width must match the dataset example width") {
    auto cfg = base_config(blob_fixture(4, 30, 32, 2, 2, 40), Algorithm::pfedhn,
                           repeat_arch(make_arch("tiny_mlp", 4), 2), 522);
    CHECK_THROWS_AS(Simulation{std::move(cfg)}, config_error);
  }
  SUBCASE("class counts must match the dataset") {
    auto cfg = base_config(blob_fixture(4, 30, 64, 2, 2, 41), Algorithm::pfedhn,
                           repeat_arch(make_arch("tiny_mlp", 6), 2), 523);
    CHECK_THROWS_AS(Simulation{std::move(cfg)}, config_error);
  }
  SUBCASE("one architecture per client is required") {
    auto cfg = base_config(blob_fixture(4, 30, 64, 3, 2, 42), Algorithm::pfedhn,
                           repeat_arch(make_arch("tiny_mlp", 4), 2), 524);
    CHECK_THROWS_AS(Simulation{std::move(cfg)}, config_error);
  }
  SUBCASE("workers must be positive") {
    auto cfg = base_config(blob_fixture(4, 30, 64, 2, 2, 43), Algorithm::pfedhn,
                           repeat_arch(make_arch("tiny_mlp", 4), 2), 525);
    cfg.workers = 0;
    CHECK_THROWS_AS(Simulation{std::move(cfg)}, config_error);
  }
  SUBCASE("freeze modes require a hypernetwork algorithm") {
    auto cfg = base_config(blob_fixture(4, 30, 64, 2, 2, 44), Algorithm::local_only,
                           repeat_arch(make_arch("tiny_mlp", 4), 2), 526);
    cfg.freeze = HypernetFreeze::embeddings_only;
    CHECK_THROWS_AS(Simulation{std::move(cfg)}, config_error);
  }
  SUBCASE("every client needs train and test examples") {
    Dataset ds = synth_blobs(3, 3, 64, 0.35, 78);
    PartitionPlan plan = manual_plan({{{0, 1, 2}, {}}, {{3, 4, 5}, {6, 7, 8}}});
    SimulationConfig cfg;
    cfg.dataset = std::move(ds);
    cfg.plan = std::move(plan);
    cfg.client_archs = repeat_arch(make_arch("tiny_mlp", 3), 2);
    cfg.algorithm = Algorithm::pfedhn;
    cfg.seed = 527;
    CHECK_THROWS_AS(Simulation{std::move(cfg)}, config_error);
  }
  SUBCASE("the global architecture cannot carry local-only layers") {
    auto cfg = base_config(blob_fixture(4, 30, 64, 2, 2, 45), Algorithm::pfedhn_gd,
                           repeat_arch(make_arch("tiny_mlp", 4), 2), 528);
    ArchitectureSpec g = make_arch("tiny_mlp", 4);
    g.layers[2].generated = false;
    g.layers[2].local_only = true;
    cfg.global_arch = g;
    CHECK_THROWS_AS(Simulation{std::move(cfg)}, config_error);
  }
}

TEST_CASE("the default global architecture is the smallest client model") {
  auto cfg = base_config(blob_fixture(4, 40, 192, 3, 2, 46), Algorithm::pfedhn_gd,
                         {make_arch("tiny_cnn", 4), make_arch("tiny_lenet", 4),
                          make_arch("tiny_vgg", 4)},
                         529);
  cfg.round.lambda = 0.5;
  Simulation sim(std::move(cfg));
  std::int64_t expected = std::min({flat_param_count(make_arch("tiny_cnn", 4)),
                                    flat_param_count(make_arch("tiny_lenet", 4)),
                                    flat_param_count(make_arch("tiny_vgg", 4))});
  CHECK(sim.hypernet()->param_count_of(Hypernetwork::kGlobalSlot) == expected);
  CHECK(sim.hypernet()->min_client_param_count() == expected);
  RoundMetrics m = sim.run_round();
  for (const auto& row : m.rows) {
    if (row.phase == "global") {
      CHECK(row.downlink_bytes == expected * kWireValueBytes);
    }
  }
}

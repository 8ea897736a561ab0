#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "hnfl/errors.hpp"
#include "hnfl/hypernet.hpp"
#include "hnfl/rng.hpp"
#include "oracles.hpp"

using namespace hnfl;

namespace {

HypernetConfig tiny_cfg(std::int64_t d, std::int64_t h, std::int64_t n) {
  HypernetConfig cfg;
  cfg.embedding_dim = d;
  cfg.hidden_dim = h;
  cfg.chunk_width = n;
  return cfg;
}

void fill(Tensor& t, std::initializer_list<double> values) {
  REQUIRE(t.data.size() == values.size());
  std::copy(values.begin(), values.end(), t.data.begin());
}

std::string serialized(const Hypernetwork& hn) {
  std::ostringstream out;
  hn.save(out);
  return out.str();
}

std::vector<double> random_upstream(std::size_t n, Rng& rng) {
  std::vector<double> u(n);
  for (auto& v : u) v = rng.normal(0.0, 1.0);
  return u;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("chunk count satisfies the ceiling law") {
  Rng rng(401);
  for (int trial = 0; trial < 500; ++trial) {
    std::int64_t n = 1 + static_cast<std::int64_t>(rng.uniform_int(64));
    std::int64_t k = 1 + static_cast<std::int64_t>(rng.uniform_int(4 * n));
    std::int64_t tau = chunk_count_for(k, n);
    CHECK((tau - 1) * n < k);
    CHECK(k <= tau * n);
  }
  CHECK(chunk_count_for(3072, 3072) == 1);
  CHECK(chunk_count_for(239856, 3072) == 79);
  CHECK_THROWS_AS(chunk_count_for(0, 3072), config_error);
}

TEST_CASE("clients with the same parameter count share one head") {
  Hypernetwork hn(tiny_cfg(4, 4, 8), 100);
  auto r0 = hn.register_client(0, 20);
  auto r1 = hn.register_client(1, 20);
  auto r2 = hn.register_client(2, 9);
  CHECK(r0.chunks == 3);
  CHECK(r0.group_key == r1.group_key);
  CHECK(hn.same_head(0, 1));
  CHECK_FALSE(hn.same_head(0, 2));
  CHECK(&hn.group(r0.group_key) == &hn.group(r1.group_key));
  CHECK(r2.chunks == 2);
  // Same head, private embeddings.
  CHECK(&hn.embedding_of(0) != &hn.embedding_of(1));
  CHECK(hn.embedding_of(0).data != hn.embedding_of(1).data);
  CHECK(hn.group(r0.group_key).members == std::vector<std::int64_t>{0, 1});
}

TEST_CASE("generated vector length always equals the requested count") {
  Hypernetwork hn(tiny_cfg(3, 3, 8), 101);
  std::int64_t id = 0;
  for (std::int64_t k : {1, 7, 8, 9, 16, 17, 24, 31, 32}) {
    hn.register_client(id, k);
    CHECK(hn.peek_client(id).size() == k);
    ++id;
  }
}

TEST_CASE("zeroed weights generate a zero vector") {
  Hypernetwork hn(tiny_cfg(3, 3, 4), 102);
  hn.register_client(0, 10);
  for (Tensor* t : hn.extractor_tensors()) std::fill(t->data.begin(), t->data.end(), 0.0);
  auto& g = hn.group(hn.group_key_of(0));
  for (auto& p : g.channel_w) std::fill(p.value.data.begin(), p.value.data.end(), 0.0);
  for (auto& p : g.channel_b) std::fill(p.value.data.begin(), p.value.data.end(), 0.0);
  FlatParams theta = hn.peek_client(0);
  for (double v : theta.values) CHECK(v == 0.0);
}

TEST_CASE("generation matches the hand-computed chain on fixed weights") {
  Hypernetwork hn(tiny_cfg(2, 2, 3), 103);
  hn.register_client(0, 5);
  auto ext = hn.extractor_tensors();
  fill(*ext[0], {0.2, -0.4, 0.6, 0.1});
  fill(*ext[1], {0.05, -0.1});
  fill(*ext[2], {1.0, 0.5, -0.3, 0.8});
  fill(*ext[3], {0.2, 0.0});
  fill(*ext[4], {0.7, -0.2, 0.4, 0.9});
  fill(*ext[5], {-0.1, 0.3});
  auto& g = hn.group(hn.group_key_of(0));
  fill(g.channel_w[0].value, {0.1, 0.2, 0.3, -0.4, 0.5, -0.6});
  fill(g.channel_b[0].value, {0.01, -0.02, 0.03});
  fill(g.channel_w[1].value, {0.9, -0.8, 0.7, 0.2, 0.3, -0.1});
  fill(g.channel_b[1].value, {0.0, 0.1, -0.2});
  fill(hn.embedding_of(0), {0.5, -1.0, 1.5, 0.25});

  FlatParams theta = hn.peek_client(0);
  std::vector<double> expected = {-0.09, 0.118, -0.114, 0.518, -0.1765};
  REQUIRE(theta.size() == 5);
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(theta.values[i] == doctest::Approx(expected[i]).epsilon(1e-12));
  }
}

TEST_CASE("vector-Jacobian product matches finite differences on tiny configurations") {
  Rng rng(404);
  int fixtures = 0;
  for (int trial = 0; trial < 12; ++trial) {
    std::int64_t d = 2 + static_cast<std::int64_t>(rng.uniform_int(3));
    std::int64_t h = 2 + static_cast<std::int64_t>(rng.uniform_int(3));
    std::int64_t n = 2 + static_cast<std::int64_t>(rng.uniform_int(7));
    std::int64_t tau = 1 + static_cast<std::int64_t>(rng.uniform_int(3));
    std::int64_t k = (tau - 1) * n + 1 + static_cast<std::int64_t>(rng.uniform_int(n));
    HypernetConfig cfg = tiny_cfg(d, h, n);
    cfg.use_heads = trial % 3 != 2;
    Hypernetwork hn(cfg, 500 + static_cast<std::uint64_t>(trial));
    hn.register_client(0, k);
    std::vector<double> u = random_upstream(static_cast<std::size_t>(k), rng);

    auto score = [&] { return dot(hn.peek_client(0).values, u); };
    HypernetGrads g = hn.vjp_for_client(0, u);

    double worst = 0.0;
    auto check_tensor = [&](Tensor& param, const Tensor& analytic) {
      Tensor fd = oracle::fd_grad(param, score);
      worst = std::max(worst, oracle::max_rel_err(analytic, fd));
    };
    auto ext = hn.extractor_tensors();
    for (std::size_t i = 0; i < ext.size(); ++i) check_tensor(*ext[i], g.extractor[i]);
    if (cfg.use_heads) {
      auto& grp = hn.group(hn.group_key_of(0));
      for (std::size_t j = 0; j < grp.channel_w.size(); ++j) {
        check_tensor(grp.channel_w[j].value, g.head_w[j]);
        check_tensor(grp.channel_b[j].value, g.head_b[j]);
      }
    }
    check_tensor(hn.embedding_of(0), g.embedding);
    CHECK_MESSAGE(worst < 1e-5, "fixture ", trial);
    ++fixtures;
  }
  CHECK(fixtures == 12);
}

TEST_CASE("zero upstream gives zero gradients") {
  Hypernetwork hn(tiny_cfg(3, 3, 4), 105);
  hn.register_client(0, 7);
  std::vector<double> u(7, 0.0);
  HypernetGrads g = hn.vjp_for_client(0, u);
  for (const auto& t : g.extractor)
    for (double v : t.data) CHECK(v == 0.0);
  for (const auto& t : g.head_w)
    for (double v : t.data) CHECK(v == 0.0);
  for (const auto& t : g.head_b)
    for (double v : t.data) CHECK(v == 0.0);
  for (double v : g.embedding.data) CHECK(v == 0.0);
}

TEST_CASE("upstream length mismatches are rejected") {
  Hypernetwork hn(tiny_cfg(3, 3, 4), 106);
  hn.register_client(0, 7);
  CHECK_THROWS_AS(hn.vjp_for_client(0, std::vector<double>(8, 1.0)), shape_error);
  CHECK_THROWS_AS(hn.vjp_for_client(0, std::vector<double>(6, 1.0)), shape_error);
}

TEST_CASE("zero delta leaves every byte of state untouched") {
  Hypernetwork hn(tiny_cfg(3, 3, 4), 107);
  hn.register_client(0, 7);
  hn.begin_round(1);
  hn.serve_client(0);
  std::string before = serialized(hn);
  hn.apply_personal_update(0, std::vector<double>(7, 0.0));
  CHECK(serialized(hn) == before);
}

TEST_CASE("an update moves regenerated parameters toward the trained ones") {
  Hypernetwork hn(tiny_cfg(4, 6, 8), 108);
  hn.register_client(0, 19);
  hn.begin_round(1);
  FlatParams served = hn.serve_client(0);
  Rng rng(409);
  std::vector<double> delta = random_upstream(19, rng);
  hn.apply_personal_update(0, delta);
  FlatParams regenerated = hn.peek_client(0);
  double moved = 0.0;
  for (std::size_t i = 0; i < delta.size(); ++i) {
    moved += (regenerated.values[i] - served.values[i]) * delta[i];
  }
  CHECK(moved > 0.0);
}

TEST_CASE("updating one client leaves its group peer's embedding bit-identical") {
  Hypernetwork hn(tiny_cfg(3, 3, 4), 109);
  hn.register_client(0, 10);
  hn.register_client(1, 10);
  std::vector<double> peer_embedding = hn.embedding_of(1).data;
  std::uint64_t heads_before = hn.heads_hash();
  std::uint64_t extractor_before = hn.extractor_hash();

  hn.begin_round(1);
  hn.serve_client(0);
  Rng rng(410);
  hn.apply_personal_update(0, random_upstream(10, rng));

  CHECK(hn.embedding_of(1).data == peer_embedding);
  CHECK(hn.heads_hash() != heads_before);
  CHECK(hn.extractor_hash() != extractor_before);
}

TEST_CASE("global slot adopts the smallest client's head") {
  Hypernetwork hn(tiny_cfg(3, 3, 4), 110);
  hn.register_client(0, 5);
  hn.register_client(1, 9);
  CHECK(hn.min_client_param_count() == 5);
  auto rg = hn.register_global(hn.min_client_param_count());
  CHECK(rg.chunks == 2);
  CHECK(hn.same_head(Hypernetwork::kGlobalSlot, 0));
  CHECK_FALSE(hn.same_head(Hypernetwork::kGlobalSlot, 1));
  CHECK(hn.peek_global().size() == 5);
  // The global embedding is private even though the head is shared.
  CHECK(&hn.embedding_of(Hypernetwork::kGlobalSlot) != &hn.embedding_of(0));
}

TEST_CASE("global slot with an unmatched count gets a dedicated head group") {
  Hypernetwork hn(tiny_cfg(3, 3, 4), 111);
  hn.register_client(0, 5);
  CHECK(hn.group_keys().size() == 1);
  hn.register_global(12);
  CHECK(hn.group_keys().size() == 2);
  CHECK(hn.peek_global().size() == 12);
}

TEST_CASE("min client count requires at least one registered client") {
  Hypernetwork hn(tiny_cfg(3, 3, 4), 112);
  CHECK_THROWS_AS(hn.min_client_param_count(), config_error);
}

TEST_CASE("a single-source global update equals a personal update on the global slot") {
  Rng rng(413);
  std::vector<double> delta = random_upstream(5, rng);
  auto build = [] {
    Hypernetwork hn(tiny_cfg(3, 3, 4), 113);
    hn.register_client(0, 5);
    hn.register_global(5);
    hn.begin_round(1);
    hn.serve_global();
    return hn;
  };
  Hypernetwork a = build();
  a.apply_global_update({{0, delta, 7.0}});
  Hypernetwork b = build();
  b.apply_personal_update(Hypernetwork::kGlobalSlot, delta);
  CHECK(serialized(a) == serialized(b));
}

TEST_CASE("global deltas combine by example-count weights") {
  // Dyadic values keep the weighted average exact, so the two builds must
  // agree bitwise.
  std::vector<double> d0 = {0.5, -1.0, 2.0, 0.25, -4.0};
  std::vector<double> d1 = {4.0, -0.25, 0.5, 8.0, 1.0};
  std::vector<double> combined(5);
  for (int i = 0; i < 5; ++i) combined[i] = 0.25 * d0[i] + 0.75 * d1[i];

  auto build = [] {
    Hypernetwork hn(tiny_cfg(3, 3, 4), 114);
    hn.register_client(0, 5);
    hn.register_client(1, 5);
    hn.register_global(5);
    hn.begin_round(1);
    hn.serve_global();
    return hn;
  };
  Hypernetwork a = build();
  a.apply_global_update({{0, d0, 1.0}, {1, d1, 3.0}});
  Hypernetwork b = build();
  b.apply_global_update({{0, combined, 9.0}});
  CHECK(serialized(a) == serialized(b));
}

TEST_CASE("all-zero global deltas change nothing") {
  Hypernetwork hn(tiny_cfg(3, 3, 4), 115);
  hn.register_client(0, 5);
  hn.register_global(5);
  hn.begin_round(1);
  hn.serve_global();
  std::string before = serialized(hn);
  hn.apply_global_update({{0, std::vector<double>(5, 0.0), 2.0}});
  CHECK(serialized(hn) == before);
}

TEST_CASE("truncated head outputs never influence generation") {
  Hypernetwork hn(tiny_cfg(3, 3, 3), 116);
  hn.register_client(0, 5);  // two chunks, last chunk uses 2 of 3 entries
  FlatParams before = hn.peek_client(0);
  auto& g = hn.group(hn.group_key_of(0));
  // Output column 2 of the second channel feeds flat index 5, past the end.
  Tensor& w = g.channel_w[1].value;
  for (std::int64_t r = 0; r < w.shape[0]; ++r) w.at(r, 2) = 1e9;
  g.channel_b[1].value.data[2] = -1e9;
  FlatParams after = hn.peek_client(0);
  CHECK(before.values == after.values);

  // The same tail entries receive zero gradient.
  std::vector<double> u = {1.0, -2.0, 0.5, 3.0, -1.5};
  HypernetGrads grads = hn.vjp_for_client(0, u);
  for (std::int64_t r = 0; r < w.shape[0]; ++r) CHECK(grads.head_w[1].at(r, 2) == 0.0);
  CHECK(grads.head_b[1].data[2] == 0.0);
}

TEST_CASE("embeddings-only freeze pins the extractor and every head") {
  Hypernetwork hn(tiny_cfg(3, 4, 5), 117);
  hn.register_client(0, 12);
  hn.register_client(1, 7);
  hn.freeze_for_generalization(HypernetFreeze::embeddings_only);
  CHECK(hn.freeze_mode() == HypernetFreeze::embeddings_only);

  std::uint64_t extractor = hn.extractor_hash();
  std::uint64_t heads = hn.heads_hash();
  std::vector<double> idle_before = hn.peek_client(1).values;
  std::vector<double> active_embedding = hn.embedding_of(0).data;

  Rng rng(418);
  for (std::int64_t round = 1; round <= 20; ++round) {
    hn.begin_round(round);
    hn.serve_client(0);
    hn.apply_personal_update(0, random_upstream(12, rng));
  }

  CHECK(hn.extractor_hash() == extractor);
  CHECK(hn.heads_hash() == heads);
  CHECK(hn.embedding_of(0).data != active_embedding);
  // A client that never participates is served bit-identical parameters.
  CHECK(hn.peek_client(1).values == idle_before);
}

TEST_CASE("embeddings-only freeze also pins groups created afterwards") {
  Hypernetwork hn(tiny_cfg(3, 4, 5), 118);
  hn.register_client(0, 12);
  hn.freeze_for_generalization(HypernetFreeze::embeddings_only);
  hn.register_client(1, 7);
  std::uint64_t heads = hn.heads_hash();
  Rng rng(419);
  hn.begin_round(1);
  hn.serve_client(1);
  hn.apply_personal_update(1, random_upstream(7, rng));
  CHECK(hn.heads_hash() == heads);
}

TEST_CASE("new-head freeze trains only heads added after the freeze") {
  Hypernetwork hn(tiny_cfg(3, 4, 5), 119);
  hn.register_client(0, 12);
  std::int64_t old_key = hn.group_key_of(0);
  hn.freeze_for_generalization(HypernetFreeze::new_head);
  hn.register_client(1, 7);
  std::int64_t new_key = hn.group_key_of(1);
  REQUIRE(old_key != new_key);

  std::uint64_t extractor = hn.extractor_hash();
  auto group_bytes = [&](std::int64_t key) {
    const HeadGroup& g = hn.group(key);
    std::vector<double> out;
    for (const auto& p : g.channel_w) out.insert(out.end(), p.value.data.begin(), p.value.data.end());
    for (const auto& p : g.channel_b) out.insert(out.end(), p.value.data.begin(), p.value.data.end());
    return out;
  };
  std::vector<double> old_head = group_bytes(old_key);
  std::vector<double> new_head = group_bytes(new_key);

  Rng rng(420);
  hn.begin_round(1);
  hn.serve_client(1);
  hn.apply_personal_update(1, random_upstream(7, rng));

  CHECK(hn.extractor_hash() == extractor);
  CHECK(group_bytes(old_key) == old_head);
  CHECK(group_bytes(new_key) != new_head);
}

TEST_CASE("headless configuration generates and differentiates") {
  HypernetConfig cfg = tiny_cfg(3, 4, 6);
  cfg.use_heads = false;
  Hypernetwork hn(cfg, 120);
  hn.register_client(0, 10);
  CHECK(hn.group(hn.group_key_of(0)).channel_w.empty());
  CHECK(hn.peek_client(0).size() == 10);

  hn.begin_round(1);
  FlatParams served = hn.serve_client(0);
  Rng rng(421);
  std::vector<double> delta = random_upstream(10, rng);
  hn.apply_personal_update(0, delta);
  FlatParams regenerated = hn.peek_client(0);
  double moved = 0.0;
  for (std::size_t i = 0; i < delta.size(); ++i) {
    moved += (regenerated.values[i] - served.values[i]) * delta[i];
  }
  CHECK(moved > 0.0);
}

TEST_CASE("per-client grouping gives every client a private head") {
  HypernetConfig cfg = tiny_cfg(3, 3, 4);
  cfg.grouping = HeadGrouping::per_client;
  Hypernetwork hn(cfg, 121);
  hn.register_client(0, 10);
  hn.register_client(1, 10);
  CHECK_FALSE(hn.same_head(0, 1));
  CHECK(hn.group_keys().size() == 2);
}

TEST_CASE("exact-count grouping splits clients whose chunk counts agree") {
  HypernetConfig cfg = tiny_cfg(3, 3, 4);
  cfg.grouping = HeadGrouping::by_param_count;
  Hypernetwork hn(cfg, 122);
  hn.register_client(0, 5);
  hn.register_client(1, 6);  // same chunk count, different exact count
  hn.register_client(2, 5);
  CHECK_FALSE(hn.same_head(0, 1));
  CHECK(hn.same_head(0, 2));
}

TEST_CASE("shared-embedding mode lets group peers read one matrix") {
  HypernetConfig cfg = tiny_cfg(3, 3, 4);
  cfg.shared_group_embeddings = true;
  Hypernetwork hn(cfg, 123);
  hn.register_client(0, 10);
  hn.register_client(1, 10);
  CHECK(&hn.embedding_of(0) == &hn.embedding_of(1));

  std::vector<double> peer_before = hn.peek_client(1).values;
  hn.begin_round(1);
  hn.serve_client(0);
  Rng rng(424);
  hn.apply_personal_update(0, random_upstream(10, rng));
  CHECK(hn.peek_client(1).values != peer_before);
}

TEST_CASE("chunk-count advisory fires only when chunks do not exceed layers") {
  Hypernetwork hn(tiny_cfg(3, 3, 4), 124);
  hn.register_client(0, 13, 3);  // four chunks, three layers: fine
  CHECK(hn.warnings().empty());
  hn.register_client(1, 13, 4);  // four chunks, four layers: advisory
  CHECK(hn.warnings().size() == 1);
}

TEST_CASE("registration and update errors are rejected") {
  Hypernetwork hn(tiny_cfg(3, 3, 4), 125);
  CHECK_THROWS_AS(hn.register_client(0, 0), config_error);
  CHECK_THROWS_AS(hn.register_client(-2, 5), config_error);
  hn.register_client(0, 5);
  CHECK_THROWS_AS(hn.register_client(0, 5), config_error);
  CHECK_THROWS_AS(hn.peek_client(3), config_error);
  CHECK_THROWS_AS(hn.apply_personal_update(3, {1.0}), config_error);

  // Serving in an earlier round leaves the update stale.
  hn.begin_round(1);
  hn.serve_client(0);
  hn.begin_round(2);
  CHECK_THROWS_AS(hn.apply_personal_update(0, std::vector<double>(5, 1.0)), config_error);
  CHECK_THROWS_AS(hn.begin_round(1), config_error);

  // Unserved client cannot be updated even in the current round.
  Hypernetwork fresh(tiny_cfg(3, 3, 4), 126);
  fresh.register_client(0, 5);
  fresh.begin_round(1);
  CHECK_THROWS_AS(fresh.apply_personal_update(0, std::vector<double>(5, 1.0)), config_error);

  fresh.register_global(5);
  fresh.serve_global();
  CHECK_THROWS_AS(fresh.apply_global_update({}), config_error);
  CHECK_THROWS_AS(fresh.apply_global_update({{0, std::vector<double>(5, 1.0), -1.0}}),
                  config_error);
  CHECK_THROWS_AS(fresh.apply_global_update({{0, std::vector<double>(4, 1.0), 1.0}}),
                  shape_error);
}

TEST_CASE("checkpoints round-trip byte-exactly and resume identically") {
  Hypernetwork hn(tiny_cfg(3, 4, 5), 127);
  hn.register_client(0, 12, 0, "arch_a");
  hn.register_client(1, 7, 0, "arch_b");
  hn.register_global(7, "arch_b");
  Rng rng(428);
  hn.begin_round(1);
  hn.serve_client(0);
  hn.apply_personal_update(0, random_upstream(12, rng));
  hn.serve_global();
  hn.apply_global_update({{1, random_upstream(7, rng), 3.0}});

  std::string image = serialized(hn);
  std::istringstream in(image);
  Hypernetwork loaded = Hypernetwork::load(in);
  CHECK(serialized(loaded) == image);
  CHECK(loaded.peek_client(0).values == hn.peek_client(0).values);
  CHECK(loaded.peek_client(0).arch_name == "arch_a");

  // Both copies evolve identically, including fresh registrations that
  // draw from the restored creation stream.
  std::vector<double> delta = random_upstream(12, rng);
  hn.begin_round(2);
  loaded.begin_round(2);
  hn.serve_client(0);
  loaded.serve_client(0);
  hn.apply_personal_update(0, delta);
  loaded.apply_personal_update(0, delta);
  hn.register_client(9, 11);
  loaded.register_client(9, 11);
  CHECK(serialized(loaded) == serialized(hn));
}

TEST_CASE("corrupt checkpoints are rejected") {
  Hypernetwork hn(tiny_cfg(3, 3, 4), 129);
  hn.register_client(0, 5);
  std::string image = serialized(hn);

  std::istringstream bad_magic("XXXXXXXX" + image.substr(8));
  CHECK_THROWS_AS(Hypernetwork::load(bad_magic), io_error);
  std::istringstream truncated(image.substr(0, image.size() / 2));
  CHECK_THROWS_AS(Hypernetwork::load(truncated), io_error);
}

TEST_CASE("embedding initialization is registration-order independent") {
  Hypernetwork a(tiny_cfg(4, 4, 6), 130);
  a.register_client(0, 9);
  a.register_client(1, 14);
  Hypernetwork b(tiny_cfg(4, 4, 6), 130);
  b.register_client(1, 14);
  b.register_client(0, 9);
  CHECK(a.embedding_of(0).data == b.embedding_of(0).data);
  CHECK(a.embedding_of(1).data == b.embedding_of(1).data);
}

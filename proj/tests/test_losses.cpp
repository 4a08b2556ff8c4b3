#include <doctest.h>

#include <cmath>
#include <random>

#include "freeview/losses.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace freeview;

namespace {

std::vector<EmbeddingPair> random_batch(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  std::vector<EmbeddingPair> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(testsupport::random_pair(rng, d));
  return out;
}

std::vector<TripletIndex> random_triplets(std::mt19937_64& rng, std::size_t n_emb, std::size_t count) {
  std::uniform_int_distribution<std::size_t> pick(0, n_emb - 1);
  std::vector<TripletIndex> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back({pick(rng), pick(rng), pick(rng)});
  return out;
}

// Consecutive index groups of sizes 1..6 covering [0, n).
std::vector<std::vector<std::size_t>> random_groups(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<std::size_t> size(1, 6);
  std::vector<std::vector<std::size_t>> groups;
  std::size_t next = 0;
  while (next < n) {
    const std::size_t m = std::min(size(rng), n - next);
    std::vector<std::size_t> g;
    for (std::size_t k = 0; k < m; ++k) g.push_back(next++);
    groups.push_back(g);
  }
  if (std::none_of(groups.begin(), groups.end(), [](const auto& g) { return g.size() >= 2; })) groups = {{0, 1}};
  return groups;
}

EmbeddingPair pair_of(std::vector<double> c, std::vector<double> v) { return {std::move(c), std::move(v)}; }

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("triplet hinge examples") {
  // δ(a,p) = 0.2, δ(a,n) = 1.0
  const std::vector<double> a{0, 0}, p{0.2, 0}, n{0, 1.0};
  CHECK(triplet_hinge(a, p, n, 0.5) == 0.0);
  CHECK(triplet_hinge(a, p, p, 0.5) == doctest::Approx(0.5));
  // δ(a,p) = 0.9, δ(a,n) = 0.6
  const std::vector<double> p2{0.9, 0}, n2{0, 0.6};
  CHECK(triplet_hinge(a, p2, n2, 0.5) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK_THROWS_AS(triplet_hinge(a, std::vector<double>{1, 2, 3}, n, 0.5), DimensionError);
}

TEST_CASE("content triplet loss examples") {
  const std::vector<TripletIndex> t{{0, 1, 2}};
  std::vector<EmbeddingPair> same{pair_of({1, 2}, {0, 0}), pair_of({1, 2}, {3, 3}), pair_of({1, 2}, {-1, 5})};
  CHECK(loss_tri_va(same, t, 0.5) == doctest::Approx(0.5));
  std::vector<EmbeddingPair> sep{pair_of({0, 0}, {0, 0}), pair_of({0.2, 0}, {0, 0}), pair_of({0, 1}, {0, 0})};
  CHECK(loss_tri_va(sep, t, 0.5) == 0.0);
  CHECK_THROWS_AS(loss_tri_va(sep, {}, 0.5), LossError);
}

TEST_CASE("view-specific triplet loss examples") {
  const std::vector<TripletIndex> t{{0, 1, 2}};
  // f_vs: s = (0,0), p = (0,1), n = (2,0)
  std::vector<EmbeddingPair> e{pair_of({0, 0}, {0, 0}), pair_of({0, 0.5}, {0, 0.5}), pair_of({1, 0}, {1, 0})};
  CHECK(loss_tri_vs(e, t, 0.45) == 0.0);
  std::vector<EmbeddingPair> same{pair_of({1, 0}, {0, 1}), pair_of({0, 1}, {1, 0}), pair_of({0.5, 0.5}, {0.5, 0.5})};
  CHECK(loss_tri_vs(same, t, 0.45) == doctest::Approx(0.45));

  std::mt19937_64 rng(3);
  auto batch = random_batch(rng, 6, 4);
  for (auto& b : batch) std::fill(b.view.begin(), b.view.end(), 0.0);
  const auto ts = random_triplets(rng, 6, 5);
  CHECK(loss_tri_vs(batch, ts, 0.45) == doctest::Approx(loss_tri_va(batch, ts, 0.45)).epsilon(1e-14));
}

TEST_CASE("instance and view consistency examples") {
  std::vector<EmbeddingPair> e{pair_of({0, 0}, {1, 1}), pair_of({3, 4}, {1, 1}), pair_of({0, 0}, {4, 5})};
  const std::vector<IndexPair> p01{{0, 1}}, p02{{0, 2}};
  CHECK(loss_ic(e, p01) == doctest::Approx(5.0));
  CHECK(loss_ic(e, p02) == 0.0);
  CHECK(loss_vc(e, p01) == 0.0);
  CHECK(loss_vc(e, p02) == doctest::Approx(5.0));
  CHECK_THROWS_AS(loss_ic(e, {}), LossError);
  CHECK_THROWS_AS(loss_vc(e, {}), LossError);
  const std::vector<std::vector<std::size_t>> single{{0}};
  CHECK_THROWS_AS(loss_ic_exact(e, single), LossError);
}

TEST_CASE("reconstruction distance norms") {
  const std::vector<double> r{1, 1, 1, 1}, t{0, 0, 0, 0};
  CHECK(reconstruction_distance(r, t, VrNorm::frobenius) == doctest::Approx(2.0));
  CHECK(reconstruction_distance(r, t, VrNorm::root_mean_square) == doctest::Approx(1.0));
  CHECK(reconstruction_distance(t, t, VrNorm::frobenius) == 0.0);
}

TEST_CASE("all_pairs enumerates a < b") {
  const std::vector<std::size_t> g{4, 7, 9};
  const auto ps = all_pairs(g);
  REQUIRE(ps.size() == 3);
  CHECK((ps[0].a == 4 && ps[0].b == 7));
  CHECK((ps[1].a == 4 && ps[1].b == 9));
  CHECK((ps[2].a == 7 && ps[2].b == 9));
  for (std::size_t m = 0; m <= 6; ++m) CHECK(all_pairs(std::vector<std::size_t>(m, 0)).size() == m * (m - 1) / 2);
}

TEST_CASE("losses match brute-force oracles on random batches") {
  std::mt19937_64 rng(11);
  std::mt19937_64 init(12);
  Decoder<double> dec(testsupport::tiny_config(16, 4), init);
  std::uniform_int_distribution<std::size_t> bsz(2, 8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = bsz(rng);
    const auto e = random_batch(rng, n, 4);
    const auto t = random_triplets(rng, n, n);
    std::uniform_real_distribution<double> mu(0.0, 2.0);
    const double m = mu(rng);
    CHECK(loss_tri_va(e, t, m) == doctest::Approx(oracle::tri_va(e, t, m)).epsilon(1e-12));
    CHECK(loss_tri_vs(e, t, m) == doctest::Approx(oracle::tri_vs(e, t, m)).epsilon(1e-12));
    const auto groups = random_groups(rng, n);
    CHECK(loss_ic_exact(e, groups) == doctest::Approx(oracle::ic_groups(e, groups)).epsilon(1e-12));
    std::vector<IndexPair> matched;
    for (std::size_t i = 0; i + 1 < n; i += 2) matched.push_back({i, i + 1});
    CHECK(loss_vc(e, matched) == doctest::Approx(oracle::vc(e, matched)).epsilon(1e-12));
    if (trial % 10 == 0) {
      Tensor<double> targets(static_cast<int>(n), 3, 16, 16);
      targets.data = testsupport::random_vector(rng, targets.size(), 0.5);
      VrOptions opts;
      opts.training = false;
      const double lib = loss_vr_exact(dec, e, groups, targets, opts);
      CHECK(lib == doctest::Approx(oracle::vr_groups(dec, e, groups, targets)).epsilon(1e-9));
      CHECK(loss_vr(dec, e, matched, targets, opts) ==
            doctest::Approx(oracle::vr_groups(dec, e, [&] {
                              std::vector<std::vector<std::size_t>> gs;
                              for (auto p : matched) gs.push_back({p.a, p.b});
                              return gs;
                            }(), targets)).epsilon(1e-9));
    }
  }
}

TEST_CASE("losses are non-negative and the content triplet is translation invariant") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    auto e = random_batch(rng, 6, 4);
    const auto t = random_triplets(rng, 6, 4);
    const std::vector<IndexPair> pairs{{0, 1}, {2, 3}, {4, 5}};
    CHECK(loss_tri_va(e, t, 0.5) >= 0.0);
    CHECK(loss_tri_vs(e, t, 0.45) >= 0.0);
    CHECK(loss_ic(e, pairs) >= 0.0);
    CHECK(loss_vc(e, pairs) >= 0.0);
    const double before = loss_tri_va(e, t, 0.5);
    const auto shift = testsupport::random_vector(rng, 4, 10.0);
    for (auto& x : e)
      for (std::size_t k = 0; k < 4; ++k) x.content[k] += shift[k];
    CHECK(loss_tri_va(e, t, 0.5) == doctest::Approx(before).epsilon(1e-9));
  }
}

TEST_CASE("analytic loss gradients match central differences") {
  std::mt19937_64 rng(17);
  const double h = 1e-4;
  int checked = 0;
  while (checked < 20) {
    const auto e = random_batch(rng, 6, 4);
    const std::vector<TripletIndex> t{{0, 1, 2}, {3, 4, 5}, {1, 3, 5}};
    const double mu = 1.0;
    bool kink = false;
    for (const auto& x : t) {
      const double dp = oracle::dist(e[x.s].content, e[x.p].content), dn = oracle::dist(e[x.s].content, e[x.n].content);
      const auto s = oracle::plus(e[x.s].content, e[x.s].view);
      const double vp = oracle::dist(s, oracle::plus(e[x.p].content, e[x.p].view));
      const double vn = oracle::dist(s, oracle::plus(e[x.n].content, e[x.n].view));
      kink |= std::abs(mu + dp - dn) < 1e-2 || std::abs(mu + vp - vn) < 1e-2 || dp < 1e-3 || dn < 1e-3;
    }
    if (kink) continue;
    ++checked;

    const auto check = [&](const auto& loss) {
      auto grads = zero_grads_like(e);
      GradSink sink{grads, 1.0};
      loss(e, &sink);
      const auto num = oracle::numeric_gradient(e, [&](const auto& x) { return loss(x, nullptr); }, h);
      CHECK(oracle::relative_error(grads, num) < 1e-4);
    };
    check([&](const std::vector<EmbeddingPair>& x, GradSink* s) { return loss_tri_va(x, t, mu, s); });
    check([&](const std::vector<EmbeddingPair>& x, GradSink* s) { return loss_tri_vs(x, t, mu, s); });
    const std::vector<std::vector<std::size_t>> groups{{0, 1, 2}, {3, 4}, {5}};
    check([&](const std::vector<EmbeddingPair>& x, GradSink* s) { return loss_ic_exact(x, groups, s); });
    const std::vector<IndexPair> matched{{0, 1}, {2, 3}, {4, 5}};
    check([&](const std::vector<EmbeddingPair>& x, GradSink* s) { return loss_vc(x, matched, s); });
  }
}

TEST_CASE("reconstruction loss gradient matches central differences") {
  std::mt19937_64 rng(19);
  Decoder<double> dec(testsupport::tiny_config(16, 4), rng);
  int checked = 0;
  while (checked < 3) {
    const auto e = random_batch(rng, 4, 4);
    Tensor<double> targets(4, 3, 16, 16);
    targets.data = testsupport::random_vector(rng, targets.size(), 0.5);
    const std::vector<IndexPair> pairs{{0, 1}, {2, 3}, {1, 2}};
    const auto plain = [&](const std::vector<EmbeddingPair>& x) {
      return loss_vr(dec, x, pairs, targets, VrOptions{VrNorm::frobenius, true, true});
    };
    if (oracle::near_kink(e, plain, 1e-4)) continue;
    ++checked;
    for (bool symmetric : {false, true}) {
      for (VrNorm norm : {VrNorm::frobenius, VrNorm::root_mean_square}) {
        VrOptions opts{norm, symmetric, true};
        auto grads = zero_grads_like(e);
        GradSink sink{grads, 0.7};
        loss_vr(dec, e, pairs, targets, opts, &sink);
        const auto num = oracle::numeric_gradient(
            e, [&](const auto& x) { return 0.7 * loss_vr(dec, x, pairs, targets, opts); }, 1e-4);
        CHECK(oracle::relative_error(grads, num) < 1e-4);
      }
    }
  }
}

TEST_CASE("symmetric reconstruction averages both role assignments") {
  std::mt19937_64 rng(23);
  Decoder<double> dec(testsupport::tiny_config(16, 4), rng);
  const auto e = random_batch(rng, 2, 4);
  Tensor<double> targets(2, 3, 16, 16);
  targets.data = testsupport::random_vector(rng, targets.size(), 0.5);
  VrOptions opts;
  opts.training = false;
  const double ab = loss_vr(dec, e, std::vector<IndexPair>{{0, 1}}, targets, opts);
  const double ba = loss_vr(dec, e, std::vector<IndexPair>{{1, 0}}, targets, opts);
  opts.symmetric = true;
  CHECK(loss_vr(dec, e, std::vector<IndexPair>{{0, 1}}, targets, opts) == doctest::Approx((ab + ba) / 2).epsilon(1e-12));
}

TEST_CASE("total objective composition") {
  LossConfig cfg;
  CHECK(cfg.lambda1 == 0.5);
  CHECK(cfg.lambda2 == 0.7);
  CHECK(cfg.mu_vs == 0.45);
  CHECK(cfg.mu_c == 0.5);
  const LossTerms ones{1, 1, 1, 1, 1};
  CHECK(loss_total(ones, cfg).total == doctest::Approx(3.6).epsilon(1e-15));

  LossConfig zero = cfg;
  zero.lambda1 = zero.lambda2 = 0;
  const LossTerms mixed{0.37, 2.0, 3.0, 4.0, 5.0};
  CHECK(loss_total(mixed, zero).total == 0.37);

  LossConfig va_only = cfg;
  va_only.toggles = {LossTerm::VA};
  const auto r = loss_total(LossTerms{0.3, 9, 9, 9, 9}, va_only);
  CHECK(r.total == 0.3);
  CHECK(r.l_vs == 0.0);
  CHECK(r.l_vr == 0.0);
}

TEST_CASE("non-finite enabled terms are rejected, disabled ones ignored") {
  LossConfig cfg;
  CHECK_THROWS_AS(loss_total(LossTerms{1, 1, 1, 1, std::nan("")}, cfg), LossError);
  cfg.toggles.erase(LossTerm::VR);
  CHECK(loss_total(LossTerms{1, 1, 1, 1, std::nan("")}, cfg).total == doctest::Approx(2.9));
}

TEST_CASE("configuration validation and parsing") {
  LossConfig cfg;
  cfg.mu_c = -0.1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = LossConfig{};
  cfg.lambda2 = -1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  CHECK(parse_loss_term("vr") == LossTerm::VR);
  CHECK(parse_loss_term("Ic") == LossTerm::IC);
  CHECK_THROWS_AS(parse_loss_term("XX"), std::invalid_argument);
  const auto base = LossConfig::pilot_baseline();
  CHECK(base.toggles == std::set<LossTerm>{LossTerm::VA});
  CHECK(base.mu_c == base.mu_base);
}

TEST_CASE("loss report serializes as one JSON line") {
  LossReport r{0.5, 0.25, 0.125, 1.0, 2.0, 3.0};
  CHECK(to_json_line(4, r) ==
        R"({"step":4,"L_va":0.5,"L_vs":0.25,"L_vc":0.125,"L_ic":1.0,"L_vr":2.0,"total":3.0})");
}

}

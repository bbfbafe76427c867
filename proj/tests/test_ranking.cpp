#include <doctest.h>

#include <numeric>
#include <tuple>

#include "oracles.hpp"
#include "percept/error.hpp"
#include "percept/ranking.hpp"
#include "percept/rng.hpp"
#include "percept/stats.hpp"
#include "sim.hpp"
#include "support.hpp"

using namespace percept;
using namespace percept::ranking;

using namespace sim;

TEST_CASE("fresh beliefs and no-evidence ranking") {
  const SkillScore s;
  CHECK(s.mu == 25.0);
  CHECK(s.sigma == 25.0 / 3.0);
  const auto ids = image_ids(5);
  const auto r = rank_all({}, ids);
  CHECK(r.mean_sigma == 25.0 / 3.0);
  for (const auto& [id, sc] : r.scores) {
    CHECK(sc.mu == 25.0);
    CHECK(sc.sigma == 25.0 / 3.0);
  }
  const RankingParams p;
  CHECK(p.beta == 25.0 / 6.0);
  CHECK(p.tau == 0.0);
}

TEST_CASE("equal priors update symmetrically") {
  const auto [w, l] = update({}, {});
  CHECK(w.mu - 25 == doctest::Approx(25 - l.mu));
  CHECK(w.sigma == l.sigma);
  CHECK(w.mu > 25);
  CHECK(w.sigma < 25.0 / 3.0);
}

TEST_CASE("upsets move beliefs more than expected outcomes") {
  const SkillScore strong{30, 4}, weak{20, 4};
  const auto expected = update(strong, weak);
  const auto upset = update(weak, strong);
  CHECK(std::abs(upset.first.mu - weak.mu) > std::abs(expected.first.mu - strong.mu));
  CHECK(std::abs(upset.second.mu - strong.mu) > std::abs(expected.second.mu - weak.mu));
}

TEST_CASE("winner rises, loser falls, both tighten; steps grow with prior sigma") {
  Rng rng(12);
  for (int i = 0; i < 500; ++i) {
    const SkillScore w{uniform01(rng) * 50, 0.5 + uniform01(rng) * 9}, l{uniform01(rng) * 50, 0.5 + uniform01(rng) * 9};
    const auto [nw, nl] = update(w, l);
    CHECK(nw.mu > w.mu);
    CHECK(nl.mu < l.mu);
    CHECK(nw.sigma < w.sigma);
    CHECK(nl.sigma < l.sigma);
  }
  double last = 0;
  for (double sigma = 1; sigma <= 10; sigma += 1) {
    const auto [nw, nl] = update({25, sigma}, {25, 5});
    CHECK(nw.mu - 25 > last);
    last = nw.mu - 25;
  }
  CHECK_THROWS_AS(update({NAN, 1}, {}), InvalidInput);
  CHECK_THROWS_AS(update({25, 0}, {}), InvalidInput);
}

TEST_CASE("updates match the quadrature moment-matching oracle") {
  Rng rng(2024);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    RankingParams p;
    p.beta = 0.5 + uniform01(rng) * 8;
    p.tau = i % 4 == 0 ? uniform01(rng) : 0.0;
    const SkillScore w{uniform01(rng) * 50, 0.3 + uniform01(rng) * 10}, l{uniform01(rng) * 50, 0.3 + uniform01(rng) * 10};
    const auto [nw, nl] = update(w, l, p);
    const auto [ow, ol] = oracle::trueskill_win({w.mu, w.sigma}, {l.mu, l.sigma}, p.beta, p.tau);
    worst = std::max({worst, std::abs(nw.mu - ow.mu), std::abs(nw.sigma - ow.sigma), std::abs(nl.mu - ol.mu),
                      std::abs(nl.sigma - ol.sigma)});
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("deep upsets stay finite and agree with the oracle") {
  for (double gap : {30.0, 60.0, 100.0}) {
    const SkillScore w{0, 2}, l{gap, 2};
    RankingParams p;
    p.beta = 1;
    const auto [nw, nl] = update(w, l, p);
    const auto [ow, ol] = oracle::trueskill_win({0, 2}, {gap, 2}, 1, 0);
    CHECK(std::isfinite(nw.mu));
    CHECK(nw.mu == doctest::Approx(ow.mu).epsilon(1e-6));
    CHECK(nl.sigma == doctest::Approx(ol.sigma).epsilon(1e-5));
  }
  // v is continuous across the asymptotic branch.
  CHECK(v_win(-8 - 1e-9) == doctest::Approx(v_win(-8 + 1e-9)).epsilon(1e-7));
  CHECK(v_win(-40) == doctest::Approx(40.0248).epsilon(1e-4));
}

TEST_CASE("rank_all orders by server time and rejects unknown images") {
  const auto ids = image_ids(3);
  std::vector<Vote> a{testing::vote(1, "s", "i0", "i1", Choice::left, 2000), testing::vote(2, "s", "i1", "i2", Choice::left, 1000)};
  std::vector<Vote> b{a[1], a[0]};
  const auto ra = rank_all(a, ids), rb = rank_all(b, ids);
  for (const auto& id : ids) {
    CHECK(ra.scores.at(id).mu == rb.scores.at(id).mu);
    CHECK(ra.scores.at(id).sigma == rb.scores.at(id).sigma);
  }
  CHECK(ra.games == 2);
  std::vector<Vote> bad{testing::vote(1, "s", "i0", "zz", Choice::left, 0)};
  CHECK_THROWS_AS(rank_all(bad, ids), InvalidInput);
  std::vector<Vote> skip{testing::vote(1, "s", "i0", "zz", Choice::not_shown, 0)};
  CHECK(rank_all(skip, ids).games == 0);
}

TEST_CASE("strict orders are recovered from random pairings") {
  const int n = 50;
  const auto ids = image_ids(n);
  double total = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) total += tau_vs_truth(rank_all(ordered_games(n, 20 * n, seed), ids), n);
  CHECK(total / 10 >= 0.9);
}

TEST_CASE("matched pairings reach tau 0.9 by multiplier 5 and mean sigma falls throughout") {
  const int n = 50;
  const auto ids = image_ids(n);
  double tau_total = 0;
  const int replicates = 20;
  for (std::uint64_t seed = 1; seed <= replicates; ++seed) {
    const auto games = matched_games(n, 10, seed);  // 25 games per round
    double previous = kSigma0;
    for (int m = 1; m <= 5; ++m) {
      const std::vector<Vote> prefix(games.begin(), games.begin() + m * n);
      const auto r = rank_all(prefix, ids);
      CHECK(r.mean_sigma < previous);
      previous = r.mean_sigma;
      if (m == 5) tau_total += tau_vs_truth(r, n);
    }
  }
  CHECK(tau_total / replicates >= 0.9);
}

TEST_CASE("scale_scores") {
  const std::map<std::string, SkillScore> s{{"a", {20, 1}}, {"b", {25, 1}}, {"c", {30, 1}}};
  const auto r = scale_scores(s);
  CHECK(r.scaled.at("a") == 0);
  CHECK(r.scaled.at("b") == 5);
  CHECK(r.scaled.at("c") == 10);
  CHECK_THROWS_AS(scale_scores({{"a", {20, 1}}, {"b", {20, 2}}}), InvalidInput);

  Rng rng(3);
  std::map<std::string, SkillScore> random;
  for (int i = 0; i < 200; ++i) random["x" + std::to_string(i)] = {10 + 30 * uniform01(rng), 1};
  const auto rs = scale_scores(random);
  for (const auto& [id, sc] : random) {
    CHECK(rs.to_mu(rs.scaled.at(id)) == doctest::Approx(sc.mu).epsilon(1e-9));
    for (const auto& [id2, sc2] : random)
      if (sc.mu < sc2.mu) CHECK(rs.scaled.at(id) < rs.scaled.at(id2));
  }
}

TEST_CASE("decile weights") {
  std::map<std::string, double> uniform;
  for (int i = 0; i < 100; ++i) uniform["u" + std::to_string(100 + i)] = i;
  const auto u = decile_weights(uniform);
  for (const auto& [id, w] : u.weight) CHECK(w == 1.0);
  CHECK(u.decile.at("u100") == 1);
  CHECK(u.decile.at("u199") == 10);
  CHECK_FALSE(u.collapsed);

  // Half of the images share one value and so one decile.
  std::map<std::string, double> heavy;
  for (int i = 0; i < 100; ++i) heavy["h" + std::to_string(100 + i)] = i < 50 ? 0.0 : i;
  const auto h = decile_weights(heavy);
  CHECK(h.weight.at("h100") == doctest::Approx(0.2));
  std::map<int, double> per_decile;
  for (const auto& [id, w] : h.weight) per_decile[h.decile.at(id)] += w;
  for (const auto& [d, total] : per_decile) CHECK(total == doctest::Approx(10.0).epsilon(1e-12));

  std::map<std::string, double> few;
  for (int i = 0; i < 30; ++i) few["f" + std::to_string(i)] = i % 3;
  CHECK(decile_weights(few).collapsed);
  CHECK_THROWS_AS(decile_weights({{"a", 1.0}}), InvalidInput);
}

TEST_CASE("rank_all is bit-reproducible") {
  const auto ids = image_ids(30);
  const auto games = ordered_games(30, 300, 5);
  const auto a = rank_all(games, ids), b = rank_all(games, ids);
  for (const auto& id : ids) {
    CHECK(a.scores.at(id).mu == b.scores.at(id).mu);
    CHECK(a.scores.at(id).sigma == b.scores.at(id).sigma);
  }
}

#include <doctest.h>

#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "percept/error.hpp"
#include "percept/qa.hpp"
#include "percept/rng.hpp"
#include "sim.hpp"
#include "support.hpp"

using namespace percept;
using testing::vote;

using namespace sim;

TEST_CASE("choice and demographics parsing") {
  CHECK(parse_choice("left") == Choice::left);
  CHECK(parse_choice("not_shown") == Choice::not_shown);
  CHECK_THROWS(parse_choice("equal"));
  const auto d = demographics_from_json(
      nlohmann::json{{"location", "london"}, {"gender", "female"}, {"activity", "high"}, {"source", "network"}});
  CHECK(d.location == Location::london);
  CHECK(to_json(d) == nlohmann::json{{"location", "london"}, {"gender", "female"}, {"activity", "high"}, {"source", "network"}});
  CHECK_THROWS_AS(demographics_from_json(nlohmann::json{{"gender", "maybe"}}), InvalidInput);
  CHECK_THROWS_AS(demographics_from_json(nlohmann::json{{"age", "30"}}), InvalidInput);
  CHECK(demographics_from_json(nlohmann::json::object()) == Demographics{});
}

TEST_CASE("vote and session CSV round-trip is byte-stable") {
  testing::TempDir dir("votes");
  std::vector<Vote> votes{vote(1, "s1", "a", "b", Choice::left, 1'500'000'000'000),
                          vote(2, "s1", "c", "d", Choice::not_shown, 1'500'000'001'234, PairKind::repeated)};
  votes[0].client_ts = 1'499'999'999'900;
  const auto text = format_votes(votes);
  const auto back = read_votes(dir.write("v.csv", text));
  CHECK(format_votes(back) == text);
  REQUIRE(back.size() == 2);
  CHECK(back[0].client_ts == votes[0].client_ts);
  CHECK_FALSE(back[1].client_ts.has_value());
  CHECK(back[1].pair_kind == PairKind::repeated);
  CHECK(format_votes({}) == "vote_id,session_id,left_image,right_image,choice,pair_kind,client_ts,server_ts\n");

  std::vector<Rater> raters{{"s1", 1'500'000'000'000, std::nullopt},
                            {"s2", 1'500'000'000'500, Demographics{Location::not_london, Gender::other, std::nullopt, Source::amt}}};
  const auto stext = format_sessions(raters);
  CHECK(format_sessions(read_sessions(dir.write("s.csv", stext))) == stext);
}

TEST_CASE("one-sided filter boundaries") {
  std::vector<Vote> votes;
  std::uint64_t id = 1;
  for (int i = 0; i < 10; ++i) votes.push_back(vote(id++, "all_left", "a" + std::to_string(i), "b", Choice::left, id * 1000));
  for (int i = 0; i < 10; ++i)
    votes.push_back(vote(id++, "nine_left", "a" + std::to_string(i), "b", i < 9 ? Choice::left : Choice::right, id * 1000));
  for (int i = 0; i < 9; ++i) votes.push_back(vote(id++, "short", "a" + std::to_string(i), "b", Choice::right, id * 1000));
  const auto r = qa::filter_one_sided(votes, 0.9, 10);
  CHECK(r.removed_sessions == std::set<std::string>{"all_left"});
  CHECK(r.votes.size() == 19);
  CHECK_THROWS_AS(qa::filter_one_sided(votes, 0.5, 10), InvalidInput);
}

TEST_CASE("one-sided filter matches a brute-force recount and is idempotent") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Vote> votes;
    std::uint64_t id = 1;
    for (int s = 0; s < 40; ++s) {
      const double bias = uniform01(rng);
      const int games = static_cast<int>(uniform_index(rng, 25));
      for (int g = 0; g < games; ++g)
        votes.push_back(vote(id++, "s" + std::to_string(s), "a", "b", bernoulli(rng, bias) ? Choice::left : Choice::right, 0));
    }
    const auto r = qa::filter_one_sided(votes, 0.9, 10);
    CHECK(r.removed_sessions == one_sided_oracle(votes, 0.9, 10));
    CHECK(ids(qa::filter_one_sided(r.votes, 0.9, 10).votes) == ids(r.votes));
  }
}

TEST_CASE("duplicate filter window") {
  std::vector<Vote> votes{vote(1, "s", "a", "b", Choice::left, 0), vote(2, "s", "b", "a", Choice::right, 30'000),
                          vote(3, "s", "c", "d", Choice::left, 0), vote(4, "s", "c", "d", Choice::left, 120'000),
                          vote(5, "t", "a", "b", Choice::left, 10'000)};
  CHECK(ids(qa::filter_duplicates(votes, 60)) == std::set<std::uint64_t>{1, 3, 4, 5});
  CHECK_THROWS_AS(qa::filter_duplicates(votes, 0), InvalidInput);
}

TEST_CASE("duplicate filter matches the pairwise oracle and is idempotent") {
  Rng rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Vote> votes;
    for (std::uint64_t id = 1; id <= 300; ++id) {
      const auto a = "i" + std::to_string(uniform_index(rng, 4));
      const auto b = "j" + std::to_string(uniform_index(rng, 3));
      const bool swap = bernoulli(rng, 0.5);
      votes.push_back(vote(id, "s" + std::to_string(uniform_index(rng, 5)), swap ? b : a, swap ? a : b, Choice::left,
                           static_cast<TimestampMs>(uniform_index(rng, 3'600'000))));
    }
    const auto once = qa::filter_duplicates(votes, 60);
    CHECK(ids(once) == duplicate_oracle(votes, 60));
    CHECK(ids(qa::filter_duplicates(once, 60)) == ids(once));
  }
}

TEST_CASE("usable games: exclusions, duplicates before one-sided, accounting identity") {
  std::vector<Vote> votes;
  std::uint64_t id = 1;
  // Nine distinct left votes and one right; three rapid resubmissions of a left vote
  // would push the raw share to 12/13 > 0.9, but after de-duplication it is exactly 0.9.
  for (int i = 0; i < 9; ++i) votes.push_back(vote(id++, "r", "a" + std::to_string(i), "z", Choice::left, i * 100'000));
  votes.push_back(vote(id++, "r", "q", "z", Choice::right, 1'000'000));
  for (int k = 1; k <= 3; ++k) votes.push_back(vote(id++, "r", "a0", "z", Choice::left, k * 5'000));
  votes.push_back(vote(id++, "r", "m", "n", Choice::not_comparable, 2'000'000));
  votes.push_back(vote(id++, "r", "m", "o", Choice::not_shown, 2'100'000));
  for (int i = 0; i < 12; ++i) votes.push_back(vote(id++, "bot", "b" + std::to_string(i), "z", Choice::right, i * 70'000));

  const auto u = qa::filter_usable(votes);
  CHECK(u.provenance.total == votes.size());
  CHECK(u.provenance.not_comparable == 1);
  CHECK(u.provenance.not_shown == 1);
  CHECK(u.provenance.duplicate == 3);
  CHECK(u.provenance.one_sided == 12);
  CHECK(u.provenance.usable == 10);
  CHECK(u.one_sided_sessions == std::set<std::string>{"bot"});
  const auto& p = u.provenance;
  CHECK(p.not_comparable + p.not_shown + p.duplicate + p.one_sided + p.usable == p.total);
  // Idempotent as a whole.
  CHECK(ids(qa::filter_usable(u.votes).votes) == ids(u.votes));
}

TEST_CASE("agreement takes the majority share with a strict game gate") {
  Rng rng(2);
  std::uint64_t id = 1;
  auto votes = pair_votes("x", "y", 8, 10, rng, id);
  auto r = qa::agreement(votes, 9);
  REQUIRE(r.pairs.size() == 1);
  CHECK(r.pairs[0].agreement == 0.8);
  CHECK(r.pairs[0].majority == "x");
  CHECK(r.mean == 0.8);
  CHECK(qa::agreement(votes).pairs.empty());  // 10 games is not more than 10
  CHECK_FALSE(qa::agreement(votes).mean.has_value());

  auto unanimous = pair_votes("p", "q", 0, 11, rng, id);
  r = qa::agreement(unanimous);
  REQUIRE(r.pairs.size() == 1);
  CHECK(r.pairs[0].agreement == 1.0);
  CHECK(r.pairs[0].majority == "q");

  auto two = pair_votes("k", "l", 16, 20, rng, id);
  two.insert(two.end(), unanimous.begin(), unanimous.end());
  r = qa::agreement(two);
  CHECK(r.mean == doctest::Approx((0.8 + 1.0) / 2));
  CHECK(r.users == 31);
}

TEST_CASE("group agreement") {
  Rng rng(4);
  std::uint64_t id = 1;
  auto a = pair_votes("x", "y", 12, 12, rng, id, "amt");
  auto b = pair_votes("x", "y", 0, 12, rng, id, "net");
  std::vector<Rater> raters;
  for (const auto& v : a) raters.push_back({v.session_id, 0, Demographics{{}, {}, {}, Source::amt}});
  for (const auto& v : b) raters.push_back({v.session_id, 0, Demographics{{}, {}, {}, Source::network}});
  auto votes = a;
  votes.insert(votes.end(), b.begin(), b.end());

  const auto g = qa::group_agreement(votes, raters, qa::Grouping::source);
  CHECK(g.at("amt").mean == 1.0);
  CHECK(g.at("network").mean == 1.0);
  CHECK(qa::agreement(votes).mean == 0.5);
  CHECK(g.at("amt").pairs.size() == 1);

  // All sessions in one level reduces to plain agreement.
  const auto one = qa::group_agreement(a, raters, qa::Grouping::source);
  CHECK(one.at("amt").mean == qa::agreement(a).mean);
  CHECK_FALSE(one.at("network").mean.has_value());
  CHECK_THROWS_AS(qa::parse_grouping("age"), InvalidInput);
}

TEST_CASE("group agreement recovers planted consensus levels") {
  Rng rng(77);
  std::vector<Vote> votes;
  std::vector<Rater> raters;
  std::uint64_t id = 1;
  for (int pair = 0; pair < 50; ++pair) {
    const auto a = "a" + std::to_string(pair), b = "b" + std::to_string(pair);
    for (const auto& [level, consensus] : {std::pair{Gender::female, 0.9}, std::pair{Gender::male, 0.6}}) {
      for (int k = 0; k < 400; ++k) {
        auto v = pair_votes(a, b, bernoulli(rng, consensus) ? 1 : 0, 1, rng, id);
        raters.push_back({v[0].session_id, 0, Demographics{{}, level, {}, {}}});
        votes.push_back(v[0]);
      }
    }
  }
  const auto g = qa::group_agreement(votes, raters, qa::Grouping::gender);
  CHECK(*g.at("female").mean == doctest::Approx(0.9).epsilon(0.05 / 0.9));
  CHECK(std::abs(*g.at("male").mean - 0.6) < 0.05);
  CHECK(g.at("female").pairs.size() == 50);
}

TEST_CASE("games multiplier") {
  CHECK(qa::games_multiplier({}, 10) == 0.0);
  std::vector<Vote> votes(4650, vote(1, "s", "a", "b", Choice::left, 0));
  CHECK(qa::games_multiplier(votes, 1000) == doctest::Approx(4.65));
  votes.resize(25987);
  CHECK(std::round(qa::games_multiplier(votes, 25154) * 100) / 100 == 1.03);
  CHECK_THROWS_AS(qa::games_multiplier(votes, 0), InvalidInput);
}

TEST_CASE("report carries every count row") {
  std::vector<Vote> votes{vote(1, "s", "a", "b", Choice::left, 0), vote(2, "s", "a", "c", Choice::not_shown, 1)};
  const std::vector<Rater> raters{{"s", 0, std::nullopt}};
  const auto usable = qa::filter_usable(votes);
  const auto j = qa::report(votes, raters, usable, 3);
  for (const char* key : {"images_in_database", "pairwise_ratings", "not_comparable", "not_shown", "one_sided_clicks",
                          "duplicate_choices", "usable_games", "users", "games_multiplier", "repeated_pairs_agreement"})
    CHECK(j.contains(key));
  CHECK(j["pairwise_ratings"] == 2);
  CHECK(j["usable_games"] == 1);
  CHECK(j["not_shown"] == 1);
  CHECK(j["games_multiplier"].get<double>() == doctest::Approx(1.0 / 3));
}

TEST_CASE("protocol constants") {
  CHECK(qa::kOneSidedThreshold == 0.9);
  CHECK(qa::kDuplicateWindowS == 60.0);
  CHECK(qa::kAgreementMinGames == 10);
}

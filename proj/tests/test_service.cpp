#include <doctest.h>

#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <set>
#include <thread>

#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "percept/error.hpp"
#include "percept/event_store.hpp"
#include "percept/survey_service.hpp"
#include "percept/votes.hpp"
#include "sim.hpp"
#include "support.hpp"

// httplib drags in <resolv.h>; keep it after every Eigen-using header.
#include <httplib.h>

#include "percept/http_api.hpp"

using namespace percept;
using nlohmann::json;

namespace {

// Six images in two clusters: 15 unordered pairs.
std::shared_ptr<const PairScheduler> small_scheduler(double repeat_rate = 0.0) {
  std::vector<SurveyImage> images;
  for (int i = 0; i < 6; ++i) images.push_back({"img" + std::to_string(i), i % 2});
  SchedulerConfig config;
  config.alpha = 0.3;
  config.repeat_rate = repeat_rate;
  config.seed = 99;
  if (repeat_rate > 0) config.repeated_pairs = {{"img0", "img1"}};
  return std::make_shared<PairScheduler>(images, config);
}

std::shared_ptr<const PairScheduler> wide_scheduler() {
  std::vector<SurveyImage> images;
  for (int i = 0; i < 60; ++i) images.push_back({"w" + std::to_string(100 + i), i % 4});
  SchedulerConfig config;
  config.alpha = 0.2;
  config.seed = 3;
  return std::make_shared<PairScheduler>(images, config);
}

ServiceOptions counting_options() {
  ServiceOptions o;
  auto ids = std::make_shared<int>(0);
  o.new_id = [ids] { return "id" + std::to_string(++*ids); };
  auto t = std::make_shared<TimestampMs>(1'500'000'000'000);
  o.clock = [t] { return *t += 1000; };
  return o;
}

std::string write_scheduler_files(const testing::TempDir& dir) {
  std::string images = "image_id,cluster\n";
  for (int i = 0; i < 40; ++i) images += "c" + std::to_string(100 + i) + "," + std::to_string(i % 4) + "\n";
  dir.write("survey_images.csv", images);
  dir.write("repeated_pairs.csv", "left_id,right_id\nc100,c101\n");
  return dir.write("scheduler.conf",
                   "alpha = 0.2\nrepeat_rate = 0.05\nseed = 5\nsurvey_images = survey_images.csv\n"
                   "repeated_pairs = repeated_pairs.csv\n")
      .string();
}

struct Ack {
  std::uint64_t vote_id;
  std::string session;
  std::string left, right, choice;
};

}  // namespace

TEST_CASE("pair and vote state machine") {
  SurveyService svc(small_scheduler(), std::make_unique<MemoryEventStore>(), counting_options());
  const auto s = svc.create_session();
  CHECK_FALSE(svc.session(s)->demographics.has_value());

  const auto first = svc.get_pair(s);
  REQUIRE(std::holds_alternative<PairOffer>(first));
  const auto& offer = std::get<PairOffer>(first);
  CHECK(offer.left.image_id != offer.right.image_id);
  CHECK(offer.left.url == "/images/" + offer.left.image_id + ".jpg");

  const auto again = std::get<PairOffer>(svc.get_pair(s));
  CHECK(again.pair_token == offer.pair_token);
  CHECK(again.left.image_id == offer.left.image_id);

  const auto id = svc.post_vote(s, offer.pair_token, Choice::left, 123);
  CHECK(id == 1);
  CHECK(svc.post_vote(s, offer.pair_token, Choice::right) == 1);  // idempotent replay
  REQUIRE(svc.votes().size() == 1);
  CHECK(svc.votes()[0].choice == Choice::left);
  CHECK(svc.votes()[0].client_ts == 123);

  CHECK_THROWS_AS(svc.post_vote(s, "bogus", Choice::left), Conflict);
  CHECK_THROWS_AS(svc.get_pair("nope"), NotFound);
  CHECK_THROWS_AS(svc.post_vote("nope", offer.pair_token, Choice::left), NotFound);

  const auto next = std::get<PairOffer>(svc.get_pair(s));
  CHECK(next.pair_token != offer.pair_token);
  CHECK_THROWS_AS(svc.post_vote(s, "id-stale", Choice::left), Conflict);

  std::set<std::pair<std::string, std::string>> seen;
  seen.insert(std::minmax(offer.left.image_id, offer.right.image_id));
  int served = 1;
  for (auto r = svc.get_pair(s); std::holds_alternative<PairOffer>(r); r = svc.get_pair(s)) {
    const auto& o = std::get<PairOffer>(r);
    CHECK(seen.insert(std::minmax(o.left.image_id, o.right.image_id)).second);
    svc.post_vote(s, o.pair_token, served % 3 == 0 ? Choice::not_shown : Choice::right);
    ++served;
  }
  CHECK(served == 15);
  CHECK(std::holds_alternative<Completion>(svc.get_pair(s)));
  const auto st = svc.stats();
  CHECK(st.votes == 15);
  CHECK(st.votes_by_choice.at("not_shown") == 4);
  CHECK(st.votes_by_choice.at("not_comparable") == 0);
}

TEST_CASE("demographics are set once") {
  SurveyService svc(small_scheduler(), std::make_unique<MemoryEventStore>(), counting_options());
  const Demographics d{Location::london, Gender::female, Activity::high, Source::network};
  const auto a = svc.create_session(d);
  CHECK(svc.session(a)->demographics == d);
  CHECK_THROWS_AS(svc.set_demographics(a, d), Conflict);

  const auto b = svc.create_session();
  svc.set_demographics(b, Demographics{.location = Location::london, .activity = Activity::high});
  CHECK(svc.session(b)->demographics->location == Location::london);
  CHECK_FALSE(svc.session(b)->demographics->gender.has_value());
  CHECK_THROWS_AS(svc.set_demographics("missing", d), NotFound);
  CHECK_THROWS_AS(demographics_from_json(json{{"location", "maybe"}}), InvalidInput);
  CHECK_THROWS_AS(demographics_from_json(json{{"age", "old"}}), InvalidInput);
}

TEST_CASE("exports are stable and round-trip") {
  testing::TempDir dir("export");
  SurveyService svc(small_scheduler(0.5), std::make_unique<MemoryEventStore>(), counting_options());
  svc.export_votes(dir / "empty_votes.csv");
  svc.export_sessions(dir / "empty_sessions.csv");
  CHECK(csv::read_file(dir / "empty_votes.csv") ==
        "vote_id,session_id,left_image,right_image,choice,pair_kind,client_ts,server_ts\n");
  CHECK(csv::read_file(dir / "empty_sessions.csv") == "session_id,created_at,location,gender,activity,source\n");

  for (int k = 0; k < 3; ++k) {
    const auto s = svc.create_session(k == 1 ? std::optional(Demographics{.gender = Gender::other}) : std::nullopt);
    for (int v = 0; v < 4; ++v) {
      const auto o = std::get<PairOffer>(svc.get_pair(s));
      svc.post_vote(s, o.pair_token, v % 2 ? Choice::left : Choice::not_comparable, v == 0 ? std::optional<TimestampMs>(7) : std::nullopt);
    }
  }
  svc.export_votes(dir / "votes.csv");
  svc.export_sessions(dir / "sessions.csv");
  const auto votes = read_votes(dir / "votes.csv");
  CHECK(votes.size() == 12);
  for (std::size_t i = 0; i < votes.size(); ++i) CHECK(votes[i].vote_id == i + 1);
  CHECK(format_votes(votes) == csv::read_file(dir / "votes.csv"));
  CHECK(format_votes(svc.votes()) == csv::read_file(dir / "votes.csv"));
  const auto sessions = read_sessions(dir / "sessions.csv");
  REQUIRE(sessions.size() == 3);
  CHECK(sessions[1].demographics->gender == Gender::other);

  svc.export_votes(dir / "votes2.csv");
  CHECK(csv::read_file(dir / "votes2.csv") == csv::read_file(dir / "votes.csv"));
}

TEST_CASE("file store recovers state across restarts") {
  testing::TempDir dir("store");
  std::string session, token;
  std::string votes_before;
  {
    auto opts = counting_options();
    opts.snapshot_every = 3;
    SurveyService svc(small_scheduler(), std::make_unique<FileEventStore>(dir.path(), FileStoreOptions{false}), opts);
    session = svc.create_session(Demographics{.source = Source::amt});
    for (int v = 0; v < 5; ++v) {
      const auto o = std::get<PairOffer>(svc.get_pair(session));
      svc.post_vote(session, o.pair_token, Choice::right);
    }
    token = std::get<PairOffer>(svc.get_pair(session)).pair_token;  // outstanding at shutdown
    votes_before = format_votes(svc.votes());
  }
  CHECK(std::filesystem::exists(dir / "snapshot.json"));
  auto opts = counting_options();
  opts.new_id = [] { return std::string("fresh-id"); };
  SurveyService svc(small_scheduler(), std::make_unique<FileEventStore>(dir.path(), FileStoreOptions{false}), opts);
  CHECK(format_votes(svc.votes()) == votes_before);
  CHECK(svc.session(session)->demographics->source == Source::amt);
  const auto o = std::get<PairOffer>(svc.get_pair(session));
  CHECK(o.pair_token == token);
  CHECK(svc.post_vote(session, o.pair_token, Choice::left) == 6);

  // Resubmitting an old, already used token after restart is still idempotent.
  const auto first_token = [&] {
    std::ifstream in(dir / "events.log");
    std::string line;
    while (std::getline(in, line)) {
      const auto e = json::parse(line);
      if (e.at("type") == "vote") return e.at("token").get<std::string>();
    }
    return std::string();
  }();
  if (!first_token.empty()) CHECK(svc.post_vote(session, first_token, Choice::left) == 1);
}

TEST_CASE("torn final log line is dropped, corruption elsewhere is an error") {
  testing::TempDir dir("torn");
  {
    FileEventStore store(dir.path(), {false});
    store.recover();
    for (int i = 0; i < 4; ++i) store.append(json{{"type", "noop"}, {"i", i}});
  }
  {
    std::ofstream out(dir / "events.log", std::ios::app);
    out << R"({"type":"noop","i":4,"se)";
  }
  {
    FileEventStore store(dir.path(), {false});
    const auto r = store.recover();
    REQUIRE(r.events.size() == 4);
    CHECK(r.events.back().at("seq") == 4);
    CHECK(store.append(json{{"type", "noop"}}) == 5);
  }
  {
    FileEventStore store(dir.path(), {false});
    CHECK(store.recover().events.size() == 5);
  }
  std::string log = csv::read_file(dir / "events.log");
  log.replace(log.find("\"noop\""), 6, "\"no");
  csv::write_file_atomic(dir / "events.log", log);
  FileEventStore broken(dir.path(), {false});
  CHECK_THROWS(broken.recover());
}

TEST_CASE("100 concurrent sessions give a gap-free log") {
  testing::TempDir dir("concurrent");
  auto svc = std::make_unique<SurveyService>(wide_scheduler(),
                                             std::make_unique<FileEventStore>(dir.path(), FileStoreOptions{false}));
  constexpr int kSessions = 100, kVotes = 20;
  std::vector<std::vector<Ack>> acks(kSessions);
  std::atomic<int> failures{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < kSessions; ++t) {
    threads.emplace_back([&, t] {
      try {
        const auto s = svc->create_session();
        for (int v = 0; v < kVotes; ++v) {
          const auto o = std::get<PairOffer>(svc->get_pair(s));
          const auto choice = (t + v) % 5 == 0 ? Choice::not_comparable : ((t + v) % 2 ? Choice::left : Choice::right);
          const auto id = svc->post_vote(s, o.pair_token, choice);
          if (v % 7 == 0 && svc->post_vote(s, o.pair_token, choice) != id) ++failures;
          acks[static_cast<std::size_t>(t)].push_back(
              {id, s, o.left.image_id, o.right.image_id, std::string(to_string(choice))});
        }
      } catch (...) {
        ++failures;
      }
    });
  }
  for (auto& th : threads) th.join();
  CHECK(failures == 0);

  auto check = [&](const std::vector<Vote>& votes) {
    REQUIRE(votes.size() == kSessions * kVotes);
    for (std::size_t i = 0; i < votes.size(); ++i) CHECK(votes[i].vote_id == i + 1);
    for (std::size_t i = 1; i < votes.size(); ++i) CHECK(votes[i].server_ts >= votes[i - 1].server_ts);
    for (const auto& per : acks)
      for (const auto& a : per) {
        const auto& v = votes[a.vote_id - 1];
        CHECK(v.session_id == a.session);
        CHECK(v.left_image == a.left);
        CHECK(v.right_image == a.right);
        CHECK(to_string(v.choice) == a.choice);
      }
  };
  check(svc->votes());
  svc.reset();

  std::uint64_t expected = 1;
  std::ifstream in(dir / "events.log");
  for (std::string line; std::getline(in, line);) CHECK(json::parse(line).at("seq") == expected++);

  SurveyService reopened(wide_scheduler(), std::make_unique<FileEventStore>(dir.path(), FileStoreOptions{false}));
  check(reopened.votes());
  CHECK(reopened.sessions().size() == kSessions);
}

TEST_CASE("HTTP contract") {
  testing::TempDir dir("http");
  dir.write("img0.jpg", "JPEGDATA");
  SurveyService svc(small_scheduler(), std::make_unique<MemoryEventStore>(), counting_options());
  httplib::Server server;
  register_routes(server, svc, dir.path());
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client cli("127.0.0.1", port);

  auto post = [&](const std::string& path, const json& body) { return cli.Post(path, body.dump(), "application/json"); };

  auto r = post("/session", json::object());
  REQUIRE(r);
  CHECK(r->status == 201);
  const auto sid = json::parse(r->body).at("session_id").get<std::string>();

  r = post("/session", {{"demographics", {{"location", "london"}, {"gender", "female"}}}});
  CHECK(r->status == 201);
  CHECK(post("/session", {{"demographics", {{"location", "maybe"}}}})->status == 400);
  CHECK(cli.Post("/session", "{not json", "application/json")->status == 400);

  r = cli.Get("/pair?session=" + sid);
  REQUIRE(r->status == 200);
  const auto pair = json::parse(r->body);
  CHECK(pair.at("complete") == false);
  CHECK(pair.at("left").at("image_id") != pair.at("right").at("image_id"));
  CHECK(pair.at("left").at("url").get<std::string>().rfind("/images/", 0) == 0);
  CHECK(pair.at("pair_kind") == "fresh");
  const auto token = pair.at("pair_token").get<std::string>();
  CHECK(json::parse(cli.Get("/pair?session=" + sid)->body).at("pair_token") == token);

  CHECK(cli.Get("/pair?session=unknown")->status == 404);
  CHECK(cli.Get("/pair")->status == 400);

  r = post("/vote", {{"session_id", sid}, {"pair_token", token}, {"choice", "left"}, {"client_ts", "2017-07-14T02:40:06.410Z"}});
  REQUIRE(r->status == 200);
  CHECK(json::parse(r->body).at("vote_id") == 1);
  r = post("/vote", {{"session_id", sid}, {"pair_token", token}, {"choice", "left"}});
  CHECK(json::parse(r->body).at("vote_id") == 1);
  CHECK(post("/vote", {{"session_id", sid}, {"pair_token", "stale"}, {"choice", "left"}})->status == 409);
  CHECK(post("/vote", {{"session_id", sid}, {"pair_token", token}, {"choice", "equal"}})->status == 400);
  CHECK(post("/vote", {{"session_id", "ghost"}, {"pair_token", token}, {"choice", "left"}})->status == 404);
  CHECK(post("/vote", {{"session_id", sid}})->status == 400);

  CHECK(post("/demographics", {{"session_id", sid}, {"location", "not_london"}, {"activity", "low"}})->status == 200);
  CHECK(post("/demographics", {{"session_id", sid}, {"location", "london"}})->status == 409);
  CHECK(svc.session(sid)->demographics->activity == Activity::low);

  const auto stats = json::parse(cli.Get("/admin/stats")->body);
  CHECK(stats.at("sessions") == 2);
  CHECK(stats.at("votes") == 1);
  CHECK(stats.at("votes_by_choice").at("left") == 1);
  CHECK(stats.at("games_multiplier").get<double>() == doctest::Approx(1.0 / 6));

  r = cli.Get("/images/img0.jpg");
  REQUIRE(r);
  CHECK(r->status == 200);
  CHECK(r->body == "JPEGDATA");
  CHECK(cli.Get("/images/missing.jpg")->status == 404);

  server.stop();
  th.join();
}

// A scripted stand-in for the browser front-end: it maps UI events onto the
// HTTP contract exactly as the page does.
TEST_CASE("UI contract through a scripted client") {
  SurveyService svc(small_scheduler(), std::make_unique<MemoryEventStore>(), counting_options());
  httplib::Server server;
  register_routes(server, svc);
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client cli("127.0.0.1", port);

  struct Page {
    httplib::Client& cli;
    std::string session;
    std::optional<std::string> token;
    bool finished = false;
    bool inputs_enabled = false;

    void fetch() {
      const auto j = json::parse(cli.Get("/pair?session=" + session)->body);
      if (j.at("complete")) {
        finished = true;
        inputs_enabled = false;
        token.reset();
        return;
      }
      token = j.at("pair_token").get<std::string>();
      inputs_enabled = true;
    }
    std::optional<std::uint64_t> submit(const std::string& choice) {
      if (!inputs_enabled || !token) return std::nullopt;  // no payload without a live token
      inputs_enabled = false;
      const json body{{"session_id", session}, {"pair_token", *token}, {"choice", choice}};
      const auto r = cli.Post("/vote", body.dump(), "application/json");
      const auto id = json::parse(r->body).at("vote_id").get<std::uint64_t>();
      fetch();
      return id;
    }
    std::optional<std::uint64_t> click_left() { return submit("left"); }
    std::optional<std::uint64_t> click_right() { return submit("right"); }
    std::optional<std::uint64_t> cannot_compare() { return submit("not_comparable"); }
    std::optional<std::uint64_t> image_error() { return submit("not_shown"); }
  };

  Page page{cli, json::parse(cli.Post("/session", "{}", "application/json")->body).at("session_id")};
  CHECK_FALSE(page.click_left().has_value());  // nothing fetched yet
  page.fetch();
  const auto shown = *page.token;
  CHECK(page.click_left() == 1);
  CHECK(svc.votes().back().choice == Choice::left);
  CHECK(page.token != shown);

  // Double submit: a second click while the first is in flight finds inputs disabled.
  page.inputs_enabled = false;
  CHECK_FALSE(page.click_right().has_value());
  CHECK(svc.votes().size() == 1);
  page.inputs_enabled = true;
  CHECK(page.click_right() == 2);
  CHECK(svc.votes().back().choice == Choice::right);

  CHECK(page.image_error() == 3);
  CHECK(svc.votes().back().choice == Choice::not_shown);
  CHECK(page.cannot_compare() == 4);
  CHECK(svc.votes().back().choice == Choice::not_comparable);

  while (!page.finished) page.click_left();
  CHECK(svc.votes().size() == 15);
  CHECK_FALSE(page.click_left().has_value());

  server.stop();
  th.join();
}

#ifdef PERCEPT_BIN
using sim::spawn_server;

TEST_CASE("no acknowledged vote is lost when the server is killed") {
  testing::TempDir dir("crash");
  const auto conf = write_scheduler_files(dir);
  const auto store = (dir / "store").string();
  const std::vector<std::string> args = {PERCEPT_BIN, "serve", "--host", "127.0.0.1", "--port", "0",
                                         "--store-dir", store, "--scheduler-config", conf, "--snapshot-every", "25",
                                         "--out", (dir / "out").string()};

  std::vector<Ack> acked;
  std::mutex acked_mutex;
  for (int round = 0; round < 3; ++round) {
    CAPTURE(round);
    const auto child = spawn_server(args);
    REQUIRE(child.pid > 0);
    REQUIRE(child.port > 0);

    std::atomic<bool> stop{false};
    std::vector<std::thread> clients;
    for (int c = 0; c < 4; ++c) {
      clients.emplace_back([&, port = child.port] {
        httplib::Client cli("127.0.0.1", port);
        cli.set_connection_timeout(1);
        cli.set_read_timeout(2);
        auto r = cli.Post("/session", "{}", "application/json");
        if (!r || r->status != 201) return;
        const auto sid = json::parse(r->body).at("session_id").get<std::string>();
        while (!stop) {
          auto p = cli.Get("/pair?session=" + sid);
          if (!p || p->status != 200) return;
          const auto pj = json::parse(p->body);
          if (pj.at("complete")) return;
          const json body{{"session_id", sid}, {"pair_token", pj.at("pair_token")}, {"choice", "left"}};
          auto v = cli.Post("/vote", body.dump(), "application/json");
          if (!v || v->status != 200) return;
          std::lock_guard lock(acked_mutex);
          acked.push_back({json::parse(v->body).at("vote_id").get<std::uint64_t>(), sid,
                           pj.at("left").at("image_id").get<std::string>(),
                           pj.at("right").at("image_id").get<std::string>(), "left"});
        }
      });
    }
    // Kill while requests are still in flight.
    std::this_thread::sleep_for(std::chrono::milliseconds(300 + 100 * round));
    ::kill(child.pid, SIGKILL);
    int status = 0;
    ::waitpid(child.pid, &status, 0);
    CHECK(WIFSIGNALED(status));
    stop = true;
    for (auto& t : clients) t.join();
  }
  REQUIRE(acked.size() > 20);

  // A clean restart followed by SIGTERM exports everything it recovered.
  const auto child = spawn_server(args);
  REQUIRE(child.port > 0);
  ::kill(child.pid, SIGTERM);
  int status = 0;
  ::waitpid(child.pid, &status, 0);
  REQUIRE(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 0);

  const auto votes = read_votes(dir / "out" / "votes.csv");
  std::set<std::uint64_t> ids;
  for (const auto& v : votes) ids.insert(v.vote_id);
  CHECK(ids.size() == votes.size());
  for (std::size_t i = 0; i < votes.size(); ++i) CHECK(votes[i].vote_id == i + 1);
  for (const auto& a : acked) {
    REQUIRE(a.vote_id <= votes.size());
    const auto& v = votes[a.vote_id - 1];
    CHECK(v.session_id == a.session);
    CHECK(v.left_image == a.left);
    CHECK(v.right_image == a.right);
  }

  // The offline export path agrees.
  const int rc = std::system((std::string(PERCEPT_BIN) + " export --store-dir " + store + " --scheduler-config " + conf +
                              " --out " + (dir / "export").string() + " > /dev/null")
                                 .c_str());
  CHECK(rc == 0);
  CHECK(csv::read_file(dir / "export" / "votes.csv") == csv::read_file(dir / "out" / "votes.csv"));
}
#endif

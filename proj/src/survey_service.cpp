#include "percept/survey_service.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <random>

#include "percept/csv.hpp"
#include "percept/error.hpp"

namespace percept {

namespace {

using nlohmann::json;

json outstanding_json(const std::string& left, const std::string& right, PairKind kind, const std::string& token) {
  return json{{"left", left}, {"right", right}, {"kind", to_string(kind)}, {"token", token}};
}

}  // namespace

SurveyService::SurveyService(std::shared_ptr<const PairScheduler> scheduler, std::unique_ptr<EventStore> store,
                             ServiceOptions options)
    : scheduler_(std::move(scheduler)), store_(std::move(store)), options_(std::move(options)) {
  if (!scheduler_) throw InvalidInput("survey service needs a scheduler");
  if (!store_) throw InvalidInput("survey service needs a store");
  if (!options_.clock) options_.clock = system_now_ms;
  if (!options_.new_id) {
    std::random_device rd;
    std::seed_seq seq{rd(), rd(), rd(), rd(), rd(), rd(), rd(), rd()};
    id_rng_.seed(seq);
  }

  auto recovered = store_->recover();
  std::lock_guard log(log_mutex_);
  if (recovered.snapshot) restore(*recovered.snapshot);
  last_seq_ = recovered.snapshot_seq;
  for (const auto& event : recovered.events) {
    apply(event);
    last_seq_ = event.at("seq").get<std::uint64_t>();
  }
  // Rebuild scheduler state from the served history.
  std::unique_lock map_lock(sessions_mutex_);
  for (auto& [id, s] : sessions_) {
    s->sched = scheduler_->open_session(id);
    for (const auto& p : s->served) {
      scheduler_->mark_seen(s->sched, p.left, p.right);
      ++s->sched.requests;
    }
  }
}

SurveyService::~SurveyService() = default;

std::string SurveyService::next_id() {
  if (options_.new_id) {
    std::lock_guard lock(id_mutex_);
    return options_.new_id();
  }
  std::lock_guard lock(id_mutex_);
  return fmt::format("{:016x}{:016x}", id_rng_(), id_rng_());
}

SurveyService::SessionState& SurveyService::find(const std::string& session_id) const {
  std::shared_lock lock(sessions_mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw NotFound("unknown session '" + session_id + "'");
  return *it->second;
}

ImageDescriptor SurveyService::describe(const std::string& image_id) const {
  return {image_id, options_.image_url_prefix + image_id + options_.image_extension};
}

std::uint64_t SurveyService::append_locked(json event) {
  const auto seq = store_->append(event);
  event["seq"] = seq;
  apply(event);
  last_seq_ = seq;
  if (options_.snapshot_every > 0 && ++since_snapshot_ >= options_.snapshot_every) {
    store_->write_snapshot(state_locked(), last_seq_);
    since_snapshot_ = 0;
  }
  return seq;
}

void SurveyService::apply(const json& e) {
  const auto& type = e.at("type").get_ref<const std::string&>();
  const auto& sid = e.at("session_id").get_ref<const std::string&>();

  if (type == "session") {
    auto state = std::make_unique<SessionState>();
    state->rater.session_id = sid;
    state->rater.created_at = e.at("created_at").get<TimestampMs>();
    if (e.contains("demographics")) state->rater.demographics = demographics_from_json(e["demographics"]);
    state->sched = scheduler_->open_session(sid);
    std::unique_lock lock(sessions_mutex_);
    sessions_.emplace(sid, std::move(state));
    return;
  }

  SessionState* s = nullptr;
  {
    std::shared_lock lock(sessions_mutex_);
    auto it = sessions_.find(sid);
    if (it == sessions_.end()) throw ParseError("event references unknown session '" + sid + "'");
    s = it->second.get();
  }

  if (type == "demographics") {
    s->rater.demographics = demographics_from_json(e.at("demographics"));
  } else if (type == "served") {
    Outstanding o{e.at("left"), e.at("right"), parse_pair_kind(e.at("kind").get<std::string>()), e.at("token")};
    s->served.push_back(o);
    s->outstanding = std::move(o);
  } else if (type == "vote") {
    Vote v;
    v.vote_id = e.at("vote_id");
    v.session_id = sid;
    v.left_image = e.at("left");
    v.right_image = e.at("right");
    v.choice = parse_choice(e.at("choice").get<std::string>());
    v.pair_kind = parse_pair_kind(e.at("kind").get<std::string>());
    if (e.contains("client_ts")) v.client_ts = e["client_ts"].get<TimestampMs>();
    v.server_ts = e.at("server_ts");
    const std::string token = e.at("token");
    s->vote_by_token[token] = v.vote_id;
    if (s->outstanding && s->outstanding->token == token) s->outstanding.reset();
    last_server_ts_ = std::max(last_server_ts_, v.server_ts);
    votes_.push_back(std::move(v));
  } else {
    throw ParseError("unknown event type '" + type + "'");
  }
}

json SurveyService::state_locked() const {
  json sessions = json::array();
  std::shared_lock lock(sessions_mutex_);
  for (const auto& [id, s] : sessions_) {
    json js{{"session_id", id}, {"created_at", s->rater.created_at}};
    if (s->rater.demographics) js["demographics"] = to_json(*s->rater.demographics);
    json served = json::array();
    for (const auto& o : s->served) served.push_back(outstanding_json(o.left, o.right, o.kind, o.token));
    js["served"] = std::move(served);
    if (s->outstanding)
      js["outstanding"] = outstanding_json(s->outstanding->left, s->outstanding->right, s->outstanding->kind,
                                           s->outstanding->token);
    json tokens = json::object();
    for (const auto& [token, id_] : s->vote_by_token) tokens[token] = id_;
    js["tokens"] = std::move(tokens);
    sessions.push_back(std::move(js));
  }
  json votes = json::array();
  for (const auto& v : votes_) {
    json jv{{"vote_id", v.vote_id},      {"session_id", v.session_id},          {"left", v.left_image},
            {"right", v.right_image},    {"choice", to_string(v.choice)},       {"kind", to_string(v.pair_kind)},
            {"server_ts", v.server_ts}};
    if (v.client_ts) jv["client_ts"] = *v.client_ts;
    votes.push_back(std::move(jv));
  }
  return json{{"sessions", std::move(sessions)}, {"votes", std::move(votes)}};
}

void SurveyService::restore(const json& state) {
  std::unique_lock lock(sessions_mutex_);
  sessions_.clear();
  for (const auto& js : state.at("sessions")) {
    auto s = std::make_unique<SessionState>();
    s->rater.session_id = js.at("session_id");
    s->rater.created_at = js.at("created_at");
    if (js.contains("demographics")) s->rater.demographics = demographics_from_json(js["demographics"]);
    for (const auto& o : js.at("served"))
      s->served.push_back({o.at("left"), o.at("right"), parse_pair_kind(o.at("kind").get<std::string>()), o.at("token")});
    if (js.contains("outstanding")) {
      const auto& o = js["outstanding"];
      s->outstanding = Outstanding{o.at("left"), o.at("right"), parse_pair_kind(o.at("kind").get<std::string>()),
                                   o.at("token")};
    }
    for (const auto& [token, id] : js.at("tokens").items()) s->vote_by_token[token] = id.get<std::uint64_t>();
    sessions_.emplace(s->rater.session_id, std::move(s));
  }
  votes_.clear();
  for (const auto& jv : state.at("votes")) {
    Vote v;
    v.vote_id = jv.at("vote_id");
    v.session_id = jv.at("session_id");
    v.left_image = jv.at("left");
    v.right_image = jv.at("right");
    v.choice = parse_choice(jv.at("choice").get<std::string>());
    v.pair_kind = parse_pair_kind(jv.at("kind").get<std::string>());
    if (jv.contains("client_ts")) v.client_ts = jv["client_ts"].get<TimestampMs>();
    v.server_ts = jv.at("server_ts");
    last_server_ts_ = std::max(last_server_ts_, v.server_ts);
    votes_.push_back(std::move(v));
  }
}

std::string SurveyService::create_session(std::optional<Demographics> demographics) {
  const std::string id = next_id();
  json event{{"type", "session"}, {"session_id", id}};
  if (demographics) event["demographics"] = to_json(*demographics);
  std::lock_guard log(log_mutex_);
  {
    std::shared_lock lock(sessions_mutex_);
    if (sessions_.contains(id)) throw Conflict("session id collision");
  }
  event["created_at"] = options_.clock();
  append_locked(std::move(event));
  return id;
}

void SurveyService::set_demographics(const std::string& session_id, const Demographics& demographics) {
  auto& s = find(session_id);
  std::lock_guard lock(s.mutex);
  if (s.rater.demographics) throw Conflict("demographics already recorded for this session");
  std::lock_guard log(log_mutex_);
  append_locked(json{{"type", "demographics"}, {"session_id", session_id}, {"demographics", to_json(demographics)}});
}

PairResponse SurveyService::get_pair(const std::string& session_id) {
  auto& s = find(session_id);
  std::lock_guard lock(s.mutex);
  if (s.outstanding)
    return PairOffer{describe(s.outstanding->left), describe(s.outstanding->right), s.outstanding->token,
                     s.outstanding->kind};

  const auto next = scheduler_->next_pair(s.sched);
  if (!next) return Completion{};
  const std::string token = next_id();
  {
    std::lock_guard log(log_mutex_);
    json event = outstanding_json(next->left, next->right, next->kind, token);
    event["type"] = "served";
    event["session_id"] = session_id;
    append_locked(std::move(event));
  }
  return PairOffer{describe(next->left), describe(next->right), token, next->kind};
}

std::uint64_t SurveyService::post_vote(const std::string& session_id, const std::string& pair_token, Choice choice,
                                       std::optional<TimestampMs> client_ts) {
  auto& s = find(session_id);
  std::lock_guard lock(s.mutex);
  if (auto it = s.vote_by_token.find(pair_token); it != s.vote_by_token.end()) return it->second;
  if (!s.outstanding || s.outstanding->token != pair_token) throw Conflict("stale or unknown pair token");

  std::lock_guard log(log_mutex_);
  const std::uint64_t vote_id = votes_.size() + 1;
  const TimestampMs server_ts = std::max(options_.clock(), last_server_ts_);
  json event{{"type", "vote"},
             {"vote_id", vote_id},
             {"session_id", session_id},
             {"left", s.outstanding->left},
             {"right", s.outstanding->right},
             {"choice", to_string(choice)},
             {"kind", to_string(s.outstanding->kind)},
             {"server_ts", server_ts},
             {"token", pair_token}};
  if (client_ts) event["client_ts"] = *client_ts;
  append_locked(std::move(event));
  return vote_id;
}

std::optional<Rater> SurveyService::session(const std::string& session_id) const {
  std::lock_guard log(log_mutex_);
  std::shared_lock lock(sessions_mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) return std::nullopt;
  return it->second->rater;
}

std::vector<Vote> SurveyService::votes() const {
  std::lock_guard log(log_mutex_);
  return votes_;
}

std::vector<Rater> SurveyService::sessions() const {
  std::lock_guard log(log_mutex_);
  std::shared_lock lock(sessions_mutex_);
  std::vector<Rater> out;
  out.reserve(sessions_.size());
  for (const auto& [id, s] : sessions_) out.push_back(s->rater);
  // Creation order, then id, so exports do not depend on random ids.
  std::stable_sort(out.begin(), out.end(), [](const Rater& a, const Rater& b) { return a.created_at < b.created_at; });
  return out;
}

ServiceStats SurveyService::stats() const {
  ServiceStats st;
  std::lock_guard log(log_mutex_);
  {
    std::shared_lock lock(sessions_mutex_);
    st.sessions = sessions_.size();
  }
  for (auto c : {Choice::left, Choice::right, Choice::not_comparable, Choice::not_shown})
    st.votes_by_choice[std::string(to_string(c))] = 0;
  std::size_t decisive = 0;
  for (const auto& v : votes_) {
    ++st.votes_by_choice[std::string(to_string(v.choice))];
    if (is_decisive(v.choice)) ++decisive;
  }
  st.votes = votes_.size();
  st.games_multiplier = static_cast<double>(decisive) / static_cast<double>(scheduler_->image_count());
  return st;
}

void SurveyService::export_votes(const std::filesystem::path& path) const {
  csv::write_file_atomic(path, format_votes(votes()));
}

void SurveyService::export_sessions(const std::filesystem::path& path) const {
  csv::write_file_atomic(path, format_sessions(sessions()));
}

void SurveyService::snapshot() {
  std::lock_guard log(log_mutex_);
  store_->write_snapshot(state_locked(), last_seq_);
  since_snapshot_ = 0;
}

}  // namespace percept

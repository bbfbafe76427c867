#include "percept/qa.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "percept/error.hpp"

namespace percept::qa {

namespace {

std::pair<std::string, std::string> unordered(const Vote& v) {
  return v.left_image < v.right_image ? std::pair{v.left_image, v.right_image}
                                      : std::pair{v.right_image, v.left_image};
}

bool earlier(const Vote& a, const Vote& b) {
  return a.server_ts != b.server_ts ? a.server_ts < b.server_ts : a.vote_id < b.vote_id;
}

}  // namespace

std::vector<Vote> filter_duplicates(std::span<const Vote> votes, double window_s) {
  if (!(window_s > 0)) throw InvalidInput("duplicate window must be positive");
  const auto window_ms = static_cast<double>(window_s) * 1000.0;

  std::vector<std::size_t> order(votes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return earlier(votes[a], votes[b]); });

  // Most recent kept vote per (session, unordered pair).
  std::map<std::tuple<std::string, std::string, std::string>, TimestampMs> last_kept;
  std::vector<bool> keep(votes.size(), false);
  for (auto i : order) {
    const auto& v = votes[i];
    auto [a, b] = unordered(v);
    auto key = std::tuple{v.session_id, std::move(a), std::move(b)};
    auto it = last_kept.find(key);
    if (it != last_kept.end() && static_cast<double>(v.server_ts - it->second) < window_ms) continue;
    keep[i] = true;
    last_kept[std::move(key)] = v.server_ts;
  }

  std::vector<Vote> out;
  for (std::size_t i = 0; i < votes.size(); ++i)
    if (keep[i]) out.push_back(votes[i]);
  return out;
}

OneSidedResult filter_one_sided(std::span<const Vote> votes, double threshold, std::size_t min_games) {
  if (!(threshold > 0.5 && threshold <= 1.0)) throw InvalidInput("one-sided threshold must be in (0.5, 1]");
  std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> sides;  // left, right
  for (const auto& v : votes) {
    if (v.choice == Choice::left) ++sides[v.session_id].first;
    if (v.choice == Choice::right) ++sides[v.session_id].second;
  }
  OneSidedResult r;
  for (const auto& [session, lr] : sides) {
    const auto games = lr.first + lr.second;
    if (games < min_games || games == 0) continue;
    const double share = static_cast<double>(std::max(lr.first, lr.second)) / static_cast<double>(games);
    if (share > threshold) r.removed_sessions.insert(session);
  }
  for (const auto& v : votes)
    if (!r.removed_sessions.contains(v.session_id)) r.votes.push_back(v);
  return r;
}

UsableGames filter_usable(std::span<const Vote> votes, const Options& options) {
  UsableGames out;
  out.provenance.total = votes.size();
  std::vector<Vote> decisive;
  for (const auto& v : votes) {
    if (v.choice == Choice::not_comparable)
      ++out.provenance.not_comparable;
    else if (v.choice == Choice::not_shown)
      ++out.provenance.not_shown;
    else
      decisive.push_back(v);
  }
  auto deduped = filter_duplicates(decisive, options.duplicate_window_s);
  out.provenance.duplicate = decisive.size() - deduped.size();
  auto sided = filter_one_sided(deduped, options.one_sided_threshold, options.one_sided_min_games);
  out.provenance.one_sided = deduped.size() - sided.votes.size();
  out.votes = std::move(sided.votes);
  out.one_sided_sessions = std::move(sided.removed_sessions);
  out.provenance.usable = out.votes.size();
  return out;
}

AgreementReport agreement(std::span<const Vote> votes, std::size_t min_games) {
  if (min_games < 1) throw InvalidInput("min_games must be at least 1");
  struct Tally {
    std::size_t games = 0;
    std::size_t first_wins = 0;
    std::set<std::string> users;
  };
  std::map<std::pair<std::string, std::string>, Tally> tallies;
  for (const auto& v : votes) {
    if (!is_decisive(v.choice)) continue;
    auto key = unordered(v);
    auto& t = tallies[key];
    ++t.games;
    if (v.chosen() == key.first) ++t.first_wins;
    t.users.insert(v.session_id);
  }

  AgreementReport r;
  std::set<std::string> users;
  double sum = 0;
  for (const auto& [key, t] : tallies) {
    if (t.games <= min_games) continue;
    PairAgreement p;
    p.first = key.first;
    p.second = key.second;
    p.games = t.games;
    p.first_wins = t.first_wins;
    const double share = static_cast<double>(t.first_wins) / static_cast<double>(t.games);
    p.agreement = std::max(share, 1.0 - share);
    p.majority = share >= 0.5 ? key.first : key.second;
    sum += p.agreement;
    users.insert(t.users.begin(), t.users.end());
    r.pairs.push_back(std::move(p));
  }
  if (!r.pairs.empty()) r.mean = sum / static_cast<double>(r.pairs.size());
  r.users = users.size();
  return r;
}

Grouping parse_grouping(std::string_view text) {
  if (text == "source") return Grouping::source;
  if (text == "location") return Grouping::location;
  if (text == "gender") return Grouping::gender;
  if (text == "activity") return Grouping::activity;
  throw InvalidInput("unknown grouping '" + std::string(text) + "' (expected source, location, gender or activity)");
}

std::string_view to_string(Grouping g) {
  switch (g) {
    case Grouping::source: return "source";
    case Grouping::location: return "location";
    case Grouping::gender: return "gender";
    case Grouping::activity: return "activity";
  }
  return "?";
}

std::optional<std::string> group_level(const Rater& rater, Grouping grouping) {
  if (!rater.demographics) return std::nullopt;
  const auto& d = *rater.demographics;
  switch (grouping) {
    case Grouping::source:
      if (d.source) return std::string(to_string(*d.source));
      break;
    case Grouping::location:
      if (d.location) return std::string(to_string(*d.location));
      break;
    case Grouping::gender:
      if (d.gender) return std::string(to_string(*d.gender));
      break;
    case Grouping::activity:
      if (d.activity) return std::string(to_string(*d.activity));
      break;
  }
  return std::nullopt;
}

std::map<std::string, AgreementReport> group_agreement(std::span<const Vote> votes, std::span<const Rater> sessions,
                                                       Grouping grouping, std::size_t min_games) {
  std::vector<std::string> levels;
  switch (grouping) {
    case Grouping::source: levels = {"amt", "network"}; break;
    case Grouping::location: levels = {"london", "not_london"}; break;
    case Grouping::gender: levels = {"female", "male", "other"}; break;
    case Grouping::activity: levels = {"high", "low"}; break;
  }
  std::unordered_map<std::string, std::string> level_of;
  for (const auto& r : sessions)
    if (auto level = group_level(r, grouping)) level_of[r.session_id] = *level;

  std::map<std::string, std::vector<Vote>> split;
  for (const auto& l : levels) split[l];
  for (const auto& v : votes) {
    auto it = level_of.find(v.session_id);
    if (it != level_of.end()) split[it->second].push_back(v);
  }
  std::map<std::string, AgreementReport> out;
  for (const auto& [level, group_votes] : split) out[level] = agreement(group_votes, min_games);
  return out;
}

double games_multiplier(std::span<const Vote> votes, std::size_t n_images) {
  if (n_images == 0) throw InvalidInput("games multiplier needs at least one image");
  const auto games = std::count_if(votes.begin(), votes.end(), [](const Vote& v) { return is_decisive(v.choice); });
  return static_cast<double>(games) / static_cast<double>(n_images);
}

nlohmann::json report(std::span<const Vote> raw, std::span<const Rater> sessions, const UsableGames& usable,
                      std::size_t n_images, std::size_t agreement_min_games) {
  using nlohmann::json;
  const auto& p = usable.provenance;

  std::size_t with_demographics = 0;
  for (const auto& r : sessions)
    if (r.demographics) ++with_demographics;

  std::map<std::string, std::set<std::string>> images_per_user;
  for (const auto& v : raw) {
    images_per_user[v.session_id].insert(v.left_image);
    images_per_user[v.session_id].insert(v.right_image);
  }
  std::map<std::string, std::size_t> games_per_user;
  for (const auto& v : usable.votes) ++games_per_user[v.session_id];

  auto mean_size = [](const auto& m, auto size_of) {
    if (m.empty()) return 0.0;
    double s = 0;
    for (const auto& [k, v] : m) s += static_cast<double>(size_of(v));
    return s / static_cast<double>(m.size());
  };

  const auto agree = agreement(usable.votes, agreement_min_games);
  double games_per_pair = 0;
  for (const auto& pa : agree.pairs) games_per_pair += static_cast<double>(pa.games);
  if (!agree.pairs.empty()) games_per_pair /= static_cast<double>(agree.pairs.size());

  json groups = json::object();
  for (auto g : {Grouping::source, Grouping::location, Grouping::gender, Grouping::activity}) {
    json levels = json::object();
    for (const auto& [level, rep] : group_agreement(usable.votes, sessions, g, agreement_min_games))
      levels[level] = {{"agreement", rep.mean ? json(*rep.mean) : json(nullptr)},
                       {"pairs", rep.pairs.size()},
                       {"users", rep.users}};
    groups[std::string(to_string(g))] = std::move(levels);
  }

  return json{
      {"images_in_database", n_images},
      {"pairwise_ratings", p.total},
      {"not_comparable", p.not_comparable},
      {"not_shown", p.not_shown},
      {"one_sided_clicks", p.one_sided},
      {"duplicate_choices", p.duplicate},
      {"usable_games", p.usable},
      {"users", sessions.size()},
      {"users_with_demographics", with_demographics},
      {"one_sided_users", usable.one_sided_sessions.size()},
      {"images_per_user_mean", mean_size(images_per_user, [](const auto& s) { return s.size(); })},
      {"games_per_user_mean", mean_size(games_per_user, [](std::size_t n) { return n; })},
      {"repeated_image_pairs", agree.pairs.size()},
      {"games_per_repeated_pair_mean", games_per_pair},
      {"repeated_pairs_agreement", agree.mean ? json(*agree.mean) : json(nullptr)},
      {"repeated_pairs_users", agree.users},
      {"games_multiplier", n_images ? games_multiplier(usable.votes, n_images) : 0.0},
      {"group_agreement", std::move(groups)},
  };
}

}  // namespace percept::qa

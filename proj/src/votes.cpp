#include "percept/votes.hpp"

#include <nlohmann/json.hpp>

#include <array>

#include "percept/csv.hpp"
#include "percept/error.hpp"

namespace percept {

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view text, const std::array<std::pair<std::string_view, E>, N>& table, const char* what) {
  for (const auto& [name, value] : table)
    if (name == text) return value;
  throw InvalidInput(std::string("invalid ") + what + " '" + std::string(text) + "'");
}

template <typename E, std::size_t N>
std::string_view enum_name(E v, const std::array<std::pair<std::string_view, E>, N>& table) {
  for (const auto& [name, value] : table)
    if (value == v) return name;
  return "?";
}

constexpr std::array<std::pair<std::string_view, Choice>, 4> kChoices{{{"left", Choice::left},
                                                                       {"right", Choice::right},
                                                                       {"not_comparable", Choice::not_comparable},
                                                                       {"not_shown", Choice::not_shown}}};
constexpr std::array<std::pair<std::string_view, Location>, 2> kLocations{
    {{"london", Location::london}, {"not_london", Location::not_london}}};
constexpr std::array<std::pair<std::string_view, Gender>, 3> kGenders{
    {{"female", Gender::female}, {"male", Gender::male}, {"other", Gender::other}}};
constexpr std::array<std::pair<std::string_view, Activity>, 2> kActivities{
    {{"high", Activity::high}, {"low", Activity::low}}};
constexpr std::array<std::pair<std::string_view, Source>, 2> kSources{{{"amt", Source::amt}, {"network", Source::network}}};

template <typename T>
std::string cell(const std::optional<T>& v) {
  return v ? std::string(to_string(*v)) : std::string();
}

}  // namespace

std::string_view to_string(Choice c) { return enum_name(c, kChoices); }
Choice parse_choice(std::string_view text) { return parse_enum(text, kChoices, "choice"); }
std::string_view to_string(Location v) { return enum_name(v, kLocations); }
std::string_view to_string(Gender v) { return enum_name(v, kGenders); }
std::string_view to_string(Activity v) { return enum_name(v, kActivities); }
std::string_view to_string(Source v) { return enum_name(v, kSources); }

Demographics demographics_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InvalidInput("demographics must be a JSON object");
  Demographics d;
  for (const auto& [key, value] : j.items()) {
    if (value.is_null()) continue;
    if (!value.is_string()) throw InvalidInput("demographic '" + key + "' must be a string");
    const auto text = value.get<std::string>();
    if (key == "location")
      d.location = parse_enum(text, kLocations, "location");
    else if (key == "gender")
      d.gender = parse_enum(text, kGenders, "gender");
    else if (key == "activity")
      d.activity = parse_enum(text, kActivities, "activity");
    else if (key == "source")
      d.source = parse_enum(text, kSources, "source");
    else
      throw InvalidInput("unknown demographic field '" + key + "'");
  }
  return d;
}

nlohmann::json to_json(const Demographics& d) {
  auto j = nlohmann::json::object();
  if (d.location) j["location"] = to_string(*d.location);
  if (d.gender) j["gender"] = to_string(*d.gender);
  if (d.activity) j["activity"] = to_string(*d.activity);
  if (d.source) j["source"] = to_string(*d.source);
  return j;
}

std::string format_votes(const std::vector<Vote>& votes) {
  std::string out = "vote_id,session_id,left_image,right_image,choice,pair_kind,client_ts,server_ts\n";
  for (const auto& v : votes) {
    out += std::to_string(v.vote_id) + ',' + v.session_id + ',' + v.left_image + ',' + v.right_image + ',';
    out += std::string(to_string(v.choice)) + ',' + std::string(to_string(v.pair_kind)) + ',';
    if (v.client_ts) out += format_iso8601(*v.client_ts);
    out += ',' + format_iso8601(v.server_ts) + '\n';
  }
  return out;
}

std::vector<Vote> read_votes(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  const std::vector<std::string> expected{"vote_id", "session_id", "left_image", "right_image",
                                          "choice",  "pair_kind",  "client_ts",  "server_ts"};
  if (table.header != expected) throw ParseError(path.string() + ": unexpected vote header", 1);
  std::vector<Vote> votes;
  votes.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    const auto& f = row.fields;
    if (f.size() != expected.size()) throw ParseError(path.string() + ": wrong number of fields", row.line);
    try {
      Vote v;
      v.vote_id = static_cast<std::uint64_t>(csv::to_int(f[0], row.line));
      v.session_id = f[1];
      v.left_image = f[2];
      v.right_image = f[3];
      v.choice = parse_choice(f[4]);
      v.pair_kind = parse_pair_kind(f[5]);
      if (!f[6].empty()) v.client_ts = parse_iso8601(f[6]);
      v.server_ts = parse_iso8601(f[7]);
      if (v.left_image == v.right_image) throw ParseError("vote pairs an image with itself");
      votes.push_back(std::move(v));
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ": " + e.what(), row.line);
    } catch (const InvalidInput& e) {
      throw ParseError(path.string() + ": " + e.what(), row.line);
    }
  }
  return votes;
}

std::string format_sessions(const std::vector<Rater>& raters) {
  std::string out = "session_id,created_at,location,gender,activity,source\n";
  for (const auto& r : raters) {
    out += r.session_id + ',' + format_iso8601(r.created_at) + ',';
    const Demographics d = r.demographics.value_or(Demographics{});
    out += cell(d.location) + ',' + cell(d.gender) + ',' + cell(d.activity) + ',' + cell(d.source) + '\n';
  }
  return out;
}

std::vector<Rater> read_sessions(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  const std::vector<std::string> expected{"session_id", "created_at", "location", "gender", "activity", "source"};
  if (table.header != expected) throw ParseError(path.string() + ": unexpected session header", 1);
  std::vector<Rater> out;
  for (const auto& row : table.rows) {
    const auto& f = row.fields;
    if (f.size() != expected.size()) throw ParseError(path.string() + ": wrong number of fields", row.line);
    try {
      Rater r;
      r.session_id = f[0];
      r.created_at = parse_iso8601(f[1]);
      Demographics d;
      if (!f[2].empty()) d.location = parse_enum(f[2], kLocations, "location");
      if (!f[3].empty()) d.gender = parse_enum(f[3], kGenders, "gender");
      if (!f[4].empty()) d.activity = parse_enum(f[4], kActivities, "activity");
      if (!f[5].empty()) d.source = parse_enum(f[5], kSources, "source");
      if (d != Demographics{}) r.demographics = d;
      out.push_back(std::move(r));
    } catch (const InvalidInput& e) {
      throw ParseError(path.string() + ": " + e.what(), row.line);
    }
  }
  return out;
}

}  // namespace percept

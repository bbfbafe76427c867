#pragma once

// Survey records shared by the service, its exports and the QA stage.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "percept/scheduler.hpp"
#include "percept/timeutil.hpp"

namespace percept {

enum class Choice { left, right, not_comparable, not_shown };

std::string_view to_string(Choice c);
/// Throws InvalidInput on anything but the four category names.
Choice parse_choice(std::string_view text);
inline bool is_decisive(Choice c) { return c == Choice::left || c == Choice::right; }

enum class Location { london, not_london };
enum class Gender { female, male, other };
enum class Activity { high, low };
enum class Source { amt, network };

/// Every field is optional; a session may answer some questions only.
struct Demographics {
  std::optional<Location> location;
  std::optional<Gender> gender;
  std::optional<Activity> activity;
  std::optional<Source> source;

  friend bool operator==(const Demographics&, const Demographics&) = default;
};

std::string_view to_string(Location v);
std::string_view to_string(Gender v);
std::string_view to_string(Activity v);
std::string_view to_string(Source v);

/// {"location":"london",...}; unknown keys or values throw InvalidInput.
Demographics demographics_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Demographics& d);

struct Rater {
  std::string session_id;
  TimestampMs created_at = 0;
  std::optional<Demographics> demographics;
};

struct Vote {
  std::uint64_t vote_id = 0;
  std::string session_id;
  std::string left_image;
  std::string right_image;
  Choice choice = Choice::left;
  PairKind pair_kind = PairKind::fresh;
  std::optional<TimestampMs> client_ts;
  TimestampMs server_ts = 0;

  /// Image picked by a decisive vote.
  const std::string& chosen() const { return choice == Choice::right ? right_image : left_image; }
};

/// CSV `vote_id,session_id,left_image,right_image,choice,pair_kind,client_ts,server_ts`.
std::string format_votes(const std::vector<Vote>& votes);
std::vector<Vote> read_votes(const std::filesystem::path& path);

/// CSV `session_id,created_at,location,gender,activity,source`.
std::string format_sessions(const std::vector<Rater>& raters);
std::vector<Rater> read_sessions(const std::filesystem::path& path);

}  // namespace percept

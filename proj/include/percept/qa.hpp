#pragma once

// Vote quality control: category exclusion, duplicate and one-sided filters,
// repeated-pair agreement and throughput statistics.

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "percept/votes.hpp"

namespace percept::qa {

inline constexpr double kOneSidedThreshold = 0.9;
inline constexpr std::size_t kOneSidedMinGames = 10;
inline constexpr double kDuplicateWindowS = 60.0;
inline constexpr std::size_t kAgreementMinGames = 10;

struct Options {
  double one_sided_threshold = kOneSidedThreshold;
  std::size_t one_sided_min_games = kOneSidedMinGames;
  double duplicate_window_s = kDuplicateWindowS;
};

/// Why raw votes did not become usable games. The fields always sum to `total`.
struct Provenance {
  std::size_t total = 0;
  std::size_t not_comparable = 0;
  std::size_t not_shown = 0;
  std::size_t duplicate = 0;
  std::size_t one_sided = 0;
  std::size_t usable = 0;
};

struct UsableGames {
  std::vector<Vote> votes;  // left/right only, input order
  Provenance provenance;
  std::set<std::string> one_sided_sessions;
};

/// For each session and unordered pair, a vote is dropped when an earlier kept
/// vote lies strictly less than window_s before it (server time; ties by vote id).
std::vector<Vote> filter_duplicates(std::span<const Vote> votes, double window_s = kDuplicateWindowS);

struct OneSidedResult {
  std::vector<Vote> votes;
  std::set<std::string> removed_sessions;
};

/// Drops every vote of a session with at least min_games left/right votes whose
/// larger side share is strictly above threshold.
OneSidedResult filter_one_sided(std::span<const Vote> votes, double threshold = kOneSidedThreshold,
                                std::size_t min_games = kOneSidedMinGames);

/// Category exclusion, then duplicates, then one-sided sessions.
UsableGames filter_usable(std::span<const Vote> votes, const Options& options = {});

struct PairAgreement {
  std::string first;   // lexicographically smaller image id
  std::string second;
  std::size_t games = 0;
  std::size_t first_wins = 0;
  std::string majority;  // image chosen by the majority (first on a tie)
  double agreement = 0.0;
};

struct AgreementReport {
  std::vector<PairAgreement> pairs;
  std::optional<double> mean;  // unweighted over qualifying pairs
  std::size_t users = 0;       // distinct sessions voting on qualifying pairs
};

/// Majority share for every unordered pair with strictly more than min_games
/// left/right votes. Other categories are ignored.
AgreementReport agreement(std::span<const Vote> votes, std::size_t min_games = kAgreementMinGames);

enum class Grouping { source, location, gender, activity };
Grouping parse_grouping(std::string_view text);
std::string_view to_string(Grouping g);

/// Level of a rater for a grouping, or nullopt when they did not answer.
std::optional<std::string> group_level(const Rater& rater, Grouping grouping);

/// agreement() restricted to each subgroup's own votes. Every level of the
/// grouping appears, with an empty report when nothing qualifies.
std::map<std::string, AgreementReport> group_agreement(std::span<const Vote> votes, std::span<const Rater> sessions,
                                                       Grouping grouping,
                                                       std::size_t min_games = kAgreementMinGames);

/// Left/right votes per image.
double games_multiplier(std::span<const Vote> votes, std::size_t n_images);

/// Summary with the survey's descriptive rows (ratings, exclusions, usable games, users, ...).
nlohmann::json report(std::span<const Vote> raw, std::span<const Rater> sessions, const UsableGames& usable,
                      std::size_t n_images, std::size_t agreement_min_games = kAgreementMinGames);

}  // namespace percept::qa

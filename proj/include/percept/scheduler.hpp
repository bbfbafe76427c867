#pragma once

// Pair scheduling for the comparison survey. A mixing coefficient alpha
// forces a share of pairs to come from a single cluster; a small rate of
// designated repeated pairs is injected to measure rater agreement.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "percept/rng.hpp"

namespace percept {

inline constexpr double kDefaultWithinFraction = 0.20;
inline constexpr double kDefaultRepeatRate = 0.05;
inline constexpr std::size_t kDefaultRepeatedPairs = 14;

enum class PairKind { fresh, repeated };

std::string_view to_string(PairKind kind);
PairKind parse_pair_kind(std::string_view text);

struct SurveyImage {
  std::string image_id;
  int cluster = 0;
};

using ImagePair = std::pair<std::string, std::string>;

struct SchedulerConfig {
  double alpha = 0.0;
  double repeat_rate = kDefaultRepeatRate;
  std::vector<ImagePair> repeated_pairs;
  std::uint64_t seed = 0;
};

struct ScheduledPair {
  std::string left;
  std::string right;
  PairKind kind = PairKind::fresh;
};

/// Sum of squared cluster shares: the within-cluster fraction of uniform pairing.
double within_cluster_baseline(std::span<const std::size_t> cluster_sizes);

/// Mixing coefficient that yields the target within-cluster fraction:
/// alpha = (target - baseline) / (1 - baseline).
double calibrate_alpha(std::span<const std::size_t> cluster_sizes, double target_within_fraction);

/// Picks `count` distinct unordered pairs uniformly at random.
std::vector<ImagePair> designate_repeated_pairs(std::span<const SurveyImage> images, std::size_t count,
                                                std::uint64_t seed);

class PairScheduler {
public:
  /// Per-session scheduling state. One writer per session.
  struct Session {
    std::string session_id;
    std::uint64_t requests = 0;
    std::unordered_set<std::uint64_t> seen;  // unordered pair keys
    std::vector<std::size_t> within_seen;    // per-cluster count of seen same-cluster pairs
    std::unordered_set<std::size_t> repeated_served;
  };

  PairScheduler(std::vector<SurveyImage> images, SchedulerConfig config);

  Session open_session(std::string session_id) const;

  /// Next pair for the session, or nullopt once every pair has been seen.
  /// Deterministic in (config seed, session id, number of prior requests).
  std::optional<ScheduledPair> next_pair(Session& session) const;

  /// Records a pair as seen without drawing it (log replay).
  void mark_seen(Session& session, const std::string& left, const std::string& right) const;

  bool contains(const std::string& image_id) const { return index_.contains(image_id); }
  std::size_t image_count() const { return images_.size(); }
  std::size_t cluster_count() const { return members_.size(); }
  std::vector<std::size_t> cluster_sizes() const;
  const SchedulerConfig& config() const { return config_; }
  const std::vector<SurveyImage>& images() const { return images_; }

  std::optional<int> cluster_of(const std::string& image_id) const;

private:
  std::uint64_t key(std::size_t a, std::size_t b) const;
  void record(Session& s, std::size_t a, std::size_t b) const;
  std::optional<std::pair<std::size_t, std::size_t>> draw_within(Session& s, std::size_t cluster, Rng& rng) const;

  std::vector<SurveyImage> images_;
  SchedulerConfig config_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::vector<std::size_t>> members_;  // image indices per cluster
  std::vector<std::pair<std::size_t, std::size_t>> repeated_;
};

/// Key-value scheduler configuration as read from disk.
struct SchedulerFile {
  SchedulerConfig config;
  std::vector<SurveyImage> images;
  std::optional<double> target_within_fraction;  // set when alpha = auto
};

/// Parses `key = value` lines (`#` comments). Keys: alpha (number or `auto`),
/// target_within_fraction, repeat_rate, seed, survey_images (CSV image_id,cluster),
/// repeated_pairs (CSV left_id,right_id), repeated_pair_count. Relative paths
/// resolve against the config file's directory.
SchedulerFile load_scheduler_config(const std::filesystem::path& path);

/// CSV `image_id,cluster`.
std::vector<SurveyImage> read_survey_images(const std::filesystem::path& path);

std::vector<ImagePair> read_pairs(const std::filesystem::path& path);

}  // namespace percept

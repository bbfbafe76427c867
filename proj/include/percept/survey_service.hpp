#pragma once

// Survey back-end state machine: sessions, pair serving, vote recording.
// Thread-safe; every state change is persisted before it becomes visible.

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "percept/event_store.hpp"
#include "percept/scheduler.hpp"
#include "percept/timeutil.hpp"
#include "percept/votes.hpp"

namespace percept {

struct ImageDescriptor {
  std::string image_id;
  std::string url;
};

struct PairOffer {
  ImageDescriptor left;
  ImageDescriptor right;
  std::string pair_token;
  PairKind kind = PairKind::fresh;
};

/// Returned once a session has seen every available pair.
struct Completion {};

using PairResponse = std::variant<PairOffer, Completion>;

struct ServiceStats {
  std::size_t sessions = 0;
  std::size_t votes = 0;
  std::map<std::string, std::size_t> votes_by_choice;
  /// Left/right votes divided by survey images.
  double games_multiplier = 0.0;
};

struct ServiceOptions {
  std::string image_url_prefix = "/images/";
  std::string image_extension = ".jpg";
  /// Take a full snapshot after this many appended events (0 disables).
  std::uint64_t snapshot_every = 1000;
  Clock clock = system_now_ms;
  /// Source of session ids and pair tokens. Defaults to 128 random bits in hex.
  std::function<std::string()> new_id;
};

class SurveyService {
public:
  /// Recovers any state already in the store.
  SurveyService(std::shared_ptr<const PairScheduler> scheduler, std::unique_ptr<EventStore> store,
                ServiceOptions options = {});
  ~SurveyService();

  std::string create_session(std::optional<Demographics> demographics = std::nullopt);

  /// Demographics can be set once per session; a second call is a Conflict.
  void set_demographics(const std::string& session_id, const Demographics& demographics);

  /// The session's outstanding pair, or a new one. Repeated calls without a
  /// vote return the same pair.
  PairResponse get_pair(const std::string& session_id);

  /// Records a vote for the outstanding pair. Resubmitting an already used
  /// token returns the original vote id and changes nothing.
  std::uint64_t post_vote(const std::string& session_id, const std::string& pair_token, Choice choice,
                          std::optional<TimestampMs> client_ts = std::nullopt);

  std::optional<Rater> session(const std::string& session_id) const;
  std::vector<Vote> votes() const;
  std::vector<Rater> sessions() const;
  ServiceStats stats() const;

  /// Consistent dumps in the documented CSV formats.
  void export_votes(const std::filesystem::path& path) const;
  void export_sessions(const std::filesystem::path& path) const;

  /// Forces a snapshot now.
  void snapshot();

private:
  struct Outstanding {
    std::string left;
    std::string right;
    PairKind kind = PairKind::fresh;
    std::string token;
  };

  struct SessionState {
    mutable std::mutex mutex;  // one writer per session
    // Fields below change only with both `mutex` and the log lock held.
    Rater rater;
    std::optional<Outstanding> outstanding;
    std::vector<Outstanding> served;
    std::unordered_map<std::string, std::uint64_t> vote_by_token;
    // Derived from `served`; touched under `mutex` only.
    PairScheduler::Session sched;
  };

  SessionState& find(const std::string& session_id) const;
  std::uint64_t append_locked(nlohmann::json event);
  void apply(const nlohmann::json& event);
  nlohmann::json state_locked() const;
  void restore(const nlohmann::json& state);
  ImageDescriptor describe(const std::string& image_id) const;
  std::string next_id();

  std::shared_ptr<const PairScheduler> scheduler_;
  std::unique_ptr<EventStore> store_;
  ServiceOptions options_;

  mutable std::mutex log_mutex_;
  std::uint64_t last_seq_ = 0;
  std::uint64_t since_snapshot_ = 0;
  std::vector<Vote> votes_;
  TimestampMs last_server_ts_ = 0;

  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::unique_ptr<SessionState>> sessions_;

  std::mutex id_mutex_;
  std::mt19937_64 id_rng_;
};

}  // namespace percept

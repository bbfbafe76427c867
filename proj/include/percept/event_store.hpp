#pragma once

// Durable storage for the survey service: an append-only, line-delimited JSON
// event log plus an occasional full-state snapshot. Recovery loads the newest
// snapshot and replays every later event.

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

namespace percept {

struct RecoveredState {
  std::optional<nlohmann::json> snapshot;
  std::uint64_t snapshot_seq = 0;
  std::vector<nlohmann::json> events;  // seq > snapshot_seq, in order
};

class EventStore {
public:
  virtual ~EventStore() = default;

  /// Durably appends one event and returns its sequence number (1-based,
  /// strictly increasing). The "seq" field is stamped onto the event.
  /// Callers serialize appends.
  virtual std::uint64_t append(nlohmann::json event) = 0;

  virtual void write_snapshot(const nlohmann::json& state, std::uint64_t seq) = 0;

  virtual RecoveredState recover() = 0;
};

/// Keeps everything in memory. Useful for tests and for simulations.
class MemoryEventStore final : public EventStore {
public:
  std::uint64_t append(nlohmann::json event) override;
  void write_snapshot(const nlohmann::json& state, std::uint64_t seq) override;
  RecoveredState recover() override;

  const std::vector<nlohmann::json>& events() const { return events_; }

private:
  std::vector<nlohmann::json> events_;
  std::optional<nlohmann::json> snapshot_;
  std::uint64_t snapshot_seq_ = 0;
};

struct FileStoreOptions {
  bool fsync = true;
};

/// `events.log` and `snapshot.json` inside a directory.
class FileEventStore final : public EventStore {
public:
  explicit FileEventStore(std::filesystem::path dir, FileStoreOptions options = {});
  ~FileEventStore() override;
  FileEventStore(const FileEventStore&) = delete;
  FileEventStore& operator=(const FileEventStore&) = delete;

  std::uint64_t append(nlohmann::json event) override;
  void write_snapshot(const nlohmann::json& state, std::uint64_t seq) override;

  /// Reads snapshot and log. A torn final line (crash mid-append) is dropped
  /// and truncated away; corruption anywhere else is an error.
  RecoveredState recover() override;

  const std::filesystem::path& dir() const { return dir_; }

private:
  void open_log();

  std::filesystem::path dir_;
  FileStoreOptions options_;
  int fd_ = -1;
  std::uint64_t next_seq_ = 1;
  bool recovered_ = false;
};

}  // namespace percept

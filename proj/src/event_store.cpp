#include "percept/event_store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "percept/csv.hpp"
#include "percept/error.hpp"

namespace percept {

namespace {

std::string errno_text() { return std::strerror(errno); }

void write_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const ssize_t n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError("write failed: " + errno_text());
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

void fsync_path(const std::filesystem::path& p) {
  const int fd = ::open(p.c_str(), O_RDONLY);
  if (fd < 0) return;
  ::fsync(fd);
  ::close(fd);
}

}  // namespace

std::uint64_t MemoryEventStore::append(nlohmann::json event) {
  const std::uint64_t seq = events_.size() + 1;
  event["seq"] = seq;
  events_.push_back(std::move(event));
  return seq;
}

void MemoryEventStore::write_snapshot(const nlohmann::json& state, std::uint64_t seq) {
  snapshot_ = state;
  snapshot_seq_ = seq;
}

RecoveredState MemoryEventStore::recover() {
  RecoveredState r;
  r.snapshot = snapshot_;
  r.snapshot_seq = snapshot_seq_;
  for (const auto& e : events_)
    if (e.at("seq").get<std::uint64_t>() > snapshot_seq_) r.events.push_back(e);
  return r;
}

FileEventStore::FileEventStore(std::filesystem::path dir, FileStoreOptions options)
    : dir_(std::move(dir)), options_(options) {
  std::filesystem::create_directories(dir_);
}

FileEventStore::~FileEventStore() {
  if (fd_ >= 0) ::close(fd_);
}

void FileEventStore::open_log() {
  fd_ = ::open((dir_ / "events.log").c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) throw IoError("cannot open event log in " + dir_.string() + ": " + errno_text());
}

std::uint64_t FileEventStore::append(nlohmann::json event) {
  if (!recovered_) recover();
  const std::uint64_t seq = next_seq_;
  event["seq"] = seq;
  std::string line = event.dump();
  line.push_back('\n');
  write_all(fd_, line);
  if (options_.fsync && ::fdatasync(fd_) != 0) throw IoError("fdatasync failed: " + errno_text());
  ++next_seq_;
  return seq;
}

void FileEventStore::write_snapshot(const nlohmann::json& state, std::uint64_t seq) {
  nlohmann::json doc{{"seq", seq}, {"state", state}};
  csv::write_file_atomic(dir_ / "snapshot.json", doc.dump());
  if (options_.fsync) {
    fsync_path(dir_ / "snapshot.json");
    fsync_path(dir_);
  }
}

RecoveredState FileEventStore::recover() {
  RecoveredState r;
  const auto snap_path = dir_ / "snapshot.json";
  if (std::filesystem::exists(snap_path)) {
    auto doc = nlohmann::json::parse(csv::read_file(snap_path));
    r.snapshot_seq = doc.at("seq").get<std::uint64_t>();
    r.snapshot = std::move(doc.at("state"));
  }

  const auto log_path = dir_ / "events.log";
  std::uint64_t last_seq = r.snapshot_seq;
  if (std::filesystem::exists(log_path)) {
    const std::string data = csv::read_file(log_path);
    std::size_t pos = 0;
    std::size_t good_end = 0;
    std::size_t lineno = 0;
    while (pos < data.size()) {
      const auto nl = data.find('\n', pos);
      ++lineno;
      if (nl == std::string::npos) break;  // torn tail: no terminating newline
      const std::string_view line(data.data() + pos, nl - pos);
      nlohmann::json event;
      try {
        event = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception&) {
        if (nl + 1 == data.size()) break;  // torn final record
        throw ParseError("corrupt event log record", lineno);
      }
      const auto seq = event.at("seq").get<std::uint64_t>();
      if (seq <= last_seq && seq > r.snapshot_seq) throw ParseError("event log sequence out of order", lineno);
      if (seq > r.snapshot_seq) {
        if (seq != last_seq + 1) throw ParseError("gap in event log sequence", lineno);
        r.events.push_back(std::move(event));
        last_seq = seq;
      }
      good_end = nl + 1;
      pos = nl + 1;
    }
    if (good_end < data.size()) std::filesystem::resize_file(log_path, good_end);
  }
  next_seq_ = last_seq + 1;
  if (fd_ < 0) open_log();
  recovered_ = true;
  return r;
}

}  // namespace percept

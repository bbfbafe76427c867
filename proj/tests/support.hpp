#pragma once

// Helpers shared by the test suites: temporary directories and small builders.

#include <filesystem>
#include <string>
#include <string_view>

#include <unistd.h>

#include "percept/csv.hpp"
#include "percept/votes.hpp"

namespace testing {

class TempDir {
public:
  explicit TempDir(std::string_view tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("percept-" + std::string(tag) + "-" + std::to_string(::getpid()) + "-" + std::to_string(++counter));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(std::string_view name) const { return path_ / name; }

  std::filesystem::path write(std::string_view name, std::string_view contents) const {
    const auto p = path_ / name;
    percept::csv::write_file_atomic(p, contents);
    return p;
  }

private:
  std::filesystem::path path_;
};

inline percept::Vote vote(std::uint64_t id, std::string session, std::string left, std::string right,
                          percept::Choice choice, percept::TimestampMs ts_ms,
                          percept::PairKind kind = percept::PairKind::fresh) {
  percept::Vote v;
  v.vote_id = id;
  v.session_id = std::move(session);
  v.left_image = std::move(left);
  v.right_image = std::move(right);
  v.choice = choice;
  v.pair_kind = kind;
  v.server_ts = ts_ms;
  return v;
}

}  // namespace testing

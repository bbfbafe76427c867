#include "percept/timeutil.hpp"

#include <fmt/format.h>

#include <chrono>
#include <charconv>

#include "percept/error.hpp"

namespace percept {

namespace {

int read_digits(std::string_view text, std::size_t pos, std::size_t count) {
  if (pos + count > text.size()) throw ParseError("truncated timestamp: " + std::string(text));
  int v = 0;
  auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + pos + count, v);
  if (ec != std::errc() || ptr != text.data() + pos + count)
    throw ParseError("bad timestamp: " + std::string(text));
  return v;
}

void expect(std::string_view text, std::size_t pos, char c) {
  if (pos >= text.size() || text[pos] != c) throw ParseError("bad timestamp: " + std::string(text));
}

}  // namespace

std::string format_iso8601(TimestampMs ts) {
  using namespace std::chrono;
  const auto tp = sys_time<milliseconds>(milliseconds(ts));
  const auto day = floor<days>(tp);
  const year_month_day ymd(day);
  auto rest = tp - day;
  const auto h = duration_cast<hours>(rest);
  rest -= h;
  const auto m = duration_cast<minutes>(rest);
  rest -= m;
  const auto s = duration_cast<seconds>(rest);
  rest -= s;
  return fmt::format("{:04d}-{:02d}-{:02d}T{:02d}:{:02d}:{:02d}.{:03d}Z", int(ymd.year()),
                     unsigned(ymd.month()), unsigned(ymd.day()), h.count(), m.count(), s.count(),
                     rest.count());
}

TimestampMs parse_iso8601(std::string_view text) {
  using namespace std::chrono;
  const int y = read_digits(text, 0, 4);
  expect(text, 4, '-');
  const int mo = read_digits(text, 5, 2);
  expect(text, 7, '-');
  const int d = read_digits(text, 8, 2);
  expect(text, 10, 'T');
  const int hh = read_digits(text, 11, 2);
  expect(text, 13, ':');
  const int mm = read_digits(text, 14, 2);
  expect(text, 16, ':');
  const int ss = read_digits(text, 17, 2);
  std::size_t pos = 19;
  int ms = 0;
  if (pos < text.size() && text[pos] == '.') {
    ms = read_digits(text, pos + 1, 3);
    pos += 4;
  }
  expect(text, pos, 'Z');
  if (pos + 1 != text.size()) throw ParseError("trailing characters in timestamp: " + std::string(text));
  const year_month_day ymd{year(y), month(static_cast<unsigned>(mo)), day(static_cast<unsigned>(d))};
  if (!ymd.ok() || hh > 23 || mm > 59 || ss > 60) throw ParseError("bad timestamp: " + std::string(text));
  const auto tp = sys_days(ymd) + hours(hh) + minutes(mm) + seconds(ss) + milliseconds(ms);
  return duration_cast<milliseconds>(tp.time_since_epoch()).count();
}

TimestampMs system_now_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

}  // namespace percept

#include "evalroom/clock.hpp"

#include <atomic>
#include <charconv>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace evalroom {

Clock system_clock() {
    return [] { return std::chrono::time_point_cast<std::chrono::milliseconds>(std::chrono::system_clock::now()); };
}

Clock stepping_clock(Timestamp start, std::chrono::milliseconds step) {
    auto ticks = std::make_shared<std::atomic<std::int64_t>>(0);
    return [start, step, ticks] { return start + step * ticks->fetch_add(1); };
}

std::string format_rfc3339(Timestamp t) {
    using namespace std::chrono;
    const auto day = floor<days>(t);
    const year_month_day ymd{day};
    const hh_mm_ss hms{t - day};
    char buf[96];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02ld.%03ldZ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<long>(hms.hours().count()), static_cast<long>(hms.minutes().count()),
                  static_cast<long>(hms.seconds().count()), static_cast<long>(hms.subseconds().count()));
    return buf;
}

namespace {

int read_digits(std::string_view text, std::size_t pos, std::size_t count) {
    if (pos + count > text.size()) throw std::invalid_argument("truncated timestamp");
    int value = 0;
    auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + pos + count, value);
    if (ec != std::errc{} || ptr != text.data() + pos + count) throw std::invalid_argument("bad timestamp digits");
    return value;
}

void expect(std::string_view text, std::size_t pos, char c) {
    if (pos >= text.size() || text[pos] != c) throw std::invalid_argument("bad timestamp separator");
}

} // namespace

Timestamp parse_rfc3339(std::string_view text) {
    using namespace std::chrono;
    const int y = read_digits(text, 0, 4);
    expect(text, 4, '-');
    const int mo = read_digits(text, 5, 2);
    expect(text, 7, '-');
    const int d = read_digits(text, 8, 2);
    expect(text, 10, 'T');
    const int h = read_digits(text, 11, 2);
    expect(text, 13, ':');
    const int mi = read_digits(text, 14, 2);
    expect(text, 16, ':');
    const int s = read_digits(text, 17, 2);
    std::size_t pos = 19;
    int millis = 0;
    if (pos < text.size() && text[pos] == '.') {
        std::size_t digits = 0;
        ++pos;
        while (pos + digits < text.size() && text[pos + digits] >= '0' && text[pos + digits] <= '9') ++digits;
        if (digits == 0 || digits > 3) throw std::invalid_argument("bad timestamp fraction");
        millis = read_digits(text, pos, digits);
        for (std::size_t i = digits; i < 3; ++i) millis *= 10;
        pos += digits;
    }
    expect(text, pos, 'Z');
    if (pos + 1 != text.size()) throw std::invalid_argument("trailing timestamp characters");

    const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok() || h > 23 || mi > 59 || s > 59) throw std::invalid_argument("timestamp out of range");
    return sys_days{ymd} + hours{h} + minutes{mi} + seconds{s} + milliseconds{millis};
}

} // namespace evalroom

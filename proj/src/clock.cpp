#include "ctxintel/clock.hpp"

#include <cstdio>
#include <thread>

namespace ctxintel {

using namespace std::chrono;

std::string format_timestamp(Timestamp t) {
    const auto day = floor<days>(t);
    const year_month_day ymd{day};
    const hh_mm_ss hms{t - day};
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02lld",
                  static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()), static_cast<long>(hms.hours().count()),
                  static_cast<long>(hms.minutes().count()),
                  static_cast<long long>(hms.seconds().count()));
    std::string out(buf);
    char frac[8];
    std::snprintf(frac, sizeof frac, ".%03lldZ", static_cast<long long>(hms.subseconds().count()));
    return out + frac;
}

std::optional<Timestamp> parse_timestamp(std::string_view text) {
    auto digits = [&](std::size_t pos, std::size_t n) -> std::optional<int> {
        if (pos + n > text.size()) return std::nullopt;
        int v = 0;
        for (std::size_t i = pos; i < pos + n; ++i) {
            if (text[i] < '0' || text[i] > '9') return std::nullopt;
            v = v * 10 + (text[i] - '0');
        }
        return v;
    };
    auto expect = [&](std::size_t pos, char c) { return pos < text.size() && text[pos] == c; };

    const auto y = digits(0, 4), mo = digits(5, 2), d = digits(8, 2);
    const auto h = digits(11, 2), mi = digits(14, 2), s = digits(17, 2);
    if (!y || !mo || !d || !h || !mi || !s) return std::nullopt;
    if (!expect(4, '-') || !expect(7, '-') || !(expect(10, 'T') || expect(10, ' ')) ||
        !expect(13, ':') || !expect(16, ':'))
        return std::nullopt;

    std::size_t pos = 19;
    int millis = 0;
    if (expect(pos, '.')) {
        ++pos;
        int scale = 100;
        std::size_t start = pos;
        while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
            millis += (text[pos] - '0') * scale;
            scale /= 10;
            ++pos;
        }
        if (pos == start) return std::nullopt;
    }
    if (expect(pos, 'Z')) ++pos;
    if (pos != text.size()) return std::nullopt;

    const year_month_day ymd{year{*y}, month{static_cast<unsigned>(*mo)},
                             day{static_cast<unsigned>(*d)}};
    if (!ymd.ok() || *h > 23 || *mi > 59 || *s > 60) return std::nullopt;
    return Timestamp{sys_days{ymd}} + hours{*h} + minutes{*mi} + seconds{*s} +
           milliseconds{millis};
}

Timestamp SystemClock::now() const {
    return floor<milliseconds>(system_clock::now());
}

void SystemClock::sleep_for(milliseconds d) { std::this_thread::sleep_for(d); }

Timestamp ManualClock::now() const {
    std::lock_guard lock(mu_);
    return now_;
}

void ManualClock::sleep_for(milliseconds d) {
    std::lock_guard lock(mu_);
    slept_ += d;
    if (!frozen_) now_ += d;
}

void ManualClock::advance(milliseconds d) {
    std::lock_guard lock(mu_);
    now_ += d;
}

milliseconds ManualClock::total_slept() const {
    std::lock_guard lock(mu_);
    return slept_;
}

}  // namespace ctxintel

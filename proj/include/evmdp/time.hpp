#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <string>

#include "evmdp/common.hpp"

namespace evmdp {

/// Civil timestamp with minute resolution. No time zones, no leap seconds.
struct CivilMinute {
    int year = 1970;
    int month = 1; // 1..12
    int day = 1;   // 1..31
    int hour = 0;  // 0..23
    int minute = 0; // 0..59
};

namespace detail {

// Days since 1970-01-01 for a civil date (Howard Hinnant's algorithm).
inline std::int64_t days_from_civil(int y, int m, int d)
{
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline void civil_from_days(std::int64_t z, int& y, int& m, int& d)
{
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t yr = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
    y = static_cast<int>(yr + (m <= 2));
}

inline bool is_leap(int y)
{
    return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
}

inline int days_in_month(int y, int m)
{
    static const int tab[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    if (m == 2 && is_leap(y)) return 29;
    return tab[m - 1];
}

} // namespace detail

/// Minutes since 1970-01-01T00:00.
using EpochMinute = std::int64_t;

inline EpochMinute to_epoch_minute(const CivilMinute& c)
{
    return detail::days_from_civil(c.year, c.month, c.day) * kMinutesPerDay
        + c.hour * 60 + c.minute;
}

inline CivilMinute from_epoch_minute(EpochMinute t)
{
    std::int64_t days = t / kMinutesPerDay;
    int mod = static_cast<int>(t % kMinutesPerDay);
    if (mod < 0) {
        mod += kMinutesPerDay;
        --days;
    }
    CivilMinute c;
    detail::civil_from_days(days, c.year, c.month, c.day);
    c.hour = mod / 60;
    c.minute = mod % 60;
    return c;
}

/// Day of week, 0 = Monday .. 6 = Sunday.
inline int weekday_of(EpochMinute t)
{
    std::int64_t days = t / kMinutesPerDay;
    if (t % kMinutesPerDay < 0) --days;
    // 1970-01-01 was a Thursday (index 3).
    std::int64_t w = (days + 3) % 7;
    if (w < 0) w += 7;
    return static_cast<int>(w);
}

inline bool is_weekend(EpochMinute t)
{
    return weekday_of(t) >= 5;
}

/// Parses "YYYY-MM-DDTHH:MM" (a trailing ":SS" with SS=00 is accepted).
/// A space instead of 'T' is accepted too.
inline CivilMinute parse_timestamp(const std::string& s)
{
    CivilMinute c;
    int sec = 0;
    char sep = 0;
    int n = std::sscanf(s.c_str(), "%d-%d-%d%c%d:%d:%d", &c.year, &c.month,
                        &c.day, &sep, &c.hour, &c.minute, &sec);
    if (n < 6 || (sep != 'T' && sep != ' '))
        throw ParseError("invalid timestamp '" + s + "'");
    if (n == 7 && sec != 0)
        throw ParseError("sub-minute timestamp '" + s + "'");
    if (c.month < 1 || c.month > 12 || c.day < 1
        || c.day > detail::days_in_month(c.year, c.month) || c.hour < 0
        || c.hour > 23 || c.minute < 0 || c.minute > 59)
        throw ParseError("out-of-range timestamp '" + s + "'");
    return c;
}

/// Parses "YYYY-MM-DD".
inline CivilMinute parse_date(const std::string& s)
{
    CivilMinute c;
    int n = std::sscanf(s.c_str(), "%d-%d-%d", &c.year, &c.month, &c.day);
    if (n != 3 || c.month < 1 || c.month > 12 || c.day < 1
        || c.day > detail::days_in_month(c.year, c.month))
        throw ParseError("invalid date '" + s + "'");
    return c;
}

inline std::string format_timestamp(EpochMinute t)
{
    CivilMinute c = from_epoch_minute(t);
    char buf[24];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d", c.year, c.month,
                  c.day, c.hour, c.minute);
    return buf;
}

} // namespace evmdp

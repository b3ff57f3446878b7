#pragma once

#include <cstddef>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "evmdp/common.hpp"
#include "evmdp/time.hpp"

namespace evmdp {

enum class DayFilter { weekday, weekend, all };

/// Minute-resolution log of observed vehicle states. State ids are
/// 1-based; in the minimal case 1 = not driving, 2 = driving.
struct DrivingTrace {
    EpochMinute start_minute = 0;
    std::vector<int> states;

    std::size_t size() const { return states.size(); }

    /// Minute-of-day (1..1440) of observation i.
    int minute_of_day(std::size_t i) const
    {
        return wrap_minute_of_day(start_minute + static_cast<long long>(i) + 1);
    }

    EpochMinute timestamp(std::size_t i) const
    {
        return start_minute + static_cast<EpochMinute>(i);
    }

    bool is_weekend_at(std::size_t i) const { return is_weekend(timestamp(i)); }
};

/// Hourly spot prices (currency/MWh). Minute-level lookups repeat each
/// hourly value 60 times.
struct PriceSeries {
    EpochMinute start_minute = 0;
    std::vector<double> hourly;

    /// Price covering absolute minute t (currency/MWh).
    double price_at(EpochMinute t) const
    {
        EpochMinute d = t - start_minute;
        if (d < 0 || d >= static_cast<EpochMinute>(hourly.size()) * 60)
            throw DataError("price series does not cover requested minute");
        return hourly[static_cast<std::size_t>(d / 60)];
    }

    EpochMinute end_minute() const
    {
        return start_minute + static_cast<EpochMinute>(hourly.size()) * 60;
    }

    /// Per-minute expansion of [t0, t0 + n).
    std::vector<double> minute_window(EpochMinute t0, std::size_t n) const
    {
        std::vector<double> out(n);
        for (std::size_t i = 0; i < n; ++i)
            out[i] = price_at(t0 + static_cast<EpochMinute>(i));
        return out;
    }
};

/// Per-minute-of-day transition count statistics. n(j,k,s) counts observed
/// j -> k transitions at diurnal minute s; z(j,s) is the number of trials.
class TransitionCounts {
public:
    TransitionCounts() = default;
    explicit TransitionCounts(int n_states)
        : n_states_(n_states),
          n_(static_cast<std::size_t>(n_states) * n_states * kMinutesPerDay, 0.0),
          z_(static_cast<std::size_t>(n_states) * kMinutesPerDay, 0.0)
    {
    }

    int n_states() const { return n_states_; }

    double n(int j, int k, int s) const { return n_[idx(j, k, s)]; }
    double z(int j, int s) const
    {
        return z_[static_cast<std::size_t>(j - 1) * kMinutesPerDay + (s - 1)];
    }

    void record(int j, int k, int s)
    {
        n_[idx(j, k, s)] += 1.0;
        z_[static_cast<std::size_t>(j - 1) * kMinutesPerDay + (s - 1)] += 1.0;
    }

    void add(const TransitionCounts& other)
    {
        if (other.n_states_ != n_states_)
            throw DataError("cannot add counts with different state spaces");
        for (std::size_t i = 0; i < n_.size(); ++i) n_[i] += other.n_[i];
        for (std::size_t i = 0; i < z_.size(); ++i) z_[i] += other.z_[i];
    }

    double total() const
    {
        double t = 0;
        for (double v : z_) t += v;
        return t;
    }

private:
    std::size_t idx(int j, int k, int s) const
    {
        return (static_cast<std::size_t>(j - 1) * n_states_ + (k - 1))
            * kMinutesPerDay
            + (s - 1);
    }

    int n_states_ = 0;
    std::vector<double> n_;
    std::vector<double> z_;
};

namespace detail {

inline std::vector<std::string> split_csv_row(const std::string& line)
{
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    fields.push_back(cur);
    return fields;
}

} // namespace detail

/// Parses a trip log CSV (header `timestamp,state`, ISO-8601 minute
/// timestamps, contiguous minutes). Errors name the offending line.
inline DrivingTrace parse_trace(std::istream& in, int max_state = 0)
{
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty trace");
    if (detail::split_csv_row(line) != std::vector<std::string>{"timestamp", "state"})
        throw ParseError("line 1: expected header 'timestamp,state'");

    DrivingTrace trace;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = detail::split_csv_row(line);
        if (fields.size() != 2)
            throw ParseError("line " + std::to_string(lineno) + ": malformed row");
        EpochMinute t;
        int state;
        try {
            t = to_epoch_minute(parse_timestamp(fields[0]));
            state = std::stoi(fields[1]);
        } catch (const std::exception&) {
            throw ParseError("line " + std::to_string(lineno) + ": malformed row '"
                             + line + "'");
        }
        if (state < 1 || (max_state > 0 && state > max_state))
            throw ParseError("line " + std::to_string(lineno) + ": unknown state id "
                             + std::to_string(state));
        if (trace.states.empty()) {
            trace.start_minute = t;
        } else {
            EpochMinute expected =
                trace.start_minute + static_cast<EpochMinute>(trace.states.size());
            if (t != expected)
                throw ParseError("line " + std::to_string(lineno)
                                 + ": non-contiguous timestamp (expected "
                                 + format_timestamp(expected) + ")");
        }
        trace.states.push_back(state);
    }
    if (trace.states.empty()) throw ParseError("empty trace");
    return trace;
}

inline DrivingTrace parse_trace(const std::string& text, int max_state = 0)
{
    std::istringstream in(text);
    return parse_trace(in, max_state);
}

inline void serialize_trace(const DrivingTrace& trace, std::ostream& out)
{
    out << "timestamp,state\n";
    for (std::size_t i = 0; i < trace.size(); ++i)
        out << format_timestamp(trace.timestamp(i)) << ',' << trace.states[i]
            << '\n';
}

/// Parses a price CSV (header `timestamp,price_eur_mwh`, hourly timestamps).
inline PriceSeries parse_prices(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty price series");
    if (detail::split_csv_row(line)
        != std::vector<std::string>{"timestamp", "price_eur_mwh"})
        throw ParseError("line 1: expected header 'timestamp,price_eur_mwh'");

    PriceSeries series;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = detail::split_csv_row(line);
        if (fields.size() != 2)
            throw ParseError("line " + std::to_string(lineno) + ": malformed row");
        EpochMinute t;
        double price;
        try {
            t = to_epoch_minute(parse_timestamp(fields[0]));
            price = std::stod(fields[1]);
        } catch (const std::exception&) {
            throw ParseError("line " + std::to_string(lineno) + ": malformed row '"
                             + line + "'");
        }
        if (series.hourly.empty()) {
            if (t % 60 != 0)
                throw ParseError("line " + std::to_string(lineno)
                                 + ": price timestamps must be on the hour");
            series.start_minute = t;
        } else if (t != series.start_minute
                       + static_cast<EpochMinute>(series.hourly.size()) * 60) {
            throw ParseError("line " + std::to_string(lineno)
                             + ": non-contiguous hourly timestamp");
        }
        series.hourly.push_back(price);
    }
    if (series.hourly.empty()) throw ParseError("empty price series");
    return series;
}

inline PriceSeries parse_prices(const std::string& text)
{
    std::istringstream in(text);
    return parse_prices(in);
}

inline void serialize_prices(const PriceSeries& series, std::ostream& out)
{
    out << "timestamp,price_eur_mwh\n";
    for (std::size_t i = 0; i < series.hourly.size(); ++i)
        out << format_timestamp(series.start_minute
                                + static_cast<EpochMinute>(i) * 60)
            << ',' << series.hourly[i] << '\n';
}

/// Splits a trace at midnight of `split_date`; the first part ends the
/// minute before 00:00 of that day. The split must be strictly inside
/// the trace span.
inline std::pair<DrivingTrace, DrivingTrace>
split_train_test(const DrivingTrace& trace, const CivilMinute& split_date)
{
    CivilMinute midnight = split_date;
    midnight.hour = 0;
    midnight.minute = 0;
    EpochMinute cut = to_epoch_minute(midnight);
    EpochMinute begin = trace.start_minute;
    EpochMinute end = begin + static_cast<EpochMinute>(trace.size());
    if (cut <= begin || cut >= end)
        throw DataError("split date not strictly inside trace span");

    std::size_t k = static_cast<std::size_t>(cut - begin);
    DrivingTrace train{begin, {trace.states.begin(), trace.states.begin() + k}};
    DrivingTrace test{cut, {trace.states.begin() + k, trace.states.end()}};
    return {std::move(train), std::move(test)};
}

/// Accumulates transition counts over all minute pairs whose *from*
/// minute passes the day filter. A transition over midnight belongs to
/// s = 1440 of the earlier day.
inline TransitionCounts count_transitions(const DrivingTrace& trace,
                                          DayFilter filter, int n_states = 0)
{
    if (n_states == 0)
        for (int s : trace.states) n_states = std::max(n_states, s);
    TransitionCounts counts(n_states);
    for (std::size_t i = 0; i + 1 < trace.size(); ++i) {
        bool weekend = trace.is_weekend_at(i);
        if (filter == DayFilter::weekday && weekend) continue;
        if (filter == DayFilter::weekend && !weekend) continue;
        counts.record(trace.states[i], trace.states[i + 1], trace.minute_of_day(i));
    }
    return counts;
}

} // namespace evmdp

#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "evmdp/common.hpp"
#include "evmdp/data_ingest.hpp"
#include "evmdp/mdp_solver.hpp"

namespace evmdp {

/// Price information available to a policy at decision time.
class PriceContext {
public:
    PriceContext(const PriceSeries& prices, EpochMinute sim_start)
        : prices_(prices), start_(sim_start)
    {
    }

    /// Spot price covering simulation minute t (currency/MWh).
    double price_now(int t) const
    {
        return prices_.price_at(start_ + t);
    }

    /// q-quantile of the 24 hourly prices covering the next 24 hours.
    /// Boundary ties are included (<= on the buy side, >= on the sell side).
    double quantile_next_24h(int t, double q) const
    {
        double window[24];
        for (int k = 0; k < 24; ++k)
            window[k] = prices_.price_at(start_ + t + 60 * k);
        std::sort(window, window + 24);
        int idx = static_cast<int>(std::ceil(q * 24.0)) - 1;
        return window[std::clamp(idx, 0, 23)];
    }

private:
    const PriceSeries& prices_;
    EpochMinute start_;
};

/// A charging policy maps (time, diurnal minute, continuous energy, desired
/// driving state, prices) to a desired charge rate within [u_min, u_max].
class Policy {
public:
    virtual ~Policy() = default;
    virtual double decide(int t, int minute_of_day, double e, int x,
                          const PriceContext& prices) const = 0;
};

/// Wraps a solved policy table; energy looked up at the nearest grid level.
class TablePolicy : public Policy {
public:
    TablePolicy(std::vector<double> table, int horizon, EnergyGrid grid,
                int n_states)
        : table_(std::move(table)), horizon_(horizon), grid_(grid),
          states_(n_states)
    {
    }

    static TablePolicy from(const Solution& sol, const EnergyGrid& grid)
    {
        return TablePolicy(sol.policy, sol.horizon, grid, sol.states);
    }
    static TablePolicy from(const RollingSolution& sol, const EnergyGrid& grid)
    {
        return TablePolicy(sol.policy, sol.total_span, grid, sol.states);
    }

    double decide(int t, int, double e, int x, const PriceContext&) const override
    {
        if (t < 0 || t >= horizon_)
            throw DataError("policy table does not cover minute "
                            + std::to_string(t));
        int m = static_cast<int>(
            std::lround((std::clamp(e, grid_.e_min, grid_.e_max) - grid_.e_min)
                        / grid_.spacing()));
        m = std::clamp(m, 0, grid_.levels - 1);
        return table_[(static_cast<std::size_t>(t) * grid_.levels + m) * states_
                      + (x - 1)];
    }

private:
    std::vector<double> table_;
    int horizon_;
    EnergyGrid grid_;
    int states_;
};

enum class RuleKind { naive, night, low_price, v2g_quantile };

struct RuleOfThumbSpec {
    RuleKind kind = RuleKind::naive;
    int night_start = 1320;      // 22:00, minute-of-day convention: s=1321
    int night_end = 360;         // 06:00 exclusive
    double soc_floor_frac = 0.5; // of e_max
    double buy_quantile = 0.20;
    double sell_quantile = 0.90;
    double v2g_lower_frac = 0.0; // of kappa; 0.25 for the bounded variant

    void validate() const
    {
        if (buy_quantile < 0 || buy_quantile > 1 || sell_quantile < 0
            || sell_quantile > 1)
            throw ConfigError("quantiles must be in [0,1]");
        if (v2g_lower_frac < 0 || v2g_lower_frac > 1)
            throw ConfigError("v2g lower bound fraction must be in [0,1]");
    }
};

namespace detail {

/// Half-open night window [22:00, 06:00) on the 1..1440 diurnal clock.
inline bool in_night_window(int s, int start, int end)
{
    int minute = s - 1; // 0-based minute of day
    if (start <= end) return minute >= start && minute < end;
    return minute >= start || minute < end;
}

class RulePolicy : public Policy {
public:
    RulePolicy(RuleOfThumbSpec spec, MdpConfig cfg)
        : spec_(spec), cfg_(std::move(cfg))
    {
    }

    double decide(int t, int s, double e, int, const PriceContext& prices)
        const override
    {
        const double full = cfg_.e_max - kEnergyEps;
        const double floor_level = spec_.soc_floor_frac * cfg_.e_max;
        switch (spec_.kind) {
        case RuleKind::naive:
            return e < full ? cfg_.u_max : 0.0;
        case RuleKind::night:
            if (e >= full) return 0.0;
            if (in_night_window(s, spec_.night_start, spec_.night_end)
                || e < floor_level)
                return cfg_.u_max;
            return 0.0;
        case RuleKind::low_price:
            if (e >= full) return 0.0;
            if (e < floor_level
                || prices.price_now(t)
                    <= prices.quantile_next_24h(t, spec_.buy_quantile))
                return cfg_.u_max;
            return 0.0;
        case RuleKind::v2g_quantile: {
            double price = prices.price_now(t);
            if (price <= prices.quantile_next_24h(t, spec_.buy_quantile))
                return e < full ? cfg_.u_max : 0.0;
            if (price >= prices.quantile_next_24h(t, spec_.sell_quantile)) {
                double bound = cfg_.e_min + spec_.v2g_lower_frac * cfg_.kappa;
                if (e <= bound + kEnergyEps) return 0.0;
                // Partial-rate discharge down to, but not below, the bound.
                return std::max(cfg_.u_min,
                                (bound - e) * cfg_.eta_d / MdpConfig::omega);
            }
            return 0.0;
        }
        }
        return 0.0;
    }

private:
    RuleOfThumbSpec spec_;
    MdpConfig cfg_;
};

} // namespace detail

inline std::unique_ptr<Policy> make_rule_of_thumb(const RuleOfThumbSpec& spec,
                                                  const MdpConfig& cfg)
{
    spec.validate();
    return std::make_unique<detail::RulePolicy>(spec, cfg);
}

/// Outcome of replaying one policy against one driving trace. Costs are
/// cash flows only; the phi penalty shapes policies but is reported through
/// the stranded-event count instead.
struct SimulationReport {
    double total_cost = 0.0;      // currency, positive = expense
    double daily_cost_mean = 0.0; // currency/day
    int stranded_events = 0;
    int stranded_minutes = 0;
    double energy_purchased = 0.0; // kWh at the plug
    double energy_sold = 0.0;      // kWh at the plug
    double final_energy = 0.0;     // kWh
    std::vector<double> soc_trace;    // length L+1, energy at minute starts
    std::vector<double> action_trace; // length L, actual charge u^a (kW)
};

/// Counts maximal contiguous intervals where driving is desired but the
/// battery sits at e_min (rising edges of the stranded predicate).
inline int stranded_event_count(const std::vector<double>& soc_trace,
                                const std::vector<int>& desired_states,
                                double e_min)
{
    int events = 0;
    bool prev = false;
    for (std::size_t t = 0; t < desired_states.size(); ++t) {
        bool now = desired_states[t] > 1 && soc_trace[t] <= e_min + kEnergyEps;
        if (now && !prev) ++events;
        prev = now;
    }
    return events;
}

/// Deterministic forward replay of a policy against an exogenous driving
/// trace with historical prices. Energy is carried continuously.
inline SimulationReport simulate_policy(const Policy& policy,
                                        const DrivingTrace& driving,
                                        const PriceSeries& prices,
                                        const MdpConfig& cfg, double initial_e)
{
    cfg.validate();
    const std::size_t L = driving.size();
    if (L == 0) throw DataError("empty driving trace");
    if (driving.start_minute < prices.start_minute
        || driving.timestamp(L - 1) >= prices.end_minute())
        throw DataError("price series does not cover the driving trace span");

    PriceContext ctx(prices, driving.start_minute);
    SimulationReport report;
    report.soc_trace.reserve(L + 1);
    report.action_trace.reserve(L);

    double e = std::clamp(initial_e, cfg.e_min, cfg.e_max);
    bool prev_stranded = false;
    for (std::size_t t = 0; t < L; ++t) {
        const int x = driving.states[t];
        const int s = driving.minute_of_day(t);
        const double lambda = ctx.price_now(static_cast<int>(t));

        double u = policy.decide(static_cast<int>(t), s, e, x, ctx);
        u = truncate_action(u, e, x, cfg);
        double ua = actual_charge(e, x, u, cfg);
        int xa = actual_state(e, x, cfg);

        report.soc_trace.push_back(e);
        report.action_trace.push_back(ua);
        report.total_cost += (lambda / 1000.0) * MdpConfig::omega * ua;
        if (ua > 0) report.energy_purchased += ua * MdpConfig::omega;
        if (ua < 0) report.energy_sold += -ua * MdpConfig::omega;

        bool stranded = x > 1 && e <= cfg.e_min + kEnergyEps;
        if (stranded) ++report.stranded_minutes;
        if (stranded && !prev_stranded) ++report.stranded_events;
        prev_stranded = stranded;

        e = clamp_energy(step_energy(e, xa, ua, cfg), cfg);
    }
    report.soc_trace.push_back(e);
    report.final_energy = e;
    report.daily_cost_mean =
        report.total_cost / (static_cast<double>(L) / kMinutesPerDay);
    return report;
}

struct ComparisonRow {
    std::string policy;
    double phi = 0.0;
    SimulationReport report;
};

struct NamedPolicy {
    std::string name;
    double phi = 0.0;
    const Policy* policy = nullptr;
};

/// One replay per policy over a shared trace/price span (Table-style
/// comparison matrix).
inline std::vector<ComparisonRow>
evaluate_matrix(const std::vector<NamedPolicy>& policies,
                const DrivingTrace& driving, const PriceSeries& prices,
                const MdpConfig& cfg, double initial_e)
{
    std::vector<ComparisonRow> rows;
    rows.reserve(policies.size());
    for (const auto& np : policies)
        rows.push_back({np.name, np.phi,
                        simulate_policy(*np.policy, driving, prices, cfg,
                                        initial_e)});
    return rows;
}

inline void write_comparison_csv(const std::vector<ComparisonRow>& rows,
                                 std::ostream& out)
{
    out << "policy,phi,mean_daily_cost,stranded_events,energy_bought_kwh,"
           "energy_sold_kwh\n";
    for (const auto& row : rows)
        out << row.policy << ',' << row.phi << ',' << row.report.daily_cost_mean
            << ',' << row.report.stranded_events << ','
            << row.report.energy_purchased << ',' << row.report.energy_sold
            << '\n';
}

} // namespace evmdp

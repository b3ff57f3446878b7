#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "evmdp/common.hpp"
#include "evmdp/driving_model.hpp"

namespace evmdp {

/// Battery at exactly e_min is treated as empty; continuous energies within
/// this tolerance of e_min count as stranded.
constexpr double kEnergyEps = 1e-9;

/// Physical and economic parameters of the charging problem. Prices enter
/// separately, in currency/MWh; internally everything is kWh, kW and
/// minutes with omega = 1/60 h/min.
struct MdpConfig {
    double u_max = 4.0;  // kW
    double u_min = 0.0;  // kW, negative enables V2G
    double e_max = 24.0; // kWh
    double e_min = 0.0;  // kWh
    double phi = 10.0;   // currency/h, unserved-driving penalty
    double eta_c = 0.9;
    double eta_d = 0.9;
    std::vector<double> v{40.0};  // km/h per driving state (broadcast if 1)
    std::vector<double> mu{0.20}; // kWh/km per driving state (broadcast if 1)
    double kappa = 24.0; // kWh
    double beta = 1.0;
    int horizon_minutes = 2880;

    static constexpr double omega = 1.0 / 60.0; // h/min

    void validate() const
    {
        if (!(e_min <= e_max && e_max <= kappa))
            throw ConfigError("require e_min <= e_max <= kappa");
        if (!(u_min <= 0.0 && 0.0 <= u_max))
            throw ConfigError("require u_min <= 0 <= u_max");
        if (!(eta_c > 0.0 && eta_c <= 1.0 && eta_d > 0.0 && eta_d <= 1.0))
            throw ConfigError("efficiencies must be in (0,1]");
        if (!(beta > 0.0 && beta <= 1.0))
            throw ConfigError("discount factor must be in (0,1]");
        if (horizon_minutes < 1) throw ConfigError("horizon must be >= 1 minute");
        if (v.empty() || mu.empty() || v.size() != mu.size())
            throw ConfigError("v and mu must be non-empty and equally sized");
    }

    /// Energy drawn per minute while in driving state x (kWh); 0 when parked.
    double consumption_kwh(int x) const
    {
        if (x <= 1) return 0.0;
        std::size_t i = std::min<std::size_t>(x - 2, v.size() - 1);
        return v[i] * mu[i] * omega;
    }
};

/// Uniform discretization of [e_min, e_max] into M levels.
struct EnergyGrid {
    double e_min = 0.0;
    double e_max = 24.0;
    int levels = 360;

    EnergyGrid() = default;
    EnergyGrid(double lo, double hi, int m) : e_min(lo), e_max(hi), levels(m)
    {
        if (m < 2) throw ConfigError("energy grid needs at least 2 levels");
        if (!(hi > lo)) throw ConfigError("energy grid span must be positive");
    }

    double spacing() const { return (e_max - e_min) / (levels - 1); }
    double level(int i) const
    {
        return i == levels - 1 ? e_max : e_min + spacing() * i;
    }

    struct Bracket {
        int lo;
        double w_hi; // weight on level lo+1
    };

    /// Bracketing levels and interpolation weight for a continuous energy
    /// (clamped to the grid span).
    Bracket bracket(double e) const
    {
        double x = std::clamp(e, e_min, e_max);
        double pos = (x - e_min) / spacing();
        int lo = std::min(static_cast<int>(pos), levels - 2);
        double w = pos - lo;
        return {lo, std::clamp(w, 0.0, 1.0)};
    }
};

/// Actual driving state: the vehicle is forced to park when the battery is
/// empty and a driving state is desired.
inline int actual_state(double e, int x, const MdpConfig& cfg)
{
    if (x > 1 && e <= cfg.e_min + kEnergyEps) return 1;
    return x;
}

/// Actual charge: charging is impossible while actually driving.
inline double actual_charge(double e, int x, double u, const MdpConfig& cfg)
{
    if (x > 1 && e > cfg.e_min + kEnergyEps) return 0.0;
    return u;
}

/// Battery dynamics for one minute (pre-projection, not clamped).
inline double step_energy(double e, int x_actual, double u_actual,
                          const MdpConfig& cfg)
{
    double charge_eff = u_actual >= 0.0 ? cfg.eta_c : 1.0 / cfg.eta_d;
    return e + charge_eff * MdpConfig::omega * u_actual
        - cfg.consumption_kwh(x_actual);
}

inline double clamp_energy(double e, const MdpConfig& cfg)
{
    return std::clamp(e, cfg.e_min, cfg.e_max);
}

/// Stage revenue: charging cash flow plus the unserved-driving penalty.
/// lambda is in currency/MWh.
inline double stage_revenue(double e, int x, double u_actual, double lambda,
                            const MdpConfig& cfg)
{
    double r = -(lambda / 1000.0) * MdpConfig::omega * u_actual;
    if (x > 1 && e <= cfg.e_min + kEnergyEps) r -= MdpConfig::omega * cfg.phi;
    return r;
}

/// Terminal revenue: leftover energy valued at the mean price over the
/// horizon, net of discharge losses.
inline double terminal_revenue(double e, double mean_lambda, const MdpConfig& cfg)
{
    return cfg.eta_d * e * mean_lambda / 1000.0;
}

/// Truncates a desired action so the post-step energy stays within the
/// battery bounds: a full-rate action near a bound becomes a partial-rate
/// action that lands exactly on the bound.
inline double truncate_action(double u, double e, int x, const MdpConfig& cfg)
{
    u = std::clamp(u, cfg.u_min, cfg.u_max);
    if (x > 1 && e > cfg.e_min + kEnergyEps) return u; // charge won't apply
    if (u > 0.0)
        u = std::min(u, (cfg.e_max - e) / (cfg.eta_c * MdpConfig::omega));
    else if (u < 0.0)
        u = std::max(u, (cfg.e_min - e) * cfg.eta_d / MdpConfig::omega);
    return u;
}

/// Discrete action sets used throughout: full-rate charging with idle, or
/// the V2G variant that adds full-rate discharge.
inline std::vector<double> charge_only_actions(const MdpConfig& cfg)
{
    return {0.0, cfg.u_max};
}
inline std::vector<double> v2g_actions(const MdpConfig& cfg)
{
    return {cfg.u_min, 0.0, cfg.u_max};
}

/// Value and policy tables from backward induction. value has horizon+1
/// time slices, policy has horizon; both are (levels x states) per slice
/// with states indexed 1..N.
struct Solution {
    int horizon = 0;
    int levels = 0;
    int states = 0;
    std::vector<double> value;
    std::vector<double> policy;

    double v(int t, int m, int x) const
    {
        return value[(static_cast<std::size_t>(t) * levels + m) * states + (x - 1)];
    }
    double u(int t, int m, int x) const
    {
        return policy[(static_cast<std::size_t>(t) * levels + m) * states + (x - 1)];
    }
};

/// Backward induction over the (energy x driving-state) grid. Ties are
/// broken toward the smaller |u|, then toward not discharging.
/// minute_prices[t] (currency/MWh) covers stage t; start_minute_of_day is
/// the diurnal minute s of stage 0.
inline Solution solve(const DrivingModelParams& params,
                      const ModelStructure& structure,
                      const std::vector<double>& minute_prices,
                      const MdpConfig& cfg, const EnergyGrid& grid,
                      std::vector<double> action_set, int start_minute_of_day)
{
    cfg.validate();
    const int T = cfg.horizon_minutes;
    const int M = grid.levels;
    const int N = structure.n_states;
    if (static_cast<int>(minute_prices.size()) < T)
        throw DataError("price series shorter than horizon");
    if (std::abs(grid.e_min - cfg.e_min) > 1e-12
        || std::abs(grid.e_max - cfg.e_max) > 1e-12)
        throw ConfigError("energy grid must span [e_min, e_max]");

    // u = 0 is always feasible; keep the set sorted by preference.
    if (std::find(action_set.begin(), action_set.end(), 0.0) == action_set.end())
        action_set.push_back(0.0);
    std::sort(action_set.begin(), action_set.end(), [](double a, double b) {
        if (std::abs(a) != std::abs(b)) return std::abs(a) < std::abs(b);
        return a > b;
    });

    double mean_lambda = 0.0;
    for (int t = 0; t < T; ++t) mean_lambda += minute_prices[t];
    mean_lambda /= T;

    Solution sol;
    sol.horizon = T;
    sol.levels = M;
    sol.states = N;
    sol.value.assign(static_cast<std::size_t>(T + 1) * M * N, 0.0);
    sol.policy.assign(static_cast<std::size_t>(T) * M * N, 0.0);

    for (int m = 0; m < M; ++m) {
        double vt = terminal_revenue(grid.level(m), mean_lambda, cfg);
        for (int x = 0; x < N; ++x)
            sol.value[(static_cast<std::size_t>(T) * M + m) * N + x] = vt;
    }

    // Transition rows cached per diurnal minute, flattened.
    std::vector<std::vector<double>> p_cache(kMinutesPerDay);

    for (int t = T - 1; t >= 0; --t) {
        int s = wrap_minute_of_day(start_minute_of_day + t);
        std::vector<double>& p = p_cache[s - 1];
        if (p.empty()) {
            auto matrix = transition_matrix_at(params, s);
            p.resize(static_cast<std::size_t>(N) * N);
            for (int j = 0; j < N; ++j)
                for (int k = 0; k < N; ++k) p[j * N + k] = matrix[j][k];
        }
        const double lambda = minute_prices[t];
        const double* vnext = sol.value.data() + static_cast<std::size_t>(t + 1) * M * N;
        double* vcur = sol.value.data() + static_cast<std::size_t>(t) * M * N;
        double* ucur = sol.policy.data() + static_cast<std::size_t>(t) * M * N;

        for (int x = 1; x <= N; ++x) {
            const double* prow = p.data() + (x - 1) * N;
            for (int m = 0; m < M; ++m) {
                const double e = grid.level(m);
                const int xa = actual_state(e, x, cfg);
                const bool charge_blocked = x > 1 && e > cfg.e_min + kEnergyEps;

                double best_value = 0.0;
                double best_action = 0.0;
                bool have_best = false;
                for (double u_raw : action_set) {
                    double u = truncate_action(u_raw, e, x, cfg);
                    double ua = charge_blocked ? 0.0 : u;
                    double enext = clamp_energy(step_energy(e, xa, ua, cfg), cfg);
                    auto br = grid.bracket(enext);
                    double cont = 0.0;
                    const double* lo = vnext + static_cast<std::size_t>(br.lo) * N;
                    const double* hi = lo + N;
                    for (int k = 0; k < N; ++k)
                        cont += prow[k]
                            * ((1.0 - br.w_hi) * lo[k] + br.w_hi * hi[k]);
                    double total = stage_revenue(e, x, ua, lambda, cfg)
                        + cfg.beta * cont;
                    if (!have_best || total > best_value) {
                        best_value = total;
                        best_action = u_raw;
                        have_best = true;
                    }
                    if (charge_blocked) break; // all actions identical
                }
                vcur[static_cast<std::size_t>(m) * N + (x - 1)] = best_value;
                ucur[static_cast<std::size_t>(m) * N + (x - 1)] = best_action;
            }
        }
    }
    return sol;
}

/// Executed policy from a rolling-horizon process: the problem is re-solved
/// every re_solve_every minutes with the price window advanced, and the
/// first re_solve_every minutes of each solution are kept.
struct RollingSolution {
    int total_span = 0;
    int levels = 0;
    int states = 0;
    int re_solve_every = 0;
    std::vector<double> policy; // total_span x levels x states

    double u(int t, int m, int x) const
    {
        return policy[(static_cast<std::size_t>(t) * levels + m) * states + (x - 1)];
    }
};

inline RollingSolution rolling_solve(const DrivingModelParams& params,
                                     const ModelStructure& structure,
                                     const std::vector<double>& minute_prices,
                                     const MdpConfig& cfg, const EnergyGrid& grid,
                                     const std::vector<double>& action_set,
                                     int start_minute_of_day, int re_solve_every,
                                     int total_span)
{
    if (re_solve_every < 1 || total_span < 1)
        throw ConfigError("rolling intervals must be positive");
    const int T = cfg.horizon_minutes;
    const int last_offset = (total_span - 1) / re_solve_every * re_solve_every;
    if (static_cast<int>(minute_prices.size()) < last_offset + T)
        throw DataError("price series too short for rolling horizon");

    RollingSolution out;
    out.total_span = total_span;
    out.levels = grid.levels;
    out.states = structure.n_states;
    out.re_solve_every = re_solve_every;
    out.policy.assign(
        static_cast<std::size_t>(total_span) * grid.levels * structure.n_states,
        0.0);

    const std::size_t slice =
        static_cast<std::size_t>(grid.levels) * structure.n_states;
    for (int offset = 0; offset < total_span; offset += re_solve_every) {
        std::vector<double> window(minute_prices.begin() + offset,
                                   minute_prices.begin() + offset + T);
        Solution sol = solve(params, structure, window, cfg, grid, action_set,
                             wrap_minute_of_day(start_minute_of_day + offset));
        int keep = std::min(re_solve_every, total_span - offset);
        std::copy(sol.policy.begin(),
                  sol.policy.begin() + static_cast<std::size_t>(keep) * slice,
                  out.policy.begin() + static_cast<std::size_t>(offset) * slice);
    }
    return out;
}

} // namespace evmdp

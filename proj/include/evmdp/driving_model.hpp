#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "evmdp/common.hpp"
#include "evmdp/data_ingest.hpp"
#include "evmdp/spline_glm.hpp"

namespace evmdp {

/// State space layout: state 1 is parked, states 2..N are (hidden) driving
/// states. All driving states emit the observed symbol 2.
struct ModelStructure {
    int n_states = 2;

    int parked_state() const { return 1; }
    bool is_driving(int state) const { return state > 1; }
    int observed_symbol(int state) const { return state == 1 ? 1 : 2; }
    int n_driving() const { return n_states - 1; }
};

/// Parameters of the inhomogeneous hidden Markov driving model. The parked
/// row of P(s) is time varying through exit_prob; the driving rows are time
/// invariant.
struct DrivingModelParams {
    DiurnalProbability exit_prob;
    std::vector<double> entry_dist;               // over driving states 2..N
    std::vector<std::vector<double>> hidden_trans; // rows 2..N, each N wide
    std::vector<double> initial_dist;             // delta, over 1..N
};

/// Full N x N stochastic matrix at diurnal minute s (wrapped lookup).
inline std::vector<std::vector<double>>
transition_matrix_at(const DrivingModelParams& params, long long s)
{
    const int n = 1 + static_cast<int>(params.entry_dist.size());
    std::vector<std::vector<double>> matrix(n, std::vector<double>(n, 0.0));
    double exit = params.exit_prob.prob(s);
    matrix[0][0] = 1.0 - exit;
    for (int k = 1; k < n; ++k) matrix[0][k] = exit * params.entry_dist[k - 1];
    for (int j = 1; j < n; ++j)
        for (int k = 0; k < n; ++k) matrix[j][k] = params.hidden_trans[j - 1][k];
    return matrix;
}

/// Exact HMM log-likelihood via the scaled forward recursion. Returns
/// -infinity for traces with zero probability.
inline double hmm_log_likelihood(const DrivingModelParams& params,
                                 const ModelStructure& structure,
                                 const DrivingTrace& trace)
{
    const int n = structure.n_states;
    const double neg_inf = -std::numeric_limits<double>::infinity();
    if (trace.size() == 0) throw DataError("empty trace");

    // Per-minute transition matrices, computed once.
    std::vector<std::vector<std::vector<double>>> p_cache(kMinutesPerDay);

    auto symbol = [&](std::size_t i) {
        int st = trace.states[i];
        return st == 1 ? 1 : 2;
    };

    std::vector<double> alpha(n, 0.0), next(n, 0.0);
    for (int k = 0; k < n; ++k)
        if (structure.observed_symbol(k + 1) == symbol(0))
            alpha[k] = params.initial_dist[k];

    double log_lik = 0.0;
    double scale = std::accumulate(alpha.begin(), alpha.end(), 0.0);
    if (scale <= 0.0) return neg_inf;
    for (double& a : alpha) a /= scale;
    log_lik += std::log(scale);

    for (std::size_t t = 1; t < trace.size(); ++t) {
        int s = trace.minute_of_day(t - 1);
        auto& p = p_cache[s - 1];
        if (p.empty()) p = transition_matrix_at(params, s);
        int sym = symbol(t);
        std::fill(next.begin(), next.end(), 0.0);
        for (int j = 0; j < n; ++j) {
            if (alpha[j] == 0.0) continue;
            for (int k = 0; k < n; ++k) next[k] += alpha[j] * p[j][k];
        }
        for (int k = 0; k < n; ++k)
            if (structure.observed_symbol(k + 1) != sym) next[k] = 0.0;
        scale = std::accumulate(next.begin(), next.end(), 0.0);
        if (scale <= 0.0) return neg_inf;
        for (int k = 0; k < n; ++k) alpha[k] = next[k] / scale;
        log_lik += std::log(scale);
    }
    return log_lik;
}

struct SimulatedTrace {
    DrivingTrace observed;
    std::vector<int> hidden;
};

namespace detail {

inline int sample_categorical(const std::vector<double>& probs,
                              std::mt19937_64& rng)
{
    double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    double acc = 0.0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
        acc += probs[k];
        if (u < acc) return static_cast<int>(k);
    }
    return static_cast<int>(probs.size()) - 1;
}

} // namespace detail

/// Samples a state path of `horizon` minutes starting from `start_state` at
/// absolute minute `start_minute`. Deterministic given the seed.
inline SimulatedTrace simulate(const DrivingModelParams& params,
                               const ModelStructure& structure, int start_state,
                               EpochMinute start_minute, std::size_t horizon,
                               std::uint64_t rng_seed)
{
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    std::mt19937_64 rng(rng_seed);

    std::vector<std::vector<std::vector<double>>> p_cache(kMinutesPerDay);
    SimulatedTrace out;
    out.observed.start_minute = start_minute;
    out.hidden.reserve(horizon);
    out.observed.states.reserve(horizon);

    int state = start_state;
    for (std::size_t t = 0; t < horizon; ++t) {
        out.hidden.push_back(state);
        out.observed.states.push_back(structure.observed_symbol(state));
        if (t + 1 == horizon) break;
        int s = wrap_minute_of_day(start_minute + static_cast<long long>(t) + 1);
        auto& p = p_cache[s - 1];
        if (p.empty()) p = transition_matrix_at(params, s);
        state = detail::sample_categorical(p[state - 1], rng) + 1;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Trip-factorized likelihood. With deterministic emissions and the parked
// row as the only time-varying one, the HMM likelihood splits into a term
// that depends only on the fixed exit curve (parked stays and trip starts)
// and per-trip terms that depend only on trip durations through the
// discrete phase-type law f(d) = entry' A^(d-1) r, where A is the driving
// block of hidden_trans and r its exit column.
// ---------------------------------------------------------------------------

struct TripSummary {
    std::vector<double> duration_counts; // index d-1, completed trips
    std::optional<int> truncated_duration; // trace ends mid-trip
    double fixed_loglik = 0.0;           // parked-stay and trip-start terms
    bool starts_driving = false;
    double n_trips = 0.0;
    int max_duration = 0;
};

inline TripSummary summarize_trips(const DrivingTrace& trace,
                                   const DiurnalProbability& exit_prob)
{
    TripSummary sum;
    const std::size_t T = trace.size();
    auto driving = [&](std::size_t i) { return trace.states[i] != 1; };
    if (T == 0) throw DataError("empty trace");
    if (driving(0)) {
        sum.starts_driving = true;
        return sum;
    }
    std::size_t i = 0;
    while (i + 1 < T) {
        if (!driving(i)) {
            double p = exit_prob.prob(trace.minute_of_day(i));
            sum.fixed_loglik += driving(i + 1) ? std::log(p) : std::log1p(-p);
            ++i;
        } else {
            std::size_t a = i;
            while (i < T && driving(i)) ++i;
            int d = static_cast<int>(i - a);
            sum.max_duration = std::max(sum.max_duration, d);
            if (i < T) {
                if (static_cast<int>(sum.duration_counts.size()) < d)
                    sum.duration_counts.resize(d, 0.0);
                sum.duration_counts[d - 1] += 1.0;
                sum.n_trips += 1.0;
            } else {
                sum.truncated_duration = d;
            }
        }
    }
    if (i + 1 == T && driving(i) && !driving(i - 1)) {
        // Single-minute truncated trip at the very end.
        sum.truncated_duration = 1;
        sum.max_duration = std::max(sum.max_duration, 1);
    }
    return sum;
}

/// Log-likelihood of the trip summary under driving-block dynamics.
/// entry is over driving states; a[j][k] the driving-to-driving block;
/// exit[j] the per-state probability of returning to parked.
inline double trip_loglik(const TripSummary& sum,
                          const std::vector<double>& entry,
                          const std::vector<std::vector<double>>& a,
                          const std::vector<double>& exit)
{
    const double neg_inf = -std::numeric_limits<double>::infinity();
    if (sum.starts_driving) return neg_inf;
    const int m = static_cast<int>(entry.size());
    double ll = sum.fixed_loglik;

    std::vector<double> v = entry, next(m);
    for (int d = 1; d <= sum.max_duration; ++d) {
        double f = 0.0;
        for (int j = 0; j < m; ++j) f += v[j] * exit[j];
        double cnt = d <= static_cast<int>(sum.duration_counts.size())
            ? sum.duration_counts[d - 1]
            : 0.0;
        if (cnt > 0.0) {
            if (f <= 0.0) return neg_inf;
            ll += cnt * std::log(f);
        }
        if (sum.truncated_duration && *sum.truncated_duration == d) {
            double g = std::accumulate(v.begin(), v.end(), 0.0);
            if (g <= 0.0) return neg_inf;
            ll += std::log(g);
        }
        if (d == sum.max_duration) break;
        for (int k = 0; k < m; ++k) {
            double acc = 0.0;
            for (int j = 0; j < m; ++j) acc += v[j] * a[j][k];
            next[k] = acc;
        }
        v.swap(next);
    }
    return ll;
}

// ---------------------------------------------------------------------------
// Nelder-Mead simplex minimizer (derivative free, deterministic).
// ---------------------------------------------------------------------------

struct NelderMeadResult {
    std::vector<double> x;
    double value = std::numeric_limits<double>::infinity();
    bool converged = false;
    int evaluations = 0;
};

inline NelderMeadResult
nelder_mead(const std::function<double(const std::vector<double>&)>& f,
            std::vector<double> x0, double step = 0.5, double tol = 1e-9,
            int max_evals = 20000)
{
    const std::size_t n = x0.size();
    NelderMeadResult res;
    if (n == 0) {
        res.x = x0;
        res.value = f(x0);
        res.converged = true;
        res.evaluations = 1;
        return res;
    }

    std::vector<std::vector<double>> simplex(n + 1, x0);
    for (std::size_t i = 0; i < n; ++i) simplex[i + 1][i] += step;
    std::vector<double> values(n + 1);
    for (std::size_t i = 0; i <= n; ++i) values[i] = f(simplex[i]);
    res.evaluations = static_cast<int>(n + 1);

    auto order = [&]() {
        std::vector<std::size_t> idx(n + 1);
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) {
                             return values[a] < values[b];
                         });
        std::vector<std::vector<double>> s2(n + 1);
        std::vector<double> v2(n + 1);
        for (std::size_t i = 0; i <= n; ++i) {
            s2[i] = simplex[idx[i]];
            v2[i] = values[idx[i]];
        }
        simplex.swap(s2);
        values.swap(v2);
    };

    while (res.evaluations < max_evals) {
        order();
        if (std::abs(values[n] - values[0]) <= tol * (std::abs(values[0]) + 1.0)) {
            res.converged = true;
            break;
        }
        std::vector<double> centroid(n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) centroid[j] += simplex[i][j] / n;

        auto blend = [&](double coef) {
            std::vector<double> p(n);
            for (std::size_t j = 0; j < n; ++j)
                p[j] = centroid[j] + coef * (simplex[n][j] - centroid[j]);
            return p;
        };

        auto reflected = blend(-1.0);
        double fr = f(reflected);
        ++res.evaluations;
        if (fr < values[0]) {
            auto expanded = blend(-2.0);
            double fe = f(expanded);
            ++res.evaluations;
            if (fe < fr) {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if (fr < values[n - 1]) {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            auto contracted = blend(fr < values[n] ? -0.5 : 0.5);
            double fc = f(contracted);
            ++res.evaluations;
            if (fc < std::min(fr, values[n])) {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                for (std::size_t i = 1; i <= n; ++i) {
                    for (std::size_t j = 0; j < n; ++j)
                        simplex[i][j] = 0.5 * (simplex[i][j] + simplex[0][j]);
                    values[i] = f(simplex[i]);
                }
                res.evaluations += static_cast<int>(n);
            }
        }
    }
    order();
    res.x = simplex[0];
    res.value = values[0];
    return res;
}

// ---------------------------------------------------------------------------
// Fitting the time-invariant parameters.
// ---------------------------------------------------------------------------

struct FitOptions {
    int n_starts = 20;
    std::uint64_t seed = 20230201;
    int max_evals = 20000;
    bool canonicalize = true;
};

struct FitResult {
    DrivingModelParams params;
    double log_likelihood = -std::numeric_limits<double>::infinity();
    bool converged = false;
};

namespace detail {

/// Free parameters: entry logits (N-2, last driving state as reference) and
/// per driving row N-1 logits (parked column as reference).
inline int n_free_params(int n_states)
{
    int m = n_states - 1;
    return (m - 1) + m * (n_states - 1);
}

struct UnpackedTheta {
    std::vector<double> entry;
    std::vector<std::vector<double>> a;    // driving block, m x m
    std::vector<double> exit;              // driving -> parked
    std::vector<std::vector<double>> rows; // full hidden rows, m x N
};

inline UnpackedTheta unpack_theta(const std::vector<double>& theta, int n_states)
{
    const int m = n_states - 1;
    UnpackedTheta u;
    std::size_t pos = 0;

    u.entry.resize(m);
    {
        double mx = 0.0;
        for (int k = 0; k + 1 < m; ++k) mx = std::max(mx, theta[pos + k]);
        double sum = std::exp(0.0 - mx);
        for (int k = 0; k + 1 < m; ++k) sum += std::exp(theta[pos + k] - mx);
        for (int k = 0; k < m; ++k) {
            double logit = k + 1 < m ? theta[pos + k] : 0.0;
            u.entry[k] = std::exp(logit - mx) / sum;
        }
        pos += m - 1;
    }

    u.a.assign(m, std::vector<double>(m, 0.0));
    u.exit.resize(m);
    u.rows.assign(m, std::vector<double>(n_states, 0.0));
    for (int j = 0; j < m; ++j) {
        double mx = 0.0; // reference logit (parked column) is 0
        for (int k = 0; k < n_states - 1; ++k)
            mx = std::max(mx, theta[pos + k]);
        double sum = std::exp(0.0 - mx);
        for (int k = 0; k < n_states - 1; ++k)
            sum += std::exp(theta[pos + k] - mx);
        u.rows[j][0] = std::exp(0.0 - mx) / sum;
        for (int k = 0; k < n_states - 1; ++k)
            u.rows[j][k + 1] = std::exp(theta[pos + k] - mx) / sum;
        u.exit[j] = u.rows[j][0];
        for (int k = 0; k < m; ++k) u.a[j][k] = u.rows[j][k + 1];
        pos += n_states - 1;
    }
    return u;
}

/// Rewrites a two-driving-state block in its canonical chain form: entry
/// (p, 1-p), state d1 passes to d2 (never exits directly), d2 exits. The
/// trip-length law f(d) is preserved; only the representation changes,
/// which pins down the otherwise unidentifiable similarity freedom.
inline bool canonicalize_two_phase(std::vector<double>& entry,
                                   std::vector<std::vector<double>>& rows)
{
    double a11 = rows[0][1], a12 = rows[0][2];
    double a21 = rows[1][1], a22 = rows[1][2];
    double r1 = rows[0][0], r2 = rows[1][0];

    double tr = a11 + a22;
    double disc = (a11 - a22) * (a11 - a22) + 4.0 * a12 * a21;
    if (disc < 0.0) return false;
    double sq = std::sqrt(disc);
    double l1 = 0.5 * (tr + sq);
    double l2 = 0.5 * (tr - sq);
    if (l1 - l2 < 1e-8 || l1 >= 1.0 || l2 < 0.0) return false;

    // Spectral coefficients of f(d) = c1 l1^(d-1) + c2 l2^(d-1).
    double f1 = entry[0] * r1 + entry[1] * r2;
    double f2 = (entry[0] * a11 + entry[1] * a21) * r1
        + (entry[0] * a12 + entry[1] * a22) * r2;
    double c1 = (f2 - l2 * f1) / (l1 - l2);
    double p = c1 * (l1 - l2) / ((1.0 - l1) * (1.0 - l2));
    if (p < -1e-6 || p > 1.0 + 1e-6) return false;
    p = std::clamp(p, 0.0, 1.0);

    entry = {p, 1.0 - p};
    rows = {{0.0, l1, 1.0 - l1}, {1.0 - l2, 0.0, l2}};
    return true;
}

} // namespace detail

/// Maximum-likelihood fit of entry_dist and hidden_trans with the exit
/// curve held fixed, by multi-start Nelder-Mead on an unconstrained
/// softmax reparameterization.
inline FitResult fit_time_invariant(const ModelStructure& structure,
                                    const DrivingTrace& trace,
                                    const DiurnalProbability& exit_prob,
                                    const FitOptions& opts = {})
{
    const int n = structure.n_states;
    if (n < 2) throw ConfigError("need at least 2 states");
    TripSummary sum = summarize_trips(trace, exit_prob);
    if (sum.starts_driving)
        throw DataError("trace must start in the parked state");
    if (sum.n_trips < 1 && !sum.truncated_duration)
        throw DataError("trace contains no trips to fit driving states on");

    auto objective = [&](const std::vector<double>& theta) {
        auto u = detail::unpack_theta(theta, n);
        return -trip_loglik(sum, u.entry, u.a, u.exit);
    };

    const int dim = detail::n_free_params(n);
    NelderMeadResult best;
    bool any_converged = false;
    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> jitter(0.0, 1.5);
    for (int start = 0; start < opts.n_starts; ++start) {
        std::vector<double> x0(dim, 0.0);
        if (start > 0)
            for (double& v : x0) v = jitter(rng);
        auto res = nelder_mead(objective, std::move(x0), 0.5, 1e-10,
                               opts.max_evals);
        any_converged = any_converged || res.converged;
        if (res.value < best.value) best = std::move(res);
    }

    auto u = detail::unpack_theta(best.x, n);
    FitResult result;
    result.converged = any_converged;
    result.params.exit_prob = exit_prob;
    result.params.entry_dist = u.entry;
    result.params.hidden_trans = u.rows;
    result.params.initial_dist.assign(n, 0.0);
    result.params.initial_dist[0] = 1.0;

    if (opts.canonicalize && n == 3)
        detail::canonicalize_two_phase(result.params.entry_dist,
                                       result.params.hidden_trans);
    // Report the likelihood of the returned representation.
    {
        std::vector<double> entry = result.params.entry_dist;
        int m = n - 1;
        std::vector<std::vector<double>> a(m, std::vector<double>(m));
        std::vector<double> exitcol(m);
        for (int j = 0; j < m; ++j) {
            exitcol[j] = result.params.hidden_trans[j][0];
            for (int k = 0; k < m; ++k)
                a[j][k] = result.params.hidden_trans[j][k + 1];
        }
        result.log_likelihood = trip_loglik(sum, entry, a, exitcol);
    }

    if (!any_converged)
        throw NumericError("no optimizer start converged (best loglik "
                           + std::to_string(-best.value) + ")");
    return result;
}

/// Degrees of freedom added when growing the hidden state space N -> N+1.
inline int order_step_df(int n_states)
{
    return detail::n_free_params(n_states + 1) - detail::n_free_params(n_states);
}

struct ModelOrderResult {
    ModelStructure structure;
    FitResult fit;
    std::vector<double> loglik_ladder; // index 0 -> N=2
};

/// Grows the number of hidden driving states until the likelihood-ratio
/// test no longer rejects at lr_alpha; returns the last accepted model.
inline ModelOrderResult select_model_order(const DrivingTrace& trace,
                                           const DiurnalProbability& exit_prob,
                                           int max_states, double lr_alpha = 0.05,
                                           const FitOptions& opts = {})
{
    if (max_states < 2) throw ConfigError("max_states must be >= 2");
    ModelOrderResult out;
    out.structure = ModelStructure{2};
    out.fit = fit_time_invariant(out.structure, trace, exit_prob, opts);
    out.loglik_ladder.push_back(out.fit.log_likelihood);

    for (int n = 3; n <= max_states; ++n) {
        ModelStructure candidate{n};
        FitResult fit = fit_time_invariant(candidate, trace, exit_prob, opts);
        out.loglik_ladder.push_back(fit.log_likelihood);
        double lr = 2.0 * (fit.log_likelihood - out.fit.log_likelihood);
        int df = order_step_df(n - 1);
        if (lr <= chi_squared_quantile(1.0 - lr_alpha, df)) break;
        out.structure = candidate;
        out.fit = std::move(fit);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Trip-length distribution via Monte Carlo.
// ---------------------------------------------------------------------------

struct TripLengthStats {
    std::vector<int> durations; // minutes
    std::vector<double> density_grid;
    std::vector<double> density; // Gaussian KDE, Silverman bandwidth
    double bandwidth = 0.0;
    double mean = 0.0;
};

inline TripLengthStats trip_length_distribution(const DrivingModelParams& params,
                                                const ModelStructure& structure,
                                                std::size_t n_trips,
                                                std::uint64_t rng_seed,
                                                double bandwidth = 0.0)
{
    if (n_trips < 1) throw ConfigError("n_trips must be >= 1");
    std::mt19937_64 rng(rng_seed);
    TripLengthStats stats;
    stats.durations.reserve(n_trips);

    for (std::size_t i = 0; i < n_trips; ++i) {
        int state = detail::sample_categorical(params.entry_dist, rng); // 0..m-1
        int d = 1;
        while (true) {
            int next = detail::sample_categorical(params.hidden_trans[state], rng);
            if (next == 0) break; // back to parked
            state = next - 1;
            ++d;
            if (d > 100000)
                throw NumericError("runaway trip simulation (non-absorbing block)");
        }
        stats.durations.push_back(d);
        stats.mean += d;
    }
    stats.mean /= static_cast<double>(n_trips);

    // Silverman's rule unless a bandwidth is supplied.
    double sd = 0.0;
    for (int d : stats.durations) sd += (d - stats.mean) * (d - stats.mean);
    sd = std::sqrt(sd / std::max<std::size_t>(n_trips - 1, 1));
    std::vector<int> sorted = stats.durations;
    std::sort(sorted.begin(), sorted.end());
    double iqr = sorted[sorted.size() * 3 / 4] - sorted[sorted.size() / 4];
    double spread = std::min(sd, iqr / 1.34);
    if (spread <= 0.0) spread = std::max(sd, 1.0);
    stats.bandwidth = bandwidth > 0.0
        ? bandwidth
        : 0.9 * spread * std::pow(static_cast<double>(n_trips), -0.2);

    int max_d = sorted.back();
    stats.density_grid.resize(max_d + 1);
    stats.density.assign(max_d + 1, 0.0);
    constexpr double kTwoPi = 6.283185307179586;
    const double norm = 1.0 / (stats.bandwidth * std::sqrt(kTwoPi) * n_trips);
    for (int g = 0; g <= max_d; ++g) {
        stats.density_grid[g] = g;
        double acc = 0.0;
        for (int d : stats.durations) {
            double zscore = (g - d) / stats.bandwidth;
            acc += std::exp(-0.5 * zscore * zscore);
        }
        stats.density[g] = acc * norm;
    }
    return stats;
}

} // namespace evmdp

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>

#include "evmdp/common.hpp"
#include "evmdp/data_ingest.hpp"

namespace evmdp {

/// Clamped B-spline basis on [knots.front(), knots.back()].
/// Boundary knots carry multiplicity degree+1, so basis_dim =
/// #knots + degree - 1 and the basis is a partition of unity.
class SplineBasis {
public:
    SplineBasis() = default;

    SplineBasis(std::vector<double> knots, int degree)
        : knots_(std::move(knots)), degree_(degree)
    {
        if (knots_.size() < 2) throw ConfigError("spline needs at least 2 knots");
        if (degree_ < 1) throw ConfigError("spline degree must be >= 1");
        if (!std::is_sorted(knots_.begin(), knots_.end())
            || std::adjacent_find(knots_.begin(), knots_.end()) != knots_.end())
            throw ConfigError("spline knots must be strictly increasing");
        for (int i = 0; i <= degree_; ++i) extended_.push_back(knots_.front());
        extended_.insert(extended_.end(), knots_.begin() + 1, knots_.end() - 1);
        for (int i = 0; i <= degree_; ++i) extended_.push_back(knots_.back());
    }

    int degree() const { return degree_; }
    int dim() const { return static_cast<int>(knots_.size()) + degree_ - 1; }
    const std::vector<double>& knots() const { return knots_; }
    double lo() const { return knots_.front(); }
    double hi() const { return knots_.back(); }

    /// All basis function values at x (Cox-de Boor).
    std::vector<double> eval(double x) const
    {
        if (x < lo() || x > hi())
            throw ConfigError("spline evaluation outside knot span");
        const int d = degree_;
        const int n = dim();
        // Index mu such that extended_[mu] <= x < extended_[mu+1].
        int mu = d;
        int last = static_cast<int>(extended_.size()) - d - 2;
        while (mu < last && x >= extended_[mu + 1]) ++mu;

        std::vector<double> b(d + 1, 0.0);
        b[0] = 1.0;
        for (int k = 1; k <= d; ++k) {
            // de Boor triangular scheme over the d+1 active functions.
            double saved = 0.0;
            for (int r = 0; r < k; ++r) {
                int i = mu - k + 1 + r;
                double denom = extended_[i + k] - extended_[i];
                double term = denom > 0 ? b[r] / denom : 0.0;
                b[r] = saved + (extended_[i + k] - x) * term;
                saved = (x - extended_[i]) * term;
            }
            b[k] = saved;
        }
        std::vector<double> out(n, 0.0);
        for (int r = 0; r <= d; ++r) out[mu - d + r] = b[r];
        return out;
    }

private:
    std::vector<double> knots_;
    int degree_ = 0;
    std::vector<double> extended_;
};

inline SplineBasis build_basis(std::vector<double> knots, int degree = 3)
{
    return SplineBasis(std::move(knots), degree);
}

inline std::vector<double> uniform_knots(double lo, double hi, int count)
{
    if (count < 2) throw ConfigError("need at least 2 knots");
    std::vector<double> knots(count);
    for (int i = 0; i < count; ++i)
        knots[i] = lo + (hi - lo) * i / (count - 1);
    return knots;
}

/// Per-minute binomial observations (successes out of trials), minute-of-day
/// indexed 1..1440. Minutes with zero trials contribute nothing to a fit.
struct BinomialSeries {
    std::vector<double> successes = std::vector<double>(kMinutesPerDay, 0.0);
    std::vector<double> trials = std::vector<double>(kMinutesPerDay, 0.0);
};

/// Raw per-minute MLE n_jk(s)/z_j(s); undefined where z_j(s) = 0.
inline std::vector<std::optional<double>>
raw_mle(const TransitionCounts& counts, int from, int to)
{
    std::vector<std::optional<double>> out(kMinutesPerDay);
    for (int s = 1; s <= kMinutesPerDay; ++s) {
        double z = counts.z(from, s);
        if (z > 0) out[s - 1] = counts.n(from, to, s) / z;
    }
    return out;
}

/// Successes = transitions leaving `from`, trials = all transitions out of
/// `from`. This is the series behind the time-varying exit probability.
inline BinomialSeries exit_series(const TransitionCounts& counts, int from)
{
    BinomialSeries series;
    for (int s = 1; s <= kMinutesPerDay; ++s) {
        double z = counts.z(from, s);
        series.trials[s - 1] = z;
        series.successes[s - 1] = z - counts.n(from, from, s);
    }
    return series;
}

struct GlmFit {
    std::vector<double> coefficients;
    double log_likelihood = 0.0;
    bool converged = false;
    int iterations = 0;
};

namespace detail {

inline double binom_loglik_term(double n, double z, double p)
{
    double ll = 0.0;
    if (n > 0) ll += n * std::log(p);
    if (z - n > 0) ll += (z - n) * std::log1p(-p);
    return ll;
}

inline double sigmoid(double eta)
{
    if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
    double e = std::exp(eta);
    return e / (1.0 + e);
}

} // namespace detail

/// Binomial-logit fit of the series on the spline basis via iteratively
/// reweighted least squares. Complete separation (probabilities driven to
/// the boundary) is reported through converged = false.
inline GlmFit fit_binomial(const BinomialSeries& series, const SplineBasis& basis)
{
    std::vector<int> rows;
    for (int s = 1; s <= kMinutesPerDay; ++s)
        if (series.trials[s - 1] > 0) rows.push_back(s);
    if (rows.empty())
        throw DataError("no minutes with observations to fit");

    const int dim = basis.dim();
    Eigen::MatrixXd design(rows.size(), dim);
    Eigen::VectorXd succ(rows.size()), trials(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        auto b = basis.eval(static_cast<double>(rows[r]));
        for (int c = 0; c < dim; ++c) design(r, c) = b[c];
        succ(r) = series.successes[rows[r] - 1];
        trials(r) = series.trials[rows[r] - 1];
    }

    // Overflow guard only: boundary coefficients in zero-success knot regions
    // legitimately walk far negative before the score drops below tolerance.
    constexpr double kEtaCap = 250.0;
    constexpr double kGradTol = 1e-6; // score-equation sup-norm at the optimum
    constexpr int kMaxIter = 100;

    // Saturated log-likelihood, used to recognize complete separation: the
    // score converges while the logits diverge and the fit is perfect.
    double saturated_ll = 0.0;
    for (int r = 0; r < succ.size(); ++r)
        saturated_ll += detail::binom_loglik_term(
            succ(r), trials(r),
            std::clamp(succ(r) / trials(r), 1e-12, 1.0 - 1e-12));

    Eigen::VectorXd coef = Eigen::VectorXd::Zero(dim);
    GlmFit fit;
    fit.coefficients.assign(dim, 0.0);

    for (int iter = 1; iter <= kMaxIter; ++iter) {
        Eigen::VectorXd eta = design * coef;
        double ll = 0.0;
        double max_eta = 0.0;
        Eigen::VectorXd w(rows.size()), working(rows.size()), resid(rows.size());
        for (int r = 0; r < eta.size(); ++r) {
            max_eta = std::max(max_eta, std::abs(eta(r)));
            double p = detail::sigmoid(eta(r));
            double pc = std::clamp(p, 1e-12, 1.0 - 1e-12);
            ll += detail::binom_loglik_term(succ(r), trials(r), pc);
            double var = std::max(trials(r) * pc * (1.0 - pc), 1e-12);
            w(r) = var;
            resid(r) = succ(r) - trials(r) * pc;
            working(r) = eta(r) + resid(r) / var;
        }
        fit.iterations = iter;
        fit.log_likelihood = ll;
        fit.coefficients.assign(coef.data(), coef.data() + dim);
        if (!std::isfinite(ll) || max_eta > kEtaCap) {
            fit.converged = false;
            return fit;
        }
        double grad_inf = (design.transpose() * resid).cwiseAbs().maxCoeff();
        if (grad_inf < kGradTol) {
            bool perfect = saturated_ll - ll < 1e-3 * (1.0 + std::abs(saturated_ll));
            fit.converged = !(perfect && max_eta > 10.0);
            return fit;
        }

        Eigen::MatrixXd xtwx = design.transpose() * w.asDiagonal() * design;
        // Tiny ridge keeps knot intervals without data from making the
        // normal equations singular.
        xtwx.diagonal().array() += 1e-10;
        Eigen::VectorXd rhs = design.transpose() * (w.asDiagonal() * working);
        Eigen::VectorXd coef_next = xtwx.ldlt().solve(rhs);
        if (!coef_next.allFinite()) {
            fit.converged = false;
            return fit;
        }
        // Damp the step to at most 5 logit units per iteration; undamped
        // Newton overshoots badly in regions with zero successes (quasi-
        // separation), where the likelihood is nearly flat.
        Eigen::VectorXd delta = coef_next - coef;
        double step_inf = (design * delta).cwiseAbs().maxCoeff();
        coef += step_inf > 5.0 ? (5.0 / step_inf) * delta : delta;
    }
    fit.converged = false; // iteration budget exhausted
    return fit;
}

inline GlmFit fit_logistic(const TransitionCounts& counts, int from,
                           const SplineBasis& basis)
{
    return fit_binomial(exit_series(counts, from), basis);
}

/// Fitted diurnal probability curve with a periodic 1..1440 lookup.
struct DiurnalProbability {
    SplineBasis basis;
    GlmFit fit;
    std::vector<double> cache; // p-hat(s), s = 1..1440

    double prob(long long s) const { return cache[wrap_minute_of_day(s) - 1]; }
};

inline DiurnalProbability make_diurnal(SplineBasis basis, GlmFit fit)
{
    DiurnalProbability d{std::move(basis), std::move(fit), {}};
    d.cache.resize(kMinutesPerDay);
    for (int s = 1; s <= kMinutesPerDay; ++s) {
        auto b = d.basis.eval(static_cast<double>(s));
        double eta = 0.0;
        for (std::size_t c = 0; c < b.size(); ++c)
            eta += b[c] * d.fit.coefficients[c];
        d.cache[s - 1] = detail::sigmoid(eta);
    }
    return d;
}

inline double chi_squared_quantile(double prob, int df)
{
    return boost::math::quantile(boost::math::chi_squared(df), prob);
}

/// Adaptive knot placement: start from uniformly spaced knots, repeatedly
/// insert a knot at the center of the interval with the lowest average
/// log-likelihood per observation, and keep refining while a likelihood
/// ratio test accepts the larger model.
inline DiurnalProbability refine_knots(const TransitionCounts& counts, int from,
                                       int init_knots = 8, int max_knots = 22,
                                       double lr_alpha = 0.05)
{
    if (init_knots < 2) throw ConfigError("init_knots must be >= 2");
    if (max_knots < init_knots) throw ConfigError("max_knots must be >= init_knots");

    const BinomialSeries series = exit_series(counts, from);
    const int degree = 3;

    std::vector<double> knots = uniform_knots(0.0, kMinutesPerDay, init_knots);
    SplineBasis basis = build_basis(knots, degree);
    GlmFit fit = fit_binomial(series, basis);
    if (!fit.converged)
        throw NumericError("initial spline fit did not converge");

    while (static_cast<int>(knots.size()) < max_knots) {
        // Average log-likelihood per trial within each knot interval; the
        // last interval is closed at 1440.
        std::vector<double> probs(kMinutesPerDay);
        for (int s = 1; s <= kMinutesPerDay; ++s) {
            auto b = basis.eval(static_cast<double>(s));
            double eta = 0.0;
            for (std::size_t c = 0; c < b.size(); ++c)
                eta += b[c] * fit.coefficients[c];
            probs[s - 1] = std::clamp(detail::sigmoid(eta), 1e-12, 1.0 - 1e-12);
        }
        int worst = -1;
        double worst_avg = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
            double ll = 0.0, trials = 0.0;
            for (int s = 1; s <= kMinutesPerDay; ++s) {
                double x = static_cast<double>(s);
                bool inside = x >= knots[i]
                    && (x < knots[i + 1] || i + 2 == knots.size());
                if (!inside || series.trials[s - 1] <= 0) continue;
                ll += detail::binom_loglik_term(series.successes[s - 1],
                                                series.trials[s - 1], probs[s - 1]);
                trials += series.trials[s - 1];
            }
            if (trials <= 0) continue;
            double avg = ll / trials;
            if (avg < worst_avg) {
                worst_avg = avg;
                worst = static_cast<int>(i);
            }
        }
        if (worst < 0) break;

        std::vector<double> trial_knots = knots;
        trial_knots.insert(trial_knots.begin() + worst + 1,
                           0.5 * (knots[worst] + knots[worst + 1]));
        SplineBasis trial_basis = build_basis(trial_knots, degree);
        GlmFit trial_fit = fit_binomial(series, trial_basis);
        if (!trial_fit.converged) break;

        int df = trial_basis.dim() - basis.dim();
        double lr = 2.0 * (trial_fit.log_likelihood - fit.log_likelihood);
        if (lr <= chi_squared_quantile(1.0 - lr_alpha, df)) break;

        knots = std::move(trial_knots);
        basis = std::move(trial_basis);
        fit = std::move(trial_fit);
    }
    return make_diurnal(std::move(basis), std::move(fit));
}

} // namespace evmdp

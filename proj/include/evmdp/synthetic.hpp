#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "evmdp/common.hpp"
#include "evmdp/data_ingest.hpp"
#include "evmdp/driving_model.hpp"

namespace evmdp {

/// Projects an arbitrary diurnal probability curve onto a clamped cubic
/// spline basis (least squares on the logit scale) so synthetic ground
/// truth uses the same representation as fitted models.
inline DiurnalProbability
diurnal_from_curve(const std::function<double(double)>& prob_of_minute,
                   int n_knots = 16)
{
    SplineBasis basis = build_basis(uniform_knots(0.0, kMinutesPerDay, n_knots));
    Eigen::MatrixXd design(kMinutesPerDay, basis.dim());
    Eigen::VectorXd target(kMinutesPerDay);
    for (int s = 1; s <= kMinutesPerDay; ++s) {
        auto b = basis.eval(static_cast<double>(s));
        for (int c = 0; c < basis.dim(); ++c) design(s - 1, c) = b[c];
        double p = std::clamp(prob_of_minute(static_cast<double>(s)), 1e-9,
                              1.0 - 1e-9);
        target(s - 1) = std::log(p / (1.0 - p));
    }
    Eigen::VectorXd coef =
        design.colPivHouseholderQr().solve(target);
    GlmFit fit;
    fit.coefficients.assign(coef.data(), coef.data() + basis.dim());
    fit.converged = true;
    fit.iterations = 0;
    return make_diurnal(std::move(basis), std::move(fit));
}

/// Documented ground truth for synthetic data: one parked state and two
/// hidden driving states in canonical chain form. The exit curve has a
/// morning and an afternoon peak and is essentially zero at night,
/// averaging roughly four trips per day.
struct GroundTruth {
    ModelStructure structure;
    DrivingModelParams params;
};

inline GroundTruth ground_truth_model()
{
    GroundTruth gt;
    gt.structure = ModelStructure{3};
    auto curve = [](double s) {
        auto bump = [&](double center, double width) {
            double zscore = (s - center) / width;
            return std::exp(-zscore * zscore);
        };
        double eta = -9.0 + 5.4 * bump(390.0, 80.0) + 5.7 * bump(980.0, 110.0);
        return 1.0 / (1.0 + std::exp(-eta));
    };
    gt.params.exit_prob = diurnal_from_curve(curve);
    gt.params.entry_dist = {0.45, 0.55};
    gt.params.hidden_trans = {
        {0.0, 0.95, 0.05}, // slow errand state feeds the short-hop state
        {0.40, 0.0, 0.60}, // short-hop state returns to parked
    };
    gt.params.initial_dist = {1.0, 0.0, 0.0};
    return gt;
}

/// Synthetic driving log: a simulated realization of the ground-truth (or
/// any other) model, starting parked at midnight of the given day.
inline DrivingTrace generate_trace(const GroundTruth& gt, EpochMinute start,
                                   int days, std::uint64_t seed)
{
    if (days < 1) throw ConfigError("need at least one day");
    auto sim = simulate(gt.params, gt.structure, gt.structure.parked_state(),
                        start, static_cast<std::size_t>(days) * kMinutesPerDay,
                        seed);
    return sim.observed;
}

/// Sinusoid-plus-noise hourly spot prices: trough around 04:00, peak around
/// 16:00, Gaussian noise, floored at 5 currency/MWh.
inline PriceSeries generate_prices(EpochMinute start, int hours,
                                   std::uint64_t seed, double level = 45.0,
                                   double amplitude = 18.0,
                                   double noise_sd = 4.0)
{
    if (start % 60 != 0) throw ConfigError("price series must start on the hour");
    PriceSeries series;
    series.start_minute = start;
    series.hourly.reserve(hours);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, noise_sd);
    constexpr double kTwoPi = 6.283185307179586;
    for (int h = 0; h < hours; ++h) {
        double hour_of_day = static_cast<double>(((start / 60) + h) % 24);
        double price = level
            - amplitude * std::cos(kTwoPi * (hour_of_day - 4.0) / 24.0)
            + noise(rng);
        series.hourly.push_back(std::max(price, 5.0));
    }
    return series;
}

} // namespace evmdp

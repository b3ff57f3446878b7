#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <random>

#include "evmdp/driving_model.hpp"
#include "evmdp/model_io.hpp"
#include "evmdp/synthetic.hpp"

using namespace evmdp;

namespace {

DiurnalProbability constant_curve(double p)
{
    return diurnal_from_curve([p](double) { return p; });
}

DrivingModelParams two_state_params(double exit_p, double stay)
{
    DrivingModelParams params;
    params.exit_prob = constant_curve(exit_p);
    params.entry_dist = {1.0};
    params.hidden_trans = {{1.0 - stay, stay}};
    params.initial_dist = {1.0, 0.0};
    return params;
}

// Exhaustive hidden-path summation; the independent oracle for the forward
// recursion on short traces.
double brute_force_loglik(const DrivingModelParams& params,
                          const ModelStructure& structure,
                          const DrivingTrace& trace)
{
    const int n = structure.n_states;
    const std::size_t T = trace.size();
    double total = 0.0;
    std::vector<int> path(T, 1);
    while (true) {
        double prob = 0.0;
        bool consistent = true;
        for (std::size_t i = 0; i < T; ++i)
            if (structure.observed_symbol(path[i])
                != (trace.states[i] == 1 ? 1 : 2))
                consistent = false;
        if (consistent) {
            prob = params.initial_dist[path[0] - 1];
            for (std::size_t i = 1; i < T && prob > 0; ++i) {
                auto p = transition_matrix_at(params, trace.minute_of_day(i - 1));
                prob *= p[path[i - 1] - 1][path[i] - 1];
            }
        }
        total += prob;
        std::size_t k = 0;
        while (k < T && path[k] == n) path[k++] = 1;
        if (k == T) break;
        ++path[k];
    }
    return total > 0 ? std::log(total) : -std::numeric_limits<double>::infinity();
}

double trip_factorized_loglik(const DrivingModelParams& params,
                              const DrivingTrace& trace)
{
    auto sum = summarize_trips(trace, params.exit_prob);
    const int m = static_cast<int>(params.entry_dist.size());
    std::vector<std::vector<double>> a(m, std::vector<double>(m));
    std::vector<double> exitcol(m);
    for (int j = 0; j < m; ++j) {
        exitcol[j] = params.hidden_trans[j][0];
        for (int k = 0; k < m; ++k) a[j][k] = params.hidden_trans[j][k + 1];
    }
    return trip_loglik(sum, params.entry_dist, a, exitcol);
}

} // namespace

TEST_CASE("transition matrices are row-stochastic at every minute")
{
    auto gt = ground_truth_model();
    for (int s = 1; s <= kMinutesPerDay; ++s) {
        auto p = transition_matrix_at(gt.params, s);
        for (const auto& row : p) {
            double sum = 0.0;
            for (double v : row) {
                CHECK(v >= 0.0);
                sum += v;
            }
            CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-12));
        }
        // Periodic lookup: s and s + 1440 give the same matrix.
        CHECK(transition_matrix_at(gt.params, s + kMinutesPerDay)[0][0]
              == p[0][0]);
    }
}

TEST_CASE("two-state likelihood is the plain Markov chain likelihood")
{
    auto params = two_state_params(0.1, 0.7);
    ModelStructure structure{2};
    double p = params.exit_prob.prob(1); // constant curve
    DrivingTrace trace{0, {1, 1, 2, 2, 1}};
    double expected = std::log1p(-p) + std::log(p) + std::log(0.7)
        + std::log(0.3);
    CHECK_THAT(hmm_log_likelihood(params, structure, trace),
               Catch::Matchers::WithinAbs(expected, 1e-10));
}

TEST_CASE("impossible traces have zero probability")
{
    auto params = two_state_params(0.1, 0.7);
    ModelStructure structure{2};
    DrivingTrace starts_driving{0, {2, 1, 1}};
    CHECK(hmm_log_likelihood(params, structure, starts_driving)
          == -std::numeric_limits<double>::infinity());
}

TEST_CASE("forward likelihood matches brute-force path enumeration")
{
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> unif(0.05, 0.95);
    for (int rep = 0; rep < 20; ++rep) {
        double base = unif(rng), amp = unif(rng) * 0.4, phase = unif(rng);
        auto curve = [=](double s) {
            return std::clamp(
                base * 0.5 + amp * std::sin(6.2832 * (s / 1440.0 + phase)) * 0.5
                    + 0.25,
                0.02, 0.98);
        };
        ModelStructure structure{3};
        DrivingModelParams params;
        params.exit_prob = diurnal_from_curve(curve);
        params.entry_dist = {unif(rng), unif(rng)};
        double esum = params.entry_dist[0] + params.entry_dist[1];
        for (double& v : params.entry_dist) v /= esum;
        params.hidden_trans.assign(2, std::vector<double>(3));
        for (auto& row : params.hidden_trans) {
            double sum = 0.0;
            for (double& v : row) sum += v = unif(rng);
            for (double& v : row) v /= sum;
        }
        params.initial_dist = {1.0, 0.0, 0.0};

        std::uniform_int_distribution<int> sym(1, 2);
        DrivingTrace trace;
        trace.start_minute = rep * 977; // varied diurnal alignment
        trace.states.push_back(1);
        for (int i = 1; i < 6; ++i) trace.states.push_back(sym(rng));

        double fwd = hmm_log_likelihood(params, structure, trace);
        double brute = brute_force_loglik(params, structure, trace);
        CHECK_THAT(fwd, Catch::Matchers::WithinAbs(brute, 1e-10 * std::abs(brute)));
    }
}

TEST_CASE("trip-factorized likelihood equals the forward recursion")
{
    auto gt = ground_truth_model();
    for (std::uint64_t seed : {11u, 12u, 13u, 14u}) {
        auto trace = generate_trace(gt, 0, 10, seed);
        double fwd = hmm_log_likelihood(gt.params, gt.structure, trace);
        double fact = trip_factorized_loglik(gt.params, trace);
        CHECK_THAT(fact, Catch::Matchers::WithinAbs(fwd, 1e-9 * std::abs(fwd)));
    }

    // Trace cut mid-trip exercises the survival term.
    auto long_trace = generate_trace(gt, 0, 30, 5);
    std::size_t cut = long_trace.size();
    while (cut > 0 && long_trace.states[cut - 1] == 1) --cut;
    REQUIRE(cut > kMinutesPerDay); // ends while driving
    DrivingTrace truncated{long_trace.start_minute,
                           {long_trace.states.begin(),
                            long_trace.states.begin() + cut}};
    double fwd = hmm_log_likelihood(gt.params, gt.structure, truncated);
    double fact = trip_factorized_loglik(gt.params, truncated);
    CHECK_THAT(fact, Catch::Matchers::WithinAbs(fwd, 1e-9 * std::abs(fwd)));
}

TEST_CASE("two-state fit equals the closed-form counting estimate")
{
    GroundTruth truth;
    truth.structure = ModelStructure{2};
    truth.params = two_state_params(0.05, 0.88);
    auto trace = generate_trace(truth, 0, 60, 21);

    FitOptions opts;
    opts.n_starts = 5;
    auto fit = fit_time_invariant(truth.structure, trace, truth.params.exit_prob,
                                  opts);
    REQUIRE(fit.converged);

    // Counting MLE for the single driving state: stay probability =
    // driving->driving transitions / transitions out of driving.
    double stays = 0.0, exits = 0.0;
    for (std::size_t i = 0; i + 1 < trace.size(); ++i) {
        if (trace.states[i] != 2) continue;
        if (trace.states[i + 1] == 2)
            ++stays;
        else
            ++exits;
    }
    double a_mle = stays / (stays + exits);
    CHECK_THAT(fit.params.hidden_trans[0][1],
               Catch::Matchers::WithinAbs(a_mle, 1e-6));
    CHECK_THAT(fit.params.hidden_trans[0][0],
               Catch::Matchers::WithinAbs(1.0 - a_mle, 1e-6));
    CHECK(fit.params.entry_dist == std::vector<double>{1.0});
}

TEST_CASE("fit recovers the canonical ground truth on simulated data")
{
    auto gt = ground_truth_model();
    auto trace = generate_trace(gt, 0, 250, 33);
    auto fit = fit_time_invariant(gt.structure, trace, gt.params.exit_prob);
    REQUIRE(fit.converged);
    for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 3; ++k)
            CHECK_THAT(fit.params.hidden_trans[j][k],
                       Catch::Matchers::WithinAbs(gt.params.hidden_trans[j][k],
                                                  0.06));
    CHECK_THAT(fit.params.entry_dist[0],
               Catch::Matchers::WithinAbs(gt.params.entry_dist[0], 0.1));
    // Canonical chain structure is exact by construction.
    CHECK(fit.params.hidden_trans[0][0] == 0.0);
    CHECK(fit.params.hidden_trans[1][2] >= 0.0);
}

TEST_CASE("larger hidden state spaces never fit worse")
{
    auto gt = ground_truth_model();
    auto trace = generate_trace(gt, 0, 80, 41);
    FitOptions opts;
    opts.n_starts = 8;
    auto fit2 = fit_time_invariant(ModelStructure{2}, trace,
                                   gt.params.exit_prob, opts);
    auto fit3 = fit_time_invariant(ModelStructure{3}, trace,
                                   gt.params.exit_prob, opts);
    CHECK(fit3.log_likelihood >= fit2.log_likelihood - 1e-6);
}

TEST_CASE("order selection separates two- and three-state data")
{
    // Degrees of freedom added at each growth step.
    CHECK(order_step_df(2) == 4);
    CHECK(order_step_df(3) == 6);

    GroundTruth simple;
    simple.structure = ModelStructure{2};
    simple.params = two_state_params(0.05, 0.90);
    FitOptions opts;
    opts.n_starts = 8;
    auto pick2 = select_model_order(generate_trace(simple, 0, 120, 4),
                                    simple.params.exit_prob, 4, 0.05, opts);
    CHECK(pick2.structure.n_states == 2);

    auto gt = ground_truth_model();
    auto pick3 = select_model_order(generate_trace(gt, 0, 400, 3),
                                    gt.params.exit_prob, 4, 0.05, opts);
    CHECK(pick3.structure.n_states == 3);
}

TEST_CASE("simulation is seed-deterministic and matches the generator")
{
    auto gt = ground_truth_model();
    auto a = simulate(gt.params, gt.structure, 1, 0, 5000, 99);
    auto b = simulate(gt.params, gt.structure, 1, 0, 5000, 99);
    auto c = simulate(gt.params, gt.structure, 1, 0, 5000, 100);
    CHECK(a.observed.states == b.observed.states);
    CHECK(a.hidden == b.hidden);
    CHECK(a.observed.states != c.observed.states);
    CHECK(a.hidden.size() == 5000u);
    for (std::size_t i = 0; i < a.hidden.size(); ++i)
        CHECK(gt.structure.observed_symbol(a.hidden[i]) == a.observed.states[i]);
}

TEST_CASE("long-run transition frequencies match the parameters")
{
    auto gt = ground_truth_model();
    auto sim = simulate(gt.params, gt.structure, 1, 0,
                        1000u * kMinutesPerDay, 7);
    // Empirical frequency of leaving the tail driving state (state 3).
    double exits = 0.0, total = 0.0;
    for (std::size_t i = 0; i + 1 < sim.hidden.size(); ++i) {
        if (sim.hidden[i] != 3) continue;
        ++total;
        if (sim.hidden[i + 1] == 1) ++exits;
    }
    REQUIRE(total > 10000.0);
    CHECK_THAT(exits / total,
               Catch::Matchers::WithinAbs(gt.params.hidden_trans[1][0], 0.005));
}

TEST_CASE("trip length distribution matches the geometric oracle")
{
    GroundTruth truth;
    truth.structure = ModelStructure{2};
    truth.params = two_state_params(0.05, 0.9); // Geometric(0.1), mean 10
    auto stats = trip_length_distribution(truth.params, truth.structure,
                                          200000, 17);
    CHECK_THAT(stats.mean, Catch::Matchers::WithinAbs(10.0, 0.2));
    CHECK(stats.bandwidth > 0.0);
    // Density grid approximately integrates to one (unit-spaced Riemann sum;
    // some Gaussian mass spills past the sampled range).
    double mass = 0.0;
    for (double d : stats.density) mass += d;
    CHECK_THAT(mass, Catch::Matchers::WithinAbs(1.0, 0.05));
}

TEST_CASE("model JSON round trip preserves parameters and curve")
{
    auto gt = ground_truth_model();
    auto j = model_to_json(gt.structure, gt.params);
    auto [structure, params] = model_from_json(j);
    CHECK(structure.n_states == 3);
    CHECK(params.entry_dist == gt.params.entry_dist);
    CHECK(params.hidden_trans == gt.params.hidden_trans);
    CHECK(params.initial_dist == gt.params.initial_dist);
    for (int s = 1; s <= kMinutesPerDay; ++s)
        CHECK_THAT(params.exit_prob.prob(s),
                   Catch::Matchers::WithinAbs(gt.params.exit_prob.prob(s),
                                              1e-12));

    auto bad = j;
    bad["schema"] = "something-else";
    CHECK_THROWS_AS(model_from_json(bad), ParseError);
    bad = j;
    bad["entry_dist"] = std::vector<double>{1.0};
    CHECK_THROWS_AS(model_from_json(bad), ParseError);

    std::string path = "roundtrip_model.json";
    save_model_file(path, gt.structure, gt.params);
    auto [s2, p2] = load_model_file(path);
    CHECK(s2.n_states == 3);
    CHECK(p2.hidden_trans == gt.params.hidden_trans);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_model_file("does_not_exist.json"), DataError);
}

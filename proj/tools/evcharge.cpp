// evcharge: command-line front end wiring ingestion -> fitting -> solving ->
// simulation -> reporting. Exit codes: 0 success, 2 config error, 3 data
// error, 4 numerical failure.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "evmdp/data_ingest.hpp"
#include "evmdp/driving_model.hpp"
#include "evmdp/mdp_solver.hpp"
#include "evmdp/model_io.hpp"
#include "evmdp/policy_sim.hpp"
#include "evmdp/spline_glm.hpp"
#include "evmdp/synthetic.hpp"

namespace {

using namespace evmdp;
namespace fs = std::filesystem;

DrivingTrace read_trace(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw DataError("cannot open trip log " + path);
    return parse_trace(in);
}

PriceSeries read_prices(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw DataError("cannot open price series " + path);
    return parse_prices(in);
}

std::ofstream open_out(const std::string& out_dir, const std::string& name)
{
    fs::create_directories(out_dir);
    fs::path path = fs::path(out_dir) / name;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out.precision(10);
    return out;
}

DayFilter parse_day_filter(const std::string& name)
{
    if (name == "all") return DayFilter::all;
    if (name == "weekday") return DayFilter::weekday;
    if (name == "weekend") return DayFilter::weekend;
    throw ConfigError("unknown day filter '" + name + "'");
}

int action_code(double u)
{
    if (u > 0) return 1;
    if (u < 0) return -1;
    return 0;
}

int count_trips(const DrivingTrace& trace)
{
    int trips = 0;
    for (std::size_t i = 1; i < trace.size(); ++i)
        if (trace.states[i] != 1 && trace.states[i - 1] == 1) ++trips;
    return trips;
}

// ---------------------------------------------------------------------------

struct GenerateOpts {
    std::string out_dir = ".";
    std::string start_date = "2002-10-23";
    int days = 183;
    int price_hours = 0; // default: span + 48 h margin
    std::uint64_t seed = 20230201;
};

void cmd_generate(const GenerateOpts& opt)
{
    if (opt.days < 1) throw ConfigError("--days must be >= 1");
    auto gt = ground_truth_model();
    EpochMinute start = to_epoch_minute(parse_date(opt.start_date));
    int hours = opt.price_hours > 0 ? opt.price_hours : opt.days * 24 + 48;

    auto trace = generate_trace(gt, start, opt.days, opt.seed + 1);
    auto prices = generate_prices(start, hours, opt.seed + 2);

    {
        auto out = open_out(opt.out_dir, "trips.csv");
        serialize_trace(trace, out);
    }
    {
        auto out = open_out(opt.out_dir, "prices.csv");
        serialize_prices(prices, out);
    }
    save_model_file((fs::path(opt.out_dir) / "truth_model.json").string(),
                    gt.structure, gt.params);

    std::cout << "generated " << opt.days << " days, " << count_trips(trace)
              << " trips, " << hours << " price hours\n";
}

// ---------------------------------------------------------------------------

struct FitOpts {
    std::string trips;
    std::string out_dir = ".";
    std::string day_filter = "all";
    std::string split_date;
    int init_knots = 8;
    int max_knots = 22;
    int max_states = 4;
    double alpha = 0.05;
    int starts = 20;
    std::uint64_t seed = 20230201;
    int threads = 1;
};

void cmd_fit(const FitOpts& opt)
{
    auto trace = read_trace(opt.trips);
    if (!opt.split_date.empty())
        trace = split_train_test(trace, parse_date(opt.split_date)).first;

    auto counts =
        count_transitions(trace, parse_day_filter(opt.day_filter));
    auto exit_curve = refine_knots(counts, 1, opt.init_knots, opt.max_knots,
                                   opt.alpha);
    std::cout << "exit curve: " << exit_curve.basis.knots().size()
              << " knots, loglik " << exit_curve.fit.log_likelihood << "\n";

    evmdp::FitOptions fit_opts;
    fit_opts.n_starts = opt.starts;
    fit_opts.seed = opt.seed;
    auto order = select_model_order(trace, exit_curve, opt.max_states,
                                    opt.alpha, fit_opts);
    for (std::size_t i = 0; i < order.loglik_ladder.size(); ++i)
        std::cout << "n_states=" << (i + 2) << " loglik "
                  << order.loglik_ladder[i] << "\n";
    std::cout << "selected n_states=" << order.structure.n_states << "\n";

    fs::create_directories(opt.out_dir);
    save_model_file((fs::path(opt.out_dir) / "model.json").string(),
                    order.structure, order.fit.params);
}

// ---------------------------------------------------------------------------

struct SolveOpts {
    std::string model;
    std::string prices;
    std::string out_dir = ".";
    std::string mode = "charge";
    std::string start; // timestamp; default = price series start
    double phi = 10.0;
    int horizon = 2880;
    int grid_levels = 360;
    int threads = 1;
};

MdpConfig solve_config(double phi, int horizon, const std::string& mode)
{
    MdpConfig cfg;
    cfg.phi = phi;
    cfg.horizon_minutes = horizon;
    if (mode == "v2g")
        cfg.u_min = -cfg.u_max;
    else if (mode != "charge")
        throw ConfigError("--mode must be charge or v2g");
    return cfg;
}

void cmd_solve(const SolveOpts& opt)
{
    auto [structure, params] = load_model_file(opt.model);
    auto prices = read_prices(opt.prices);
    EpochMinute start = opt.start.empty()
        ? prices.start_minute
        : to_epoch_minute(parse_timestamp(opt.start));

    MdpConfig cfg = solve_config(opt.phi, opt.horizon, opt.mode);
    cfg.validate();
    EnergyGrid grid(cfg.e_min, cfg.e_max, opt.grid_levels);
    auto actions = cfg.u_min < 0 ? v2g_actions(cfg) : charge_only_actions(cfg);
    auto window = prices.minute_window(start, cfg.horizon_minutes);

    auto t0 = std::chrono::steady_clock::now();
    auto sol = solve(params, structure, window, cfg, grid, actions,
                     wrap_minute_of_day(start + 1));
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                  std::chrono::steady_clock::now() - t0)
                  .count();
    std::cerr << "solved " << cfg.horizon_minutes << "x" << grid.levels << "x"
              << structure.n_states << " in " << ms << " ms\n";

    {
        auto out = open_out(opt.out_dir, "policy.csv");
        out << "t,energy_idx,driving_state,action,value\n";
        for (int t = 0; t < sol.horizon; ++t)
            for (int m = 0; m < sol.levels; ++m)
                for (int x = 1; x <= sol.states; ++x)
                    out << t << ',' << m << ',' << x << ','
                        << action_code(sol.u(t, m, x)) << ',' << sol.v(t, m, x)
                        << '\n';
    }
    {
        // Parked-state action heatmap: minute x SOC level.
        auto out = open_out(opt.out_dir, "heatmap.csv");
        out << "minute";
        for (int m = 0; m < sol.levels; ++m) out << ",soc_" << grid.level(m);
        out << '\n';
        for (int t = 0; t < sol.horizon; ++t) {
            out << t;
            for (int m = 0; m < sol.levels; ++m)
                out << ',' << action_code(sol.u(t, m, 1));
            out << '\n';
        }
    }
}

// ---------------------------------------------------------------------------

struct SimulateOpts {
    std::string model;
    std::string prices;
    std::string trips;
    std::string out_dir = ".";
    std::string mode = "charge";
    std::string policies = "optimal,naive,night,low_price";
    double phi = 10.0;
    int horizon = 2880;
    int grid_levels = 360;
    int roll_every = 1440; // 0 = single fixed-horizon solve
    int scenarios = 0;
    int days = 60;
    double initial_soc = 1.0;
    std::uint64_t seed = 20230201;
    int threads = 1;
};

std::unique_ptr<Policy> baseline_policy(const std::string& name,
                                        const MdpConfig& cfg)
{
    RuleOfThumbSpec spec;
    if (name == "naive") {
        spec.kind = RuleKind::naive;
    } else if (name == "night") {
        spec.kind = RuleKind::night;
    } else if (name == "low_price") {
        spec.kind = RuleKind::low_price;
    } else if (name == "v2g_quantile") {
        spec.kind = RuleKind::v2g_quantile;
        spec.buy_quantile = 0.30;
        spec.v2g_lower_frac = 0.25;
    } else {
        throw ConfigError("unknown policy '" + name + "'");
    }
    return make_rule_of_thumb(spec, cfg);
}

void cmd_simulate(const SimulateOpts& opt)
{
    auto [structure, params] = load_model_file(opt.model);
    auto prices = read_prices(opt.prices);
    MdpConfig cfg = solve_config(opt.phi, opt.horizon, opt.mode);
    cfg.validate();
    if (opt.initial_soc < 0.0 || opt.initial_soc > 1.0)
        throw ConfigError("--initial-soc must be in [0,1]");

    std::vector<DrivingTrace> traces;
    if (!opt.trips.empty()) {
        traces.push_back(read_trace(opt.trips));
    } else {
        if (opt.scenarios < 1)
            throw ConfigError("need --trips or --scenarios >= 1");
        GroundTruth model{structure, params};
        for (int i = 0; i < opt.scenarios; ++i)
            traces.push_back(generate_trace(model, prices.start_minute,
                                            opt.days, opt.seed + 100 + i));
    }
    const int span = static_cast<int>(traces.front().size());
    const EpochMinute start = traces.front().start_minute;
    for (const auto& t : traces)
        if (static_cast<int>(t.size()) != span || t.start_minute != start)
            throw DataError("all replay traces must share one span");

    EnergyGrid grid(cfg.e_min, cfg.e_max, opt.grid_levels);
    auto actions = cfg.u_min < 0 ? v2g_actions(cfg) : charge_only_actions(cfg);

    std::vector<std::pair<std::string, std::unique_ptr<Policy>>> policies;
    std::stringstream names(opt.policies);
    std::string name;
    while (std::getline(names, name, ',')) {
        if (name.empty()) continue;
        if (name == "optimal") {
            std::unique_ptr<Policy> table;
            if (opt.roll_every > 0) {
                int last = (span - 1) / opt.roll_every * opt.roll_every;
                auto window =
                    prices.minute_window(start, last + cfg.horizon_minutes);
                auto rolled = rolling_solve(params, structure, window, cfg,
                                            grid, actions,
                                            wrap_minute_of_day(start + 1),
                                            opt.roll_every, span);
                table = std::make_unique<TablePolicy>(
                    TablePolicy::from(rolled, grid));
            } else {
                if (cfg.horizon_minutes < span)
                    throw ConfigError(
                        "fixed horizon shorter than the replay span");
                auto window = prices.minute_window(start, cfg.horizon_minutes);
                auto sol = solve(params, structure, window, cfg, grid, actions,
                                 wrap_minute_of_day(start + 1));
                table = std::make_unique<TablePolicy>(
                    TablePolicy::from(sol, grid));
            }
            policies.emplace_back(name, std::move(table));
        } else {
            policies.emplace_back(name, baseline_policy(name, cfg));
        }
    }
    if (policies.empty()) throw ConfigError("--policies is empty");

    auto comparison = open_out(opt.out_dir, "comparison.csv");
    comparison << "policy,phi,mean_daily_cost,stranded_events,"
                  "energy_bought_kwh,energy_sold_kwh\n";
    const double initial_e = opt.initial_soc * cfg.e_max;
    for (const auto& [pname, policy] : policies) {
        double cost = 0.0, events = 0.0, bought = 0.0, sold = 0.0;
        SimulationReport last;
        for (const auto& trace : traces) {
            last = simulate_policy(*policy, trace, prices, cfg, initial_e);
            cost += last.daily_cost_mean;
            events += last.stranded_events;
            bought += last.energy_purchased;
            sold += last.energy_sold;
        }
        double n = static_cast<double>(traces.size());
        comparison << pname << ',' << cfg.phi << ',' << cost / n << ','
                   << events / n << ',' << bought / n << ',' << sold / n
                   << '\n';

        if (traces.size() == 1) {
            auto out = open_out(opt.out_dir, "trace_" + pname + ".csv");
            out << "t,minute,soc_kwh,action_kw,price,driving_state\n";
            const auto& trace = traces.front();
            for (int t = 0; t < span; ++t)
                out << t << ',' << trace.minute_of_day(t) << ','
                    << last.soc_trace[t] << ',' << last.action_trace[t] << ','
                    << prices.price_at(trace.timestamp(t)) << ','
                    << trace.states[t] << '\n';
        }
    }
}

// ---------------------------------------------------------------------------

struct EvaluateOpts {
    std::string model;
    std::string trips;
    std::string out_dir = ".";
    std::string split_date;
    int density_trips = 20000;
    std::uint64_t seed = 20230201;
};

void cmd_evaluate(const EvaluateOpts& opt)
{
    auto [structure, params] = load_model_file(opt.model);
    auto trace = read_trace(opt.trips);
    if (!opt.split_date.empty())
        trace = split_train_test(trace, parse_date(opt.split_date)).second;

    double ll = hmm_log_likelihood(params, structure, trace);
    std::cout << "observations " << trace.size() << "\n";
    std::cout << "loglik " << ll << "\n";
    std::cout << "loglik_per_minute " << ll / static_cast<double>(trace.size())
              << "\n";

    {
        auto out = open_out(opt.out_dir, "exit_curve.csv");
        out << "minute_of_day,exit_prob\n";
        for (int s = 1; s <= kMinutesPerDay; ++s)
            out << s << ',' << params.exit_prob.prob(s) << '\n';
    }
    {
        auto stats = trip_length_distribution(params, structure,
                                              opt.density_trips, opt.seed);
        auto out = open_out(opt.out_dir, "trip_density.csv");
        out << "duration_minutes,density\n";
        for (std::size_t i = 0; i < stats.density.size(); ++i)
            out << stats.density_grid[i] << ',' << stats.density[i] << '\n';
        std::cout << "model_mean_trip_minutes " << stats.mean << "\n";
    }
    {
        // Empirical trip-duration histogram of the evaluated trace.
        std::map<int, int> hist;
        int run = 0;
        for (std::size_t i = 0; i < trace.size(); ++i) {
            if (trace.states[i] != 1) {
                ++run;
            } else if (run > 0) {
                ++hist[run];
                run = 0;
            }
        }
        auto out = open_out(opt.out_dir, "trip_hist.csv");
        out << "duration_minutes,count\n";
        for (auto [d, c] : hist) out << d << ',' << c << '\n';
    }
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"EV charging: driving-model fitting, MDP solving, policy "
                 "simulation"};
    app.require_subcommand(1);
    app.set_config("--config", "",
                   "INI file with per-subcommand sections, e.g. [solve]");

    GenerateOpts gen;
    auto* cmd_gen = app.add_subcommand("generate",
                                       "emit a synthetic trip log and prices");
    cmd_gen->add_option("--out-dir", gen.out_dir);
    cmd_gen->add_option("--start-date", gen.start_date);
    cmd_gen->add_option("--days", gen.days);
    cmd_gen->add_option("--price-hours", gen.price_hours);
    cmd_gen->add_option("--seed", gen.seed);
    cmd_gen->callback([&] { cmd_generate(gen); });

    FitOpts fit;
    auto* cmd_f = app.add_subcommand("fit", "fit the driving model");
    cmd_f->add_option("--trips", fit.trips)->required();
    cmd_f->add_option("--out-dir", fit.out_dir);
    cmd_f->add_option("--day-filter", fit.day_filter);
    cmd_f->add_option("--split-date", fit.split_date);
    cmd_f->add_option("--init-knots", fit.init_knots);
    cmd_f->add_option("--max-knots", fit.max_knots);
    cmd_f->add_option("--max-states", fit.max_states);
    cmd_f->add_option("--alpha", fit.alpha);
    cmd_f->add_option("--starts", fit.starts);
    cmd_f->add_option("--seed", fit.seed);
    cmd_f->add_option("--threads", fit.threads);
    cmd_f->callback([&] { cmd_fit(fit); });

    SolveOpts sol;
    auto* cmd_s = app.add_subcommand("solve", "solve the charging MDP");
    cmd_s->add_option("--model", sol.model)->required();
    cmd_s->add_option("--prices", sol.prices)->required();
    cmd_s->add_option("--out-dir", sol.out_dir);
    cmd_s->add_option("--mode", sol.mode);
    cmd_s->add_option("--start", sol.start);
    cmd_s->add_option("--phi", sol.phi);
    cmd_s->add_option("--horizon-minutes", sol.horizon);
    cmd_s->add_option("--grid-levels", sol.grid_levels);
    cmd_s->add_option("--threads", sol.threads);
    cmd_s->callback([&] { cmd_solve(sol); });

    SimulateOpts sim;
    auto* cmd_sim = app.add_subcommand("simulate", "replay policies");
    cmd_sim->add_option("--model", sim.model)->required();
    cmd_sim->add_option("--prices", sim.prices)->required();
    cmd_sim->add_option("--trips", sim.trips);
    cmd_sim->add_option("--out-dir", sim.out_dir);
    cmd_sim->add_option("--mode", sim.mode);
    cmd_sim->add_option("--policies", sim.policies);
    cmd_sim->add_option("--phi", sim.phi);
    cmd_sim->add_option("--horizon-minutes", sim.horizon);
    cmd_sim->add_option("--grid-levels", sim.grid_levels);
    cmd_sim->add_option("--roll-every-minutes", sim.roll_every);
    cmd_sim->add_option("--scenarios", sim.scenarios);
    cmd_sim->add_option("--days", sim.days);
    cmd_sim->add_option("--initial-soc", sim.initial_soc);
    cmd_sim->add_option("--seed", sim.seed);
    cmd_sim->add_option("--threads", sim.threads);
    cmd_sim->callback([&] { cmd_simulate(sim); });

    EvaluateOpts ev;
    auto* cmd_ev = app.add_subcommand("evaluate",
                                      "held-out likelihood and trip stats");
    cmd_ev->add_option("--model", ev.model)->required();
    cmd_ev->add_option("--trips", ev.trips)->required();
    cmd_ev->add_option("--out-dir", ev.out_dir);
    cmd_ev->add_option("--split-date", ev.split_date);
    cmd_ev->add_option("--density-trips", ev.density_trips);
    cmd_ev->add_option("--seed", ev.seed);
    cmd_ev->callback([&] { cmd_evaluate(ev); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    }
    return 0;
}

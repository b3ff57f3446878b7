#pragma once

#include <fstream>
#include <string>
#include <utility>

#include <json.hpp>

#include "evmdp/common.hpp"
#include "evmdp/driving_model.hpp"

namespace evmdp {

inline constexpr const char* kModelSchema = "evmdp-model-v1";

inline nlohmann::json diurnal_to_json(const DiurnalProbability& d)
{
    return {
        {"knots", d.basis.knots()},
        {"degree", d.basis.degree()},
        {"coefficients", d.fit.coefficients},
        {"log_likelihood", d.fit.log_likelihood},
        {"converged", d.fit.converged},
        {"iterations", d.fit.iterations},
    };
}

inline DiurnalProbability diurnal_from_json(const nlohmann::json& j)
{
    SplineBasis basis(j.at("knots").get<std::vector<double>>(),
                      j.at("degree").get<int>());
    GlmFit fit;
    fit.coefficients = j.at("coefficients").get<std::vector<double>>();
    fit.log_likelihood = j.at("log_likelihood").get<double>();
    fit.converged = j.at("converged").get<bool>();
    fit.iterations = j.at("iterations").get<int>();
    if (static_cast<int>(fit.coefficients.size()) != basis.dim())
        throw ParseError("model file: coefficient count does not match basis");
    return make_diurnal(std::move(basis), std::move(fit));
}

inline nlohmann::json model_to_json(const ModelStructure& structure,
                                    const DrivingModelParams& params)
{
    return {
        {"schema", kModelSchema},
        {"n_states", structure.n_states},
        {"exit_prob", diurnal_to_json(params.exit_prob)},
        {"entry_dist", params.entry_dist},
        {"hidden_trans", params.hidden_trans},
        {"initial_dist", params.initial_dist},
    };
}

inline std::pair<ModelStructure, DrivingModelParams>
model_from_json(const nlohmann::json& j)
{
    if (j.value("schema", "") != kModelSchema)
        throw ParseError("model file: unsupported schema tag");
    ModelStructure structure{j.at("n_states").get<int>()};
    DrivingModelParams params;
    params.exit_prob = diurnal_from_json(j.at("exit_prob"));
    params.entry_dist = j.at("entry_dist").get<std::vector<double>>();
    params.hidden_trans =
        j.at("hidden_trans").get<std::vector<std::vector<double>>>();
    params.initial_dist = j.at("initial_dist").get<std::vector<double>>();

    const int n = structure.n_states;
    if (n < 2 || static_cast<int>(params.entry_dist.size()) != n - 1
        || static_cast<int>(params.hidden_trans.size()) != n - 1
        || static_cast<int>(params.initial_dist.size()) != n)
        throw ParseError("model file: inconsistent state dimensions");
    for (const auto& row : params.hidden_trans)
        if (static_cast<int>(row.size()) != n)
            throw ParseError("model file: bad hidden transition row width");
    return {structure, std::move(params)};
}

inline void save_model_file(const std::string& path,
                            const ModelStructure& structure,
                            const DrivingModelParams& params)
{
    std::ofstream out(path);
    if (!out) throw DataError("cannot write model file " + path);
    out << model_to_json(structure, params).dump(2) << '\n';
}

inline std::pair<ModelStructure, DrivingModelParams>
load_model_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw DataError("cannot read model file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("model file " + path + ": " + e.what());
    }
    return model_from_json(j);
}

} // namespace evmdp

#pragma once

// JSON model files:
//   {"version":1,"layers":[{"in":k,"out":p,"activation":"leaky_relu","slope":0.2,
//                           "weights":[[...],...],"bias":[...]}, ...]}

#include "ilo/generator.hpp"
#include "ilo/json_util.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace ilo {

inline constexpr int kModelFormatVersion = 1;

inline nlohmann::json model_to_json(const LayeredGenerator &g) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto &l : g.layers()) {
        nlohmann::json jl;
        jl["in"] = l.in_dim();
        jl["out"] = l.out_dim();
        jl["activation"] = std::string(to_string(l.activation));
        if (l.activation == Activation::leaky_relu) jl["slope"] = l.slope;
        nlohmann::json rows = nlohmann::json::array();
        for (Eigen::Index i = 0; i < l.weights.rows(); ++i) {
            nlohmann::json row = nlohmann::json::array();
            for (Eigen::Index j = 0; j < l.weights.cols(); ++j) row.push_back(l.weights(i, j));
            rows.push_back(std::move(row));
        }
        jl["weights"] = std::move(rows);
        jl["bias"] = std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size());
        layers.push_back(std::move(jl));
    }
    return {{"version", kModelFormatVersion}, {"layers", std::move(layers)}};
}

namespace detail {

inline const nlohmann::json &member(const nlohmann::json &obj, const char *key, const std::string &where) {
    auto it = obj.find(key);
    if (it == obj.end()) throw ParseError(where + "." + key, "missing field");
    return *it;
}

inline Eigen::Index positive_int(const nlohmann::json &j, const std::string &where) {
    if (!j.is_number_integer() || j.get<long long>() < 1) throw ParseError(where, "expected positive integer");
    return static_cast<Eigen::Index>(j.get<long long>());
}

inline double finite_number(const nlohmann::json &j, const std::string &where) {
    if (!j.is_number()) throw ParseError(where, "expected number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) throw ParseError(where, "non-finite value");
    return v;
}

} // namespace detail

inline LayeredGenerator model_from_json(const nlohmann::json &root) {
    if (!root.is_object()) throw ParseError("$", "model file must be a JSON object");
    for (auto it = root.begin(); it != root.end(); ++it)
        if (it.key() != "version" && it.key() != "layers") throw ParseError(it.key(), "unknown field");
    const auto &version = detail::member(root, "version", "$");
    if (!version.is_number_integer() || version.get<int>() != kModelFormatVersion)
        throw ParseError("version", "unsupported model format version " + version.dump());
    const auto &jlayers = detail::member(root, "layers", "$");
    if (!jlayers.is_array() || jlayers.empty()) throw ParseError("layers", "expected non-empty array");

    std::vector<Layer> layers;
    for (std::size_t li = 0; li < jlayers.size(); ++li) {
        const std::string where = "layers[" + std::to_string(li) + "]";
        const auto &jl = jlayers[li];
        if (!jl.is_object()) throw ParseError(where, "expected object");
        for (auto it = jl.begin(); it != jl.end(); ++it) {
            const auto &k = it.key();
            if (k != "in" && k != "out" && k != "activation" && k != "slope" && k != "weights" && k != "bias")
                throw ParseError(where + "." + k, "unknown field");
        }
        const Eigen::Index in = detail::positive_int(detail::member(jl, "in", where), where + ".in");
        const Eigen::Index out = detail::positive_int(detail::member(jl, "out", where), where + ".out");

        const auto &jact = detail::member(jl, "activation", where);
        if (!jact.is_string()) throw ParseError(where + ".activation", "expected string");
        auto act = parse_activation(jact.get<std::string>());
        if (!act) throw ParseError(where + ".activation", "unknown activation '" + jact.get<std::string>() + "'");

        double slope = kDefaultLeakySlope;
        if (auto it = jl.find("slope"); it != jl.end()) {
            slope = detail::finite_number(*it, where + ".slope");
            if (*act == Activation::leaky_relu && !(slope > 0.0 && slope < 1.0))
                throw ParseError(where + ".slope", "leaky_relu slope must lie in (0,1)");
        }

        const auto &jw = detail::member(jl, "weights", where);
        if (!jw.is_array() || static_cast<Eigen::Index>(jw.size()) != out)
            throw ParseError(where + ".weights", "expected " + std::to_string(out) + " rows");
        Mat w(out, in);
        for (Eigen::Index i = 0; i < out; ++i) {
            const auto &row = jw[static_cast<std::size_t>(i)];
            const std::string rw = where + ".weights[" + std::to_string(i) + "]";
            if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != in)
                throw ParseError(rw, "expected " + std::to_string(in) + " columns");
            for (Eigen::Index j = 0; j < in; ++j)
                w(i, j) = detail::finite_number(row[static_cast<std::size_t>(j)], rw + "[" + std::to_string(j) + "]");
        }

        const auto &jb = detail::member(jl, "bias", where);
        if (!jb.is_array() || static_cast<Eigen::Index>(jb.size()) != out)
            throw ParseError(where + ".bias", "expected " + std::to_string(out) + " entries");
        Vec b(out);
        for (Eigen::Index i = 0; i < out; ++i)
            b[i] = detail::finite_number(jb[static_cast<std::size_t>(i)], where + ".bias[" + std::to_string(i) + "]");

        if (li > 0 && layers.back().out_dim() != in)
            throw ParseError(where + ".in", "expected " + std::to_string(layers.back().out_dim()) +
                                                " to chain with previous layer, got " + std::to_string(in));
        layers.push_back(Layer{std::move(w), std::move(b), *act, slope});
    }
    return LayeredGenerator(std::move(layers));
}

inline void save_model(const LayeredGenerator &g, const std::filesystem::path &path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out << model_to_json(g).dump(1) << '\n';
    if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

inline LayeredGenerator load_model(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open model file '" + path.string() + "'");
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error &e) {
        throw ParseError("$", std::string("invalid JSON: ") + e.what());
    }
    return model_from_json(root);
}

} // namespace ilo

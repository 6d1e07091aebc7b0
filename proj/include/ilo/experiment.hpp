#pragma once

// Experiment configs and the drivers behind the CLI subcommands:
// gen-model, solve, bench, theory-table, srec-test.

#include "ilo/generator.hpp"
#include "ilo/json_util.hpp"
#include "ilo/model_io.hpp"
#include "ilo/operators.hpp"
#include "ilo/solver.hpp"
#include "ilo/theory.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

namespace ilo {

inline constexpr int kSchemaVersion = 1;

/// Problems with a config or a file it references. Maps to exit code 2.
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

enum class PlantKind { in_range, extended_range };

struct PlantSpec {
    PlantKind kind = PlantKind::in_range;
    std::optional<std::size_t> split; // defaults to the first solver split
    std::size_t sparsity = 3;
    std::optional<double> l1_budget;  // absolute ||v||_1
    double l1_fraction = 0.8;         // of the split's l1 radius, when no budget is given
    std::optional<double> radius;     // latent ball; defaults to the solver's r1
    std::uint64_t seed = 0;
};

struct SweepSpec {
    std::string param; // "m" or "keep_prob"
    std::vector<double> values;
};

struct TheoryGrid {
    std::vector<double> d, r, delta;                          // covering bounds
    std::vector<double> k, p, K, gamma, cx_delta;             // sample complexity
    double r1 = 1.0, L1 = 1.0, L2 = 1.0, C = 1.0;
    int chain_levels = 0;                                     // 0 disables the chain block
};

struct SrecSpec {
    double gamma = 0.8;
    std::size_t pairs = 200;
    std::size_t draws = 20;
    std::optional<std::size_t> split;
    double K = 2.0;
    double delta = 0.01;
    double C = 1.0;
    std::optional<double> r1;
    std::optional<long long> m;
    bool log4_inflation = false;
    std::size_t sparsity = 3;
};

struct ExperimentConfig {
    int schema_version = kSchemaVersion;
    std::uint64_t seed = 0;
    std::optional<std::string> model_path;
    std::optional<SynthesisSpec> synthesis;
    OperatorSpec op;
    NoiseSpec noise;
    std::uint64_t noise_seed = 0;
    PlantSpec plant;
    SolverConfig solver;
    std::size_t trials = 1;
    std::optional<SweepSpec> sweep;
    std::vector<Method> methods{Method::csgm, Method::ilo};
    std::optional<TheoryGrid> theory;
    std::optional<SrecSpec> srec;
    std::optional<std::string> output;
};

namespace detail {

inline std::uint64_t seed_or(JsonReader &r, std::uint64_t master, std::uint64_t tag) {
    return r.get_or<std::uint64_t>("seed", mix_seed(master, tag));
}

inline SynthesisSpec parse_synthesis(const nlohmann::json &j, const std::string &path, std::uint64_t master) {
    JsonReader r(j, path);
    SynthesisSpec s;
    if (auto dims = r.opt<std::vector<long long>>("dims")) {
        if (dims->size() < 2) throw ParseError(r.field("dims"), "need at least two entries");
        s.dims.clear();
        for (auto d : *dims) {
            if (d < 1) throw ParseError(r.field("dims"), "dims must be positive");
            s.dims.push_back(static_cast<Eigen::Index>(d));
        }
    }
    auto act = [&](const char *key, Activation fallback) {
        auto v = r.opt<std::string>(key);
        if (!v) return fallback;
        auto a = parse_activation(*v);
        if (!a) throw ParseError(r.field(key), "unknown activation '" + *v + "'");
        return *a;
    };
    s.activation = act("activation", s.activation);
    s.output_activation = act("output_activation", s.activation);
    s.slope = r.get_or<double>("slope", s.slope);
    if (!(s.slope > 0.0 && s.slope < 1.0)) throw ParseError(r.field("slope"), "must lie in (0,1)");
    s.layer_lipschitz = r.get_or<double>("layer_lipschitz", s.layer_lipschitz);
    if (!(s.layer_lipschitz > 0.0)) throw ParseError(r.field("layer_lipschitz"), "must be > 0");
    s.bias_std = r.get_or<double>("bias_std", s.bias_std);
    if (!(s.bias_std >= 0.0)) throw ParseError(r.field("bias_std"), "must be >= 0");
    s.seed = seed_or(r, master, 1);
    r.finish();
    return s;
}

inline nlohmann::json synthesis_to_json(const SynthesisSpec &s) {
    std::vector<long long> dims(s.dims.begin(), s.dims.end());
    return {{"dims", dims},
            {"activation", std::string(to_string(s.activation))},
            {"output_activation", std::string(to_string(s.output_activation))},
            {"slope", s.slope},
            {"layer_lipschitz", s.layer_lipschitz},
            {"bias_std", s.bias_std},
            {"seed", s.seed}};
}

inline OperatorSpec parse_operator(const nlohmann::json &j, const std::string &path, std::uint64_t master) {
    JsonReader r(j, path);
    OperatorSpec s;
    const auto kind = r.get<std::string>("kind");
    auto k = parse_operator_kind(kind);
    if (!k) throw ParseError(r.field("kind"), "unknown operator kind '" + kind + "'");
    s.kind = *k;
    s.seed = seed_or(r, master, 2);
    if (auto m = r.opt<long long>("m")) {
        if (*m < 1) throw ParseError(r.field("m"), "must be >= 1");
        s.m = static_cast<Eigen::Index>(*m);
    }
    s.keep_prob = r.opt<double>("keep_prob");
    if (s.keep_prob && !(*s.keep_prob > 0.0 && *s.keep_prob <= 1.0))
        throw ParseError(r.field("keep_prob"), "must lie in (0,1]");
    if (auto obs = r.opt<std::vector<long long>>("observed"))
        s.observed = std::vector<Eigen::Index>(obs->begin(), obs->end());
    if (auto f = r.opt<long long>("factor")) {
        if (*f < 1) throw ParseError(r.field("factor"), "must be >= 1");
        s.factor = static_cast<Eigen::Index>(*f);
    }
    if (auto rs = r.opt<std::string>("row_subset")) {
        if (*rs == "first") s.row_subset = RowSubset::first;
        else if (*rs == "random") s.row_subset = RowSubset::random;
        else throw ParseError(r.field("row_subset"), "expected 'first' or 'random'");
    }
    r.finish();
    if (s.kind == OperatorKind::mask && !s.keep_prob && !s.observed)
        throw ParseError(path, "mask operator needs 'keep_prob' or 'observed'");
    return s;
}

} // namespace detail

inline ExperimentConfig parse_experiment(const nlohmann::json &root) {
    JsonReader r(root, "");
    ExperimentConfig c;
    c.schema_version = r.get<int>("schema_version");
    if (c.schema_version != kSchemaVersion)
        throw ParseError("schema_version", "unsupported schema version " + std::to_string(c.schema_version));
    c.seed = r.get_or<std::uint64_t>("seed", 0);

    if (const auto *jm = r.raw_opt("model")) {
        JsonReader mr(*jm, "model");
        c.model_path = mr.opt<std::string>("path");
        if (const auto *js = mr.raw_opt("synthesize")) c.synthesis = detail::parse_synthesis(*js, "model.synthesize", c.seed);
        mr.finish();
        if (c.model_path.has_value() == c.synthesis.has_value())
            throw ParseError("model", "exactly one of 'path' or 'synthesize' is required");
    }

    if (const auto *jo = r.raw_opt("operator")) c.op = detail::parse_operator(*jo, "operator", c.seed);
    else c.op.seed = mix_seed(c.seed, 2);

    c.noise_seed = mix_seed(c.seed, 3);
    if (const auto *jn = r.raw_opt("noise")) {
        JsonReader nr(*jn, "noise");
        c.noise.sigma = nr.get_or<double>("sigma", 0.0);
        if (!(c.noise.sigma >= 0.0)) throw ParseError("noise.sigma", "must be >= 0");
        if (auto clip = nr.opt<std::vector<double>>("clip")) {
            if (clip->size() != 2 || !((*clip)[0] < (*clip)[1])) throw ParseError("noise.clip", "expected [lo, hi] with lo < hi");
            c.noise.clip = std::make_pair((*clip)[0], (*clip)[1]);
        }
        c.noise_seed = nr.get_or<std::uint64_t>("seed", c.noise_seed);
        nr.finish();
    }

    c.plant.seed = mix_seed(c.seed, 4);
    if (const auto *jp = r.raw_opt("plant")) {
        JsonReader pr(*jp, "plant");
        const auto kind = pr.get_or<std::string>("kind", "in_range");
        if (kind == "in_range") c.plant.kind = PlantKind::in_range;
        else if (kind == "extended_range") c.plant.kind = PlantKind::extended_range;
        else throw ParseError("plant.kind", "expected 'in_range' or 'extended_range'");
        c.plant.split = pr.opt<std::size_t>("split");
        c.plant.sparsity = pr.get_or<std::size_t>("sparsity", c.plant.sparsity);
        c.plant.l1_budget = pr.opt<double>("l1_budget");
        c.plant.l1_fraction = pr.get_or<double>("l1_fraction", c.plant.l1_fraction);
        c.plant.radius = pr.opt<double>("radius");
        c.plant.seed = pr.get_or<std::uint64_t>("seed", c.plant.seed);
        pr.finish();
        if (c.plant.l1_budget && !(*c.plant.l1_budget >= 0.0)) throw ParseError("plant.l1_budget", "must be >= 0");
        if (!(c.plant.l1_fraction >= 0.0)) throw ParseError("plant.l1_fraction", "must be >= 0");
        if (c.plant.radius && !(*c.plant.radius > 0.0)) throw ParseError("plant.radius", "must be > 0");
    }

    if (const auto *js = r.raw_opt("solver")) {
        nlohmann::json copy = *js;
        if (!copy.is_object()) throw ParseError("solver", "expected object");
        if (!copy.contains("seed")) copy["seed"] = mix_seed(c.seed, 5);
        c.solver = solver_config_from_json(copy, "solver");
    } else {
        c.solver.seed = mix_seed(c.seed, 5);
    }

    c.trials = r.get_or<std::size_t>("trials", c.trials);
    if (c.trials < 1) throw ParseError("trials", "must be >= 1");

    if (const auto *jw = r.raw_opt("sweep")) {
        JsonReader wr(*jw, "sweep");
        SweepSpec s;
        s.param = wr.get<std::string>("param");
        if (s.param != "m" && s.param != "keep_prob") throw ParseError("sweep.param", "expected 'm' or 'keep_prob'");
        s.values = wr.get<std::vector<double>>("values");
        if (s.values.empty()) throw ParseError("sweep.values", "expected non-empty array");
        for (double v : s.values) {
            if (s.param == "m" && !(v >= 1.0 && v == std::floor(v))) throw ParseError("sweep.values", "m values must be positive integers");
            if (s.param == "keep_prob" && !(v > 0.0 && v <= 1.0)) throw ParseError("sweep.values", "keep_prob values must lie in (0,1]");
        }
        wr.finish();
        c.sweep = std::move(s);
    }

    if (auto ms = r.opt<std::vector<std::string>>("methods")) {
        c.methods.clear();
        for (const auto &m : *ms) {
            if (m == "csgm") c.methods.push_back(Method::csgm);
            else if (m == "ilo") c.methods.push_back(Method::ilo);
            else throw ParseError("methods", "unknown method '" + m + "'");
        }
        if (c.methods.empty()) throw ParseError("methods", "expected at least one method");
    }

    if (const auto *jt = r.raw_opt("theory")) {
        JsonReader tr(*jt, "theory");
        TheoryGrid t;
        if (const auto *jb = tr.raw_opt("bounds")) {
            JsonReader br(*jb, "theory.bounds");
            t.d = br.get<std::vector<double>>("d");
            t.r = br.get<std::vector<double>>("r");
            t.delta = br.get<std::vector<double>>("delta");
            br.finish();
        }
        if (const auto *jc = tr.raw_opt("complexity")) {
            JsonReader cr(*jc, "theory.complexity");
            t.k = cr.get<std::vector<double>>("k");
            t.p = cr.get<std::vector<double>>("p");
            t.K = cr.get<std::vector<double>>("K");
            t.gamma = cr.get_or<std::vector<double>>("gamma", {0.8});
            t.cx_delta = cr.get<std::vector<double>>("delta");
            t.r1 = cr.get_or<double>("r1", t.r1);
            t.L1 = cr.get_or<double>("L1", t.L1);
            t.L2 = cr.get_or<double>("L2", t.L2);
            t.C = cr.get_or<double>("C", t.C);
            t.chain_levels = cr.get_or<int>("chain_levels", 0);
            cr.finish();
        }
        tr.finish();
        const bool bounds_empty = t.d.empty() || t.r.empty() || t.delta.empty();
        const bool cx_empty = t.k.empty() || t.p.empty() || t.K.empty() || t.gamma.empty() || t.cx_delta.empty();
        if (bounds_empty && cx_empty) throw ParseError("theory", "grid is empty");
        c.theory = std::move(t);
    }

    if (const auto *jr = r.raw_opt("srec")) {
        JsonReader sr(*jr, "srec");
        SrecSpec s;
        s.gamma = sr.get_or<double>("gamma", s.gamma);
        if (!(s.gamma > 0.0 && s.gamma < 1.0)) throw ParseError("srec.gamma", "must lie in (0,1)");
        s.pairs = sr.get_or<std::size_t>("pairs", s.pairs);
        s.draws = sr.get_or<std::size_t>("draws", s.draws);
        if (s.pairs < 1 || s.draws < 1) throw ParseError("srec", "pairs and draws must be >= 1");
        s.split = sr.opt<std::size_t>("split");
        s.K = sr.get_or<double>("K", s.K);
        s.delta = sr.get_or<double>("delta", s.delta);
        s.C = sr.get_or<double>("C", s.C);
        s.r1 = sr.opt<double>("r1");
        s.m = sr.opt<long long>("m");
        s.log4_inflation = sr.get_or<bool>("log4_inflation", s.log4_inflation);
        s.sparsity = sr.get_or<std::size_t>("sparsity", s.sparsity);
        sr.finish();
        c.srec = s;
    }

    c.output = r.opt<std::string>("output");
    r.finish();
    return c;
}

inline ExperimentConfig load_experiment(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error &e) {
        throw ParseError(path.string(), std::string("invalid JSON: ") + e.what());
    }
    return parse_experiment(root);
}

/// Resolved config echo: every seed is explicit, so the echo alone
/// regenerates the run.
inline nlohmann::json to_json(const ExperimentConfig &c) {
    nlohmann::json j{{"schema_version", c.schema_version}, {"seed", c.seed}};
    if (c.model_path) j["model"] = {{"path", *c.model_path}};
    if (c.synthesis) j["model"] = {{"synthesize", detail::synthesis_to_json(*c.synthesis)}};
    j["operator"] = to_json(c.op);
    nlohmann::json noise{{"sigma", c.noise.sigma}, {"seed", c.noise_seed}};
    if (c.noise.clip) noise["clip"] = {c.noise.clip->first, c.noise.clip->second};
    j["noise"] = std::move(noise);
    nlohmann::json plant{{"kind", c.plant.kind == PlantKind::in_range ? "in_range" : "extended_range"},
                         {"sparsity", c.plant.sparsity},
                         {"l1_fraction", c.plant.l1_fraction},
                         {"seed", c.plant.seed}};
    if (c.plant.split) plant["split"] = *c.plant.split;
    if (c.plant.l1_budget) plant["l1_budget"] = *c.plant.l1_budget;
    if (c.plant.radius) plant["radius"] = *c.plant.radius;
    j["plant"] = std::move(plant);
    j["solver"] = to_json(c.solver);
    j["trials"] = c.trials;
    if (c.sweep) j["sweep"] = {{"param", c.sweep->param}, {"values", c.sweep->values}};
    std::vector<std::string> methods;
    for (auto m : c.methods) methods.emplace_back(to_string(m));
    j["methods"] = methods;
    if (c.srec) {
        nlohmann::json s{{"gamma", c.srec->gamma}, {"pairs", c.srec->pairs}, {"draws", c.srec->draws},
                         {"K", c.srec->K},         {"delta", c.srec->delta}, {"C", c.srec->C},
                         {"log4_inflation", c.srec->log4_inflation}, {"sparsity", c.srec->sparsity}};
        if (c.srec->split) s["split"] = *c.srec->split;
        if (c.srec->r1) s["r1"] = *c.srec->r1;
        if (c.srec->m) s["m"] = *c.srec->m;
        j["srec"] = std::move(s);
    }
    return j;
}

inline LayeredGenerator resolve_model(const ExperimentConfig &c) {
    if (c.synthesis) return synthesize(*c.synthesis);
    if (!c.model_path) throw ConfigError("config has no 'model' section");
    if (!std::filesystem::exists(*c.model_path)) throw ConfigError("model file not found: '" + *c.model_path + "'");
    return load_model(*c.model_path);
}

// Planting ------------------------------------------------------------------

struct PlantedSignal {
    Vec signal;
    Vec latent;
    Vec deviation; // empty for in-range plants
    double oracle_error = 0.0;
};

inline std::size_t plant_split(const ExperimentConfig &c) {
    if (c.plant.split) return *c.plant.split;
    if (!c.solver.splits.empty()) return c.solver.splits.front();
    return 1;
}

/// l1 radius the solver uses at split `s`, or 0 when `s` is not a split.
inline double solver_radius_at(const SolverConfig &solver, std::size_t s) {
    for (std::size_t i = 0; i < solver.splits.size(); ++i)
        if (solver.splits[i] == s && i + 1 < solver.per_layer.size()) return solver.per_layer[i + 1].l1_radius;
    return 0.0;
}

inline PlantedSignal plant_signal(const ExperimentConfig &c, const LayeredGenerator &g, std::uint64_t seed) {
    Rng rng(seed);
    const double r1 = c.plant.radius.value_or(c.solver.resolved_input_radius(g.in_dim()));
    if (g.num_layers() < 2) {
        // No split exists; an in-range plant is all that makes sense.
        if (c.plant.kind == PlantKind::extended_range) throw ConfigError("extended_range plant needs at least two layers");
        Vec dir = randn(rng, g.in_dim(), 1.0);
        const double radius = r1 * std::pow(rng.uniform(), 1.0 / static_cast<double>(g.in_dim()));
        Vec z = project_l2(dir.normalized() * radius, BallSpec::l2_origin(g.in_dim(), r1));
        return {g.forward(z), z, Vec(), 0.0};
    }
    const std::size_t s = plant_split(c);
    if (s < 1 || s >= g.num_layers()) throw ConfigError("plant.split " + std::to_string(s) + " is not a valid split");
    const GeneratorSplit sp = split(g, s);
    double budget = 0.0;
    if (c.plant.kind == PlantKind::extended_range)
        budget = c.plant.l1_budget.value_or(c.plant.l1_fraction * solver_radius_at(c.solver, s));
    auto pt = theory::sample_extended_range(sp, r1, budget, c.plant.sparsity, rng);
    PlantedSignal out{std::move(pt.signal), std::move(pt.latent), Vec(), 0.0};
    if (c.plant.kind == PlantKind::extended_range) out.deviation = std::move(pt.deviation);
    return out;
}

// solve ---------------------------------------------------------------------

struct SolveOutput {
    nlohmann::json report;
    SolveResult result;
};

inline OperatorSpec operator_for(const ExperimentConfig &c, std::optional<double> sweep_value, std::uint64_t seed) {
    OperatorSpec spec = c.op;
    spec.seed = seed;
    if (sweep_value && c.sweep) {
        if (c.sweep->param == "m") spec.m = static_cast<Eigen::Index>(*sweep_value);
        else {
            spec.keep_prob = *sweep_value;
            spec.observed.reset();
        }
    }
    return spec;
}

inline void check_operator(const OperatorSpec &spec, Eigen::Index n) {
    if ((spec.kind == OperatorKind::gaussian || spec.kind == OperatorKind::circulant_signed) && spec.m < 1)
        throw ConfigError("operator.m is required for kind '" + std::string(to_string(spec.kind)) + "'");
    if (spec.kind == OperatorKind::circulant_signed && spec.m > n)
        throw ConfigError("operator.m = " + std::to_string(spec.m) + " exceeds n = " + std::to_string(n));
    if (spec.kind == OperatorKind::downsample && n % spec.factor != 0)
        throw ConfigError("operator.factor does not divide n");
}

/// One planted instance solved by `method`.
inline SolveOutput run_solve(const ExperimentConfig &c) {
    const LayeredGenerator g = resolve_model(c);
    if (c.solver.method == Method::ilo) validate_splits(g, c.solver.splits);
    check_operator(c.op, g.out_dim());
    const PlantedSignal plant = plant_signal(c, g, c.plant.seed);
    const MeasurementOperator op = build_operator(c.op, g.out_dim());
    Rng noise_rng(c.noise_seed);
    const Vec y = sense(op, plant.signal, c.noise, noise_rng);

    SolveOutput out;
    out.result = solve(g, op, y, c.solver);
    attach_truth(out.result.report, out.result.estimate, plant.signal);
    out.report = to_json(out.result.report);
    out.report["schema_version"] = kSchemaVersion;
    out.report["experiment"] = to_json(c);
    out.report["m"] = op.rows();
    out.report["n"] = op.cols();
    out.report["k"] = g.in_dim();
    return out;
}

// bench ---------------------------------------------------------------------

struct BenchRow {
    std::size_t trial = 0;
    Method method = Method::csgm;
    Eigen::Index m = 0, k = 0, p = 0, n = 0;
    std::optional<double> true_mse;
    double meas_mse = 0.0;
    std::size_t steps_total = 0;
    double seconds = 0.0;
    std::uint64_t seed = 0;
    double sweep_value = 0.0; // not part of the CSV row; used by the summary
};

struct BenchResult {
    std::vector<BenchRow> rows;
    std::string sweep_param;
};

inline const char *kBenchColumns = "trial,method,m,k,p,n,true_mse,meas_mse,steps_total,seconds,seed";

namespace detail {

inline std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

inline double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace detail

/// Paired trials: for each sweep value and trial both methods see the same
/// planted x, operator A, and noisy y.
inline BenchResult run_bench(const ExperimentConfig &c) {
    const LayeredGenerator g = resolve_model(c);
    BenchResult out;
    std::vector<std::optional<double>> values;
    if (c.sweep) {
        out.sweep_param = c.sweep->param;
        for (double v : c.sweep->values) values.emplace_back(v);
    } else {
        values.emplace_back(std::nullopt);
    }
    const bool wants_ilo = std::find(c.methods.begin(), c.methods.end(), Method::ilo) != c.methods.end();
    if (wants_ilo) validate_splits(g, c.solver.splits);
    const Eigen::Index p = !c.solver.splits.empty() && c.solver.splits.front() < g.num_layers()
                               ? g.layer(c.solver.splits.front() - 1).out_dim()
                               : g.in_dim();

    for (std::size_t vi = 0; vi < values.size(); ++vi) {
        for (std::size_t t = 0; t < c.trials; ++t) {
            const PlantedSignal plant = plant_signal(c, g, mix_seed(c.plant.seed, t));
            const OperatorSpec spec = operator_for(c, values[vi], mix_seed(c.op.seed, t));
            check_operator(spec, g.out_dim());
            const MeasurementOperator op = build_operator(spec, g.out_dim());
            Rng noise_rng(mix_seed(c.noise_seed, vi * 1000003ULL + t));
            const Vec y = sense(op, plant.signal, c.noise, noise_rng);
            SolverConfig sc = c.solver;
            sc.seed = mix_seed(c.solver.seed, t);
            for (Method method : c.methods) {
                sc.method = method;
                SolveResult r = solve(g, op, y, sc);
                attach_truth(r.report, r.estimate, plant.signal);
                BenchRow row;
                row.trial = t;
                row.method = method;
                row.m = op.rows();
                row.k = g.in_dim();
                row.p = p;
                row.n = op.cols();
                row.true_mse = r.report.true_mse;
                row.meas_mse = r.report.meas_mse;
                row.steps_total = r.report.steps_total;
                row.seconds = r.report.seconds;
                row.seed = sc.seed;
                row.sweep_value = values[vi].value_or(static_cast<double>(op.rows()));
                out.rows.push_back(row);
            }
        }
    }
    std::stable_sort(out.rows.begin(), out.rows.end(), [](const BenchRow &a, const BenchRow &b) {
        return std::tuple(a.m, a.trial, static_cast<int>(a.method)) < std::tuple(b.m, b.trial, static_cast<int>(b.method));
    });
    return out;
}

/// Per-(sweep value, method) medians.
struct BenchSummaryRow {
    double sweep_value = 0.0;
    Method method = Method::csgm;
    std::size_t trials = 0;
    double median_true_mse = 0.0;
    double median_meas_mse = 0.0;
};

inline std::vector<BenchSummaryRow> summarize(const BenchResult &b) {
    std::map<std::pair<double, int>, std::pair<std::vector<double>, std::vector<double>>> groups;
    for (const auto &r : b.rows) {
        auto &g = groups[{r.sweep_value, static_cast<int>(r.method)}];
        if (r.true_mse) g.first.push_back(*r.true_mse);
        g.second.push_back(r.meas_mse);
    }
    std::vector<BenchSummaryRow> out;
    for (const auto &[key, vals] : groups)
        out.push_back({key.first, static_cast<Method>(key.second), vals.second.size(), detail::median(vals.first),
                       detail::median(vals.second)});
    return out;
}

/// Rows block, blank line, summary block.
inline std::string bench_csv(const BenchResult &b) {
    std::ostringstream os;
    os << kBenchColumns << '\n';
    for (const auto &r : b.rows) {
        os << r.trial << ',' << to_string(r.method) << ',' << r.m << ',' << r.k << ',' << r.p << ',' << r.n << ','
           << (r.true_mse ? detail::fmt_double(*r.true_mse) : std::string()) << ',' << detail::fmt_double(r.meas_mse)
           << ',' << r.steps_total << ',' << detail::fmt_double(r.seconds) << ',' << r.seed << '\n';
    }
    os << "\n" << "sweep_param,sweep_value,method,trials,median_true_mse,median_meas_mse\n";
    const std::string param = b.sweep_param.empty() ? "m" : b.sweep_param;
    for (const auto &s : summarize(b)) {
        os << param << ',' << detail::fmt_double(s.sweep_value) << ',' << to_string(s.method) << ',' << s.trials << ','
           << detail::fmt_double(s.median_true_mse) << ',' << detail::fmt_double(s.median_meas_mse) << '\n';
    }
    return os.str();
}

// theory-table --------------------------------------------------------------

inline const char *kBoundsColumns = "d,r,delta,bound_maurey,bound_volumetric,bound_sudakov";
inline const char *kComplexityColumns = "k,p,K,gamma,delta,m,additive_error_term";
inline const char *kChainColumns = "k,p,K,level,scale,log_maurey,log_volumetric,cover";

/// Up to three CSV blocks separated by blank lines: covering bounds,
/// sample complexity with the additive error term, and the per-scale
/// chaining table.
inline std::string run_theory(const TheoryGrid &t) {
    using namespace theory;
    std::ostringstream os;
    bool first_block = true;
    auto block = [&](const char *header) {
        if (!first_block) os << '\n';
        first_block = false;
        os << header << '\n';
    };
    if (!t.d.empty() && !t.r.empty() && !t.delta.empty()) {
        block(kBoundsColumns);
        for (double d : t.d)
            for (double r : t.r)
                for (double delta : t.delta) {
                    os << detail::fmt_double(d) << ',' << detail::fmt_double(r) << ',' << detail::fmt_double(delta) << ','
                       << detail::fmt_double(bound_maurey(r, delta, d)) << ','
                       << detail::fmt_double(bound_volumetric(r, delta, d)) << ','
                       << (d >= 2.0 ? detail::fmt_double(bound_sudakov(r, delta, d)) : std::string()) << '\n';
                }
    }
    if (!t.k.empty() && !t.p.empty() && !t.K.empty() && !t.gamma.empty() && !t.cx_delta.empty()) {
        block(kComplexityColumns);
        std::vector<TheoryParams> valid;
        for (double k : t.k)
            for (double p : t.p)
                for (double K : t.K)
                    for (double gamma : t.gamma)
                        for (double delta : t.cx_delta) {
                            TheoryParams tp{k, p, 0.0, K, delta, gamma, t.r1, t.L1, t.L2, t.C};
                            try {
                                tp.validate();
                            } catch (const std::invalid_argument &) {
                                continue; // K > sqrt(p) and similar lie outside the valid range
                            }
                            valid.push_back(tp);
                            os << detail::fmt_double(k) << ',' << detail::fmt_double(p) << ',' << detail::fmt_double(K)
                               << ',' << detail::fmt_double(gamma) << ',' << detail::fmt_double(delta) << ','
                               << sample_complexity(tp).m << ',' << detail::fmt_double(additive_error_term(tp)) << '\n';
                        }
        if (t.chain_levels > 0) {
            block(kChainColumns);
            for (const auto &tp : valid)
                for (const auto &row : chain_table(tp, t.chain_levels))
                    os << detail::fmt_double(tp.k) << ',' << detail::fmt_double(tp.p) << ',' << detail::fmt_double(tp.K)
                       << ',' << row.level << ',' << detail::fmt_double(row.scale) << ','
                       << detail::fmt_double(row.log_maurey) << ',' << detail::fmt_double(row.log_volumetric) << ','
                       << (row.uses_maurey ? "maurey" : "volumetric") << '\n';
        }
    }
    return os.str();
}

// srec-test -----------------------------------------------------------------

struct SrecOutcome {
    std::vector<double> deltas;
    long long m = 0;
    long long m_theory = 0;
    bool m_capped = false;
    double additive_term = 0.0;
    nlohmann::json report;
};

/// Empirical S-REC delta over `draws` fresh operators of the configured
/// kind, each checked on `pairs` extended-range pairs.
inline SrecOutcome run_srec(const ExperimentConfig &c) {
    if (!c.srec) throw ConfigError("config has no 'srec' section");
    const SrecSpec &s = *c.srec;
    const LayeredGenerator g = resolve_model(c);
    const std::size_t split_at = s.split.value_or(plant_split(c));
    if (split_at < 1 || split_at >= g.num_layers()) throw ConfigError("srec.split is not a valid split");
    const GeneratorSplit sp = split(g, split_at);
    const LipschitzBounds L = lipschitz(g, split_at);

    theory::TheoryParams tp;
    tp.k = static_cast<double>(sp.k());
    tp.p = static_cast<double>(sp.p());
    tp.n = static_cast<double>(sp.n());
    tp.K = s.K;
    tp.delta = s.delta;
    tp.gamma = s.gamma;
    tp.r1 = s.r1.value_or(std::sqrt(tp.k));
    tp.L1 = L.prefix;
    tp.L2 = L.suffix;
    tp.C = s.C;
    try {
        tp.validate();
    } catch (const std::invalid_argument &e) {
        throw ConfigError(std::string("srec: ") + e.what());
    }

    SrecOutcome out;
    out.m_theory = theory::sample_complexity(tp).m;
    double m = s.m ? static_cast<double>(*s.m) : static_cast<double>(out.m_theory);
    if (s.log4_inflation) m *= std::pow(std::log(tp.n), 4.0);
    out.m = static_cast<long long>(std::ceil(m));
    if (c.op.kind == OperatorKind::circulant_signed && out.m > sp.n()) {
        out.m = sp.n();
        out.m_capped = true;
    }
    out.additive_term = theory::additive_error_term(tp);

    const auto sampler = theory::extended_range_sampler(sp, tp.r1, tp.r2(), s.sparsity);
    for (std::size_t d = 0; d < s.draws; ++d) {
        OperatorSpec spec = c.op;
        spec.seed = mix_seed(c.op.seed, d);
        spec.m = static_cast<Eigen::Index>(out.m);
        check_operator(spec, sp.n());
        const MeasurementOperator op = build_operator(spec, sp.n());
        Rng rng(mix_seed(c.seed, 0x5ec0 + d));
        out.deltas.push_back(theory::srec_check(op, sampler, s.gamma, s.pairs, rng));
    }
    std::vector<double> sorted = out.deltas;
    std::sort(sorted.begin(), sorted.end());
    out.report = {{"schema_version", kSchemaVersion},
                  {"kind", std::string(to_string(c.op.kind))},
                  {"m", out.m},
                  {"m_theory", out.m_theory},
                  {"m_capped", out.m_capped},
                  {"log4_inflation", s.log4_inflation},
                  {"gamma", s.gamma},
                  {"pairs", s.pairs},
                  {"draws", s.draws},
                  {"split", split_at},
                  {"k", sp.k()},
                  {"p", sp.p()},
                  {"n", sp.n()},
                  {"K", tp.K},
                  {"delta", tp.delta},
                  {"r1", tp.r1},
                  {"r2", tp.r2()},
                  {"L1", tp.L1},
                  {"L2", tp.L2},
                  {"C", tp.C},
                  {"empirical_delta", out.deltas},
                  {"min", sorted.front()},
                  {"median", detail::median(sorted)},
                  {"max", sorted.back()},
                  {"additive_term", out.additive_term},
                  {"check", "Monte-Carlo over sampled pairs; a necessary condition only"},
                  {"experiment", to_json(c)}};
    return out;
}

// gen-model -----------------------------------------------------------------

struct GenModelOutcome {
    LayeredGenerator model;
    LipschitzBounds bounds;
};

inline GenModelOutcome run_gen_model(const ExperimentConfig &c) {
    if (!c.synthesis) throw ConfigError("gen-model needs a 'model.synthesize' section");
    try {
        GenModelOutcome out{synthesize(*c.synthesis), {}};
        out.bounds = lipschitz(out.model);
        return out;
    } catch (const std::invalid_argument &e) {
        throw ConfigError(std::string("model.synthesize: ") + e.what());
    }
}

} // namespace ilo

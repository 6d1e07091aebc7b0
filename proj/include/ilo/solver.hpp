#pragma once

// CSGM and Intermediate Layer Optimization (ILO) for y = A G(z) + noise.
//
// CSGM runs projected gradient descent on the input code z^k inside the l2
// ball B(r1). ILO then walks down a list of split points: at each split the
// generator becomes G = G2 o G1 and the intermediate code z^p is optimized
// inside an l1 ball of radius r2 around the current anchor G1(z^k), followed
// by a projection back to the range of G1 and a fresh anchor. The best
// signal seen across every phase is returned.

#include "ilo/generator.hpp"
#include "ilo/json_util.hpp"
#include "ilo/operators.hpp"
#include "ilo/projections.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ilo {

enum class Method { csgm, ilo };
enum class OptimizerKind { adam, gd };

inline std::string_view to_string(Method m) { return m == Method::csgm ? "csgm" : "ilo"; }
inline std::string_view to_string(OptimizerKind o) { return o == OptimizerKind::adam ? "adam" : "gd"; }

/// Step budget, peak learning rate and l1 radius for one phase. Entry 0 of
/// SolverConfig::per_layer configures the CSGM phase, where the radius is
/// unused.
struct LayerSchedule {
    int steps = 300;
    double lr_max = 0.1;
    double l1_radius = 0.0;
};

struct SolverConfig {
    Method method = Method::ilo;
    std::vector<std::size_t> splits{2};
    std::optional<double> input_radius; // r1; defaults to sqrt(k)
    std::vector<LayerSchedule> per_layer{LayerSchedule{}, LayerSchedule{300, 0.05, 0.5}};
    int rounds = 1;
    int range_projection_steps = 200;
    std::optional<double> range_projection_lr; // defaults to the phase lr_max
    int restarts = 1;
    double sna_sigma = 0.0;
    OptimizerKind optimizer = OptimizerKind::adam;
    std::uint64_t seed = 0;
    std::optional<Vec> initial_latent; // overrides the first restart's draw

    double resolved_input_radius(Eigen::Index k) const {
        return input_radius ? *input_radius : std::sqrt(static_cast<double>(k));
    }
};

/// Linear warm-up over the first 10% of steps, cosine decay afterwards.
inline double lr_schedule(int step, int total_steps, double lr_max) {
    if (total_steps < 1 || step < 0 || step >= total_steps)
        throw std::out_of_range("lr_schedule: step outside [0, total_steps)");
    const int ramp = std::max(1, (total_steps + 9) / 10);
    if (step < ramp) return lr_max * static_cast<double>(step + 1) / static_cast<double>(ramp);
    const double progress = static_cast<double>(step - ramp) / static_cast<double>(total_steps - ramp);
    return lr_max * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Adam (beta1 = 0.9, beta2 = 0.999, eps = 1e-8) or plain gradient descent.
/// Moments persist across projections.
class Optimizer {
  public:
    Optimizer(OptimizerKind kind, Eigen::Index dim) : kind_(kind), m_(Vec::Zero(dim)), v_(Vec::Zero(dim)) {}

    void step(Vec &x, const Vec &grad, double lr) {
        if (kind_ == OptimizerKind::gd) {
            x -= lr * grad;
            return;
        }
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        ++t_;
        m_ = b1 * m_ + (1.0 - b1) * grad;
        v_ = b2 * v_ + (1.0 - b2) * grad.cwiseAbs2();
        const double c1 = 1.0 - std::pow(b1, t_);
        const double c2 = 1.0 - std::pow(b2, t_);
        x.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps);
    }

  private:
    OptimizerKind kind_;
    Vec m_, v_;
    int t_ = 0;
};

struct MeasurementLoss {
    double value = 0.0;       // ||A(G(z) + sna*eps) - y||^2, the optimized objective
    double clean_value = 0.0; // ||A G(z) - y||^2
    Vec gradient;             // d value / dz for the sampled eps
    Vec signal;               // G(z)
};

/// Loss and exact gradient 2 J^T A^T (A(G(z) + sna*eps) - y). A fresh eps
/// is drawn from `rng` whenever sna_sigma > 0.
inline MeasurementLoss measurement_loss(const LayeredGenerator &g, const Vec &z, const MeasurementOperator &op,
                                        const Vec &y, double sna_sigma, Rng &rng) {
    require_dim(y.size(), op.rows(), "measurement_loss y");
    require_dim(g.out_dim(), op.cols(), "measurement_loss generator/operator");
    ForwardCache cache;
    MeasurementLoss out;
    out.signal = g.forward(z, cache);
    const Vec clean_residual = op.apply(out.signal) - y;
    out.clean_value = clean_residual.squaredNorm();
    Vec residual = clean_residual;
    if (sna_sigma > 0.0) residual = op.apply(out.signal + randn(rng, out.signal.size(), sna_sigma)) - y;
    out.value = residual.squaredNorm();
    out.gradient = g.vjp(cache, 2.0 * op.adjoint(residual));
    return out;
}

struct PhaseMarker {
    std::string name;
    std::size_t start = 0; // index into the loss trace
    std::size_t layer = 0; // split index; 0 for the CSGM phase
};

struct RecoveryReport {
    Method method = Method::csgm;
    std::vector<double> loss_trace; // clean measurement loss of every evaluated iterate
    std::vector<PhaseMarker> phases;
    double best_loss = std::numeric_limits<double>::infinity();
    double meas_mse = 0.0; // best_loss / m
    std::optional<double> true_mse;
    std::size_t steps_total = 0;
    double seconds = 0.0;
    std::uint64_t seed = 0;
    SolverConfig config;
};

struct SolveResult {
    Vec estimate;  // recovered signal
    Vec latent;    // code at the deepest layer that produced the estimate
    Vec input_code; // best CSGM input code
    RecoveryReport report;
};

/// ||x - estimate||^2 / n.
inline void attach_truth(RecoveryReport &report, const Vec &estimate, const Vec &truth) {
    require_dim(truth.size(), estimate.size(), "attach_truth");
    report.true_mse = (truth - estimate).squaredNorm() / static_cast<double>(truth.size());
}

namespace detail {

/// Global best-iterate record shared by every phase of one solve.
struct BestTracker {
    double loss = std::numeric_limits<double>::infinity();
    Vec signal;
    Vec code;
    std::vector<double> *trace = nullptr;

    bool offer(double value, const Vec &candidate_code, const Vec &candidate_signal) {
        if (trace) trace->push_back(value);
        if (value < loss) {
            loss = value;
            code = candidate_code;
            signal = candidate_signal;
            return true;
        }
        return false;
    }
};

inline double clean_loss(const LayeredGenerator &g, const Vec &z, const MeasurementOperator &op, const Vec &y,
                         Vec *signal_out = nullptr) {
    Vec s = g.forward(z);
    const double v = (op.apply(s) - y).squaredNorm();
    if (signal_out) *signal_out = std::move(s);
    return v;
}

} // namespace detail

/// Minimize ||G1(z) - target||^2 over z in `ball` by projected descent from
/// `init`; returns the best iterate.
inline Vec project_to_range(const LayeredGenerator &prefix, const Vec &target, const Vec &init, const BallSpec &ball,
                            int steps, double lr_max, OptimizerKind kind, std::size_t *steps_taken = nullptr) {
    require_dim(target.size(), prefix.out_dim(), "project_to_range target");
    Vec z = project(init, ball);
    Vec best = z;
    double best_loss = std::numeric_limits<double>::infinity();
    Optimizer opt(kind, z.size());
    ForwardCache cache;
    for (int step = 0; step <= steps; ++step) {
        const Vec residual = prefix.forward(z, cache) - target;
        const double loss = residual.squaredNorm();
        if (loss < best_loss) {
            best_loss = loss;
            best = z;
        }
        if (step == steps) break;
        opt.step(z, prefix.vjp(cache, 2.0 * residual), lr_schedule(step, steps, lr_max));
        z = project(z, ball);
    }
    if (steps_taken) *steps_taken += static_cast<std::size_t>(steps);
    return best;
}

/// Projected gradient descent on z^k inside B2(r1) over `restarts`
/// independent initializations.
inline SolveResult csgm_solve(const LayeredGenerator &g, const MeasurementOperator &op, const Vec &y,
                              const SolverConfig &config) {
    if (config.per_layer.empty()) throw std::invalid_argument("csgm_solve: per_layer[0] is required");
    if (config.restarts < 1) throw std::invalid_argument("csgm_solve: restarts must be >= 1");
    const auto t0 = std::chrono::steady_clock::now();
    const LayerSchedule &sched = config.per_layer[0];
    if (sched.steps < 0) throw std::invalid_argument("csgm_solve: steps must be >= 0");

    SolveResult result;
    RecoveryReport &report = result.report;
    report.method = Method::csgm;
    report.seed = config.seed;
    report.config = config;

    Rng rng(config.seed);
    const Eigen::Index k = g.in_dim();
    const BallSpec ball = BallSpec::l2_origin(k, config.resolved_input_radius(k));
    detail::BestTracker best;
    best.trace = &report.loss_trace;

    for (int restart = 0; restart < config.restarts; ++restart) {
        report.phases.push_back({"csgm/restart" + std::to_string(restart), report.loss_trace.size(), 0});
        Vec z = (restart == 0 && config.initial_latent) ? *config.initial_latent : randn(rng, k, 1.0);
        require_dim(z.size(), k, "csgm_solve initial latent");
        z = project_l2(z, ball);
        Optimizer opt(config.optimizer, k);
        for (int step = 0; step < sched.steps; ++step) {
            MeasurementLoss ml = measurement_loss(g, z, op, y, config.sna_sigma, rng);
            best.offer(ml.clean_value, z, ml.signal);
            opt.step(z, ml.gradient, lr_schedule(step, sched.steps, sched.lr_max));
            z = project_l2(z, ball);
            ++report.steps_total;
        }
        Vec signal;
        const double final_loss = detail::clean_loss(g, z, op, y, &signal);
        best.offer(final_loss, z, signal);
    }

    report.best_loss = best.loss;
    report.meas_mse = best.loss / static_cast<double>(op.rows());
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.estimate = best.signal;
    result.latent = best.code;
    result.input_code = best.code;
    return result;
}

/// Solver state at one split. `z_k` lives in the prefix input space (the
/// original latent space, or the previous split's code space).
struct LatentState {
    Vec z_k;
    Vec z_p_anchor; // G1(z_k)
    Vec z_p;        // latest l1-ball solution
    Vec best_z_p;
    Vec best_anchor; // anchor whose ball contains best_z_p
    double best_loss = std::numeric_limits<double>::infinity();
};

inline LatentState make_state(const GeneratorSplit &split, const Vec &z_k, const MeasurementOperator &op,
                              const Vec &y) {
    LatentState s;
    s.z_k = z_k;
    s.z_p_anchor = split.prefix.forward(z_k);
    s.z_p = s.z_p_anchor;
    s.best_z_p = s.z_p_anchor;
    s.best_anchor = s.z_p_anchor;
    s.best_loss = detail::clean_loss(split.suffix, s.z_p, op, y);
    return s;
}

/// Settings shared by every round at one split.
struct RoundOptions {
    BallSpec input_ball;       // constraint on z_k
    int range_projection_steps = 200;
    std::optional<double> range_projection_lr;
    double sna_sigma = 0.0;
    OptimizerKind optimizer = OptimizerKind::adam;
};

struct RoundSinks {
    std::vector<double> *trace = nullptr;
    detail::BestTracker *global = nullptr;
    std::size_t *steps_total = nullptr;
};

/// `rounds` iterations of: l1-ball PGD on z^p around the anchor, range
/// projection of the result onto G1(input_ball), re-anchoring.
inline LatentState ilo_round(const GeneratorSplit &split, LatentState state, const MeasurementOperator &op,
                             const Vec &y, const LayerSchedule &layer, int rounds, const RoundOptions &opts, Rng &rng,
                             RoundSinks sinks = {}) {
    require_dim(state.z_k.size(), split.k(), "ilo_round z_k");
    require_dim(state.z_p_anchor.size(), split.p(), "ilo_round anchor");
    require_dim(state.z_p.size(), split.p(), "ilo_round z_p");
    require_dim(opts.input_ball.center.size(), split.k(), "ilo_round input ball");
    if (rounds < 0) throw std::invalid_argument("ilo_round: rounds must be >= 0");
    if (layer.steps < 0) throw std::invalid_argument("ilo_round: steps must be >= 0");
    if (layer.l1_radius < 0.0) throw std::invalid_argument("ilo_round: l1 radius must be >= 0");

    auto offer = [&](double value, const Vec &zp, const Vec &signal, const Vec &anchor) {
        if (sinks.global) sinks.global->offer(value, zp, signal);
        else if (sinks.trace) sinks.trace->push_back(value);
        if (value < state.best_loss) {
            state.best_loss = value;
            state.best_z_p = zp;
            state.best_anchor = anchor;
        }
    };

    for (int t = 0; t < rounds; ++t) {
        const BallSpec ball = BallSpec::l1(state.z_p_anchor, layer.l1_radius);
        Vec zp = state.z_p_anchor;
        Vec round_best = zp;
        double round_best_loss = std::numeric_limits<double>::infinity();
        Optimizer opt(opts.optimizer, zp.size());
        for (int step = 0; step <= layer.steps; ++step) {
            if (step == layer.steps) {
                Vec signal;
                const double v = detail::clean_loss(split.suffix, zp, op, y, &signal);
                offer(v, zp, signal, state.z_p_anchor);
                if (v < round_best_loss) {
                    round_best_loss = v;
                    round_best = zp;
                }
                break;
            }
            MeasurementLoss ml = measurement_loss(split.suffix, zp, op, y, opts.sna_sigma, rng);
            offer(ml.clean_value, zp, ml.signal, state.z_p_anchor);
            if (ml.clean_value < round_best_loss) {
                round_best_loss = ml.clean_value;
                round_best = zp;
            }
            opt.step(zp, ml.gradient, lr_schedule(step, layer.steps, layer.lr_max));
            zp = project_l1(zp, ball);
            if (sinks.steps_total) ++*sinks.steps_total;
        }
        state.z_p = round_best;

        state.z_k = project_to_range(split.prefix, state.z_p, state.z_k, opts.input_ball, opts.range_projection_steps,
                                     opts.range_projection_lr.value_or(layer.lr_max), opts.optimizer,
                                     sinks.steps_total);
        state.z_p_anchor = split.prefix.forward(state.z_k);
        Vec signal;
        const double v = detail::clean_loss(split.suffix, state.z_p_anchor, op, y, &signal);
        offer(v, state.z_p_anchor, signal, state.z_p_anchor);
    }
    return state;
}

inline void validate_splits(const LayeredGenerator &g, const std::vector<std::size_t> &splits) {
    for (std::size_t i = 0; i < splits.size(); ++i) {
        if (splits[i] < 1 || splits[i] >= g.num_layers())
            throw std::invalid_argument("split index " + std::to_string(splits[i]) + " outside [1, " +
                                        std::to_string(g.num_layers() - 1) + "]");
        if (i > 0 && splits[i] <= splits[i - 1])
            throw std::invalid_argument("split indices must be strictly increasing");
    }
}

/// CSGM followed by one ILO stage per split index. Stage i optimizes the
/// code after layer splits[i]; its input code is the previous stage's best
/// code, constrained to that stage's l1 ball.
inline SolveResult ilo_solve(const LayeredGenerator &g, const std::vector<std::size_t> &splits,
                             const MeasurementOperator &op, const Vec &y, const SolverConfig &config) {
    validate_splits(g, splits);
    if (config.per_layer.size() < splits.size() + 1)
        throw std::invalid_argument("ilo_solve: per_layer needs " + std::to_string(splits.size() + 1) + " entries");
    const auto t0 = std::chrono::steady_clock::now();

    SolveResult result = csgm_solve(g, op, y, config);
    if (splits.empty()) return result;

    RecoveryReport &report = result.report;
    report.method = Method::ilo;
    detail::BestTracker best;
    best.loss = report.best_loss;
    best.signal = result.estimate;
    best.code = result.latent;
    best.trace = &report.loss_trace;

    // Stage RNG is independent of the CSGM stream.
    Rng rng(mix_seed(config.seed, 0x110));
    const Eigen::Index k = g.in_dim();
    Vec input = result.input_code;
    BallSpec input_ball = BallSpec::l2_origin(k, config.resolved_input_radius(k));
    std::size_t base = 0;

    for (std::size_t i = 0; i < splits.size(); ++i) {
        const std::size_t s = splits[i];
        GeneratorSplit stage{g.slice(base, s), g.slice(s, g.num_layers()), s};
        report.phases.push_back({"ilo/layer" + std::to_string(s), report.loss_trace.size(), s});

        LatentState state = make_state(stage, input, op, y);
        {
            Vec signal = stage.suffix.forward(state.z_p);
            best.offer(state.best_loss, state.z_p, signal);
        }
        RoundOptions opts{input_ball, config.range_projection_steps, config.range_projection_lr, config.sna_sigma,
                          config.optimizer};
        state = ilo_round(stage, std::move(state), op, y, config.per_layer[i + 1], config.rounds, opts, rng,
                          RoundSinks{&report.loss_trace, &best, &report.steps_total});

        input = state.best_z_p;
        input_ball = BallSpec::l1(state.best_anchor, config.per_layer[i + 1].l1_radius);
        base = s;
    }

    report.best_loss = best.loss;
    report.meas_mse = best.loss / static_cast<double>(op.rows());
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.estimate = best.signal;
    result.latent = best.code;
    return result;
}

inline SolveResult solve(const LayeredGenerator &g, const MeasurementOperator &op, const Vec &y,
                         const SolverConfig &config) {
    if (config.method == Method::csgm) return csgm_solve(g, op, y, config);
    return ilo_solve(g, config.splits, op, y, config);
}

// JSON ----------------------------------------------------------------------

inline nlohmann::json to_json(const SolverConfig &c) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto &l : c.per_layer) layers.push_back({{"steps", l.steps}, {"lr_max", l.lr_max}, {"l1_radius", l.l1_radius}});
    nlohmann::json j{{"method", std::string(to_string(c.method))},
                     {"splits", c.splits},
                     {"per_layer", std::move(layers)},
                     {"rounds", c.rounds},
                     {"range_projection_steps", c.range_projection_steps},
                     {"restarts", c.restarts},
                     {"sna_sigma", c.sna_sigma},
                     {"optimizer", std::string(to_string(c.optimizer))},
                     {"seed", c.seed}};
    if (c.input_radius) j["input_radius"] = *c.input_radius;
    if (c.range_projection_lr) j["range_projection_lr"] = *c.range_projection_lr;
    if (c.initial_latent)
        j["initial_latent"] = std::vector<double>(c.initial_latent->data(), c.initial_latent->data() + c.initial_latent->size());
    return j;
}

inline SolverConfig solver_config_from_json(const nlohmann::json &j, const std::string &path = "solver") {
    JsonReader r(j, path);
    SolverConfig c;
    if (auto m = r.opt<std::string>("method")) {
        if (*m == "csgm") c.method = Method::csgm;
        else if (*m == "ilo") c.method = Method::ilo;
        else throw ParseError(r.field("method"), "expected 'csgm' or 'ilo'");
    }
    if (auto s = r.opt<std::vector<std::size_t>>("splits")) c.splits = *s;
    c.input_radius = r.opt<double>("input_radius");
    if (c.input_radius && !(*c.input_radius > 0.0)) throw ParseError(r.field("input_radius"), "must be > 0");
    if (const auto *pl = r.raw_opt("per_layer")) {
        if (!pl->is_array() || pl->empty()) throw ParseError(r.field("per_layer"), "expected non-empty array");
        c.per_layer.clear();
        for (std::size_t i = 0; i < pl->size(); ++i) {
            JsonReader lr((*pl)[i], r.field("per_layer") + "[" + std::to_string(i) + "]");
            LayerSchedule l;
            l.steps = lr.get_or<int>("steps", l.steps);
            l.lr_max = lr.get_or<double>("lr_max", l.lr_max);
            l.l1_radius = lr.get_or<double>("l1_radius", l.l1_radius);
            lr.finish();
            if (l.steps < 0) throw ParseError(lr.field("steps"), "must be >= 0");
            if (!(l.lr_max >= 0.0)) throw ParseError(lr.field("lr_max"), "must be >= 0");
            if (!(l.l1_radius >= 0.0)) throw ParseError(lr.field("l1_radius"), "must be >= 0");
            c.per_layer.push_back(l);
        }
    }
    c.rounds = r.get_or<int>("rounds", c.rounds);
    if (c.rounds < 0) throw ParseError(r.field("rounds"), "must be >= 0");
    c.range_projection_steps = r.get_or<int>("range_projection_steps", c.range_projection_steps);
    if (c.range_projection_steps < 0) throw ParseError(r.field("range_projection_steps"), "must be >= 0");
    c.range_projection_lr = r.opt<double>("range_projection_lr");
    c.restarts = r.get_or<int>("restarts", c.restarts);
    if (c.restarts < 1) throw ParseError(r.field("restarts"), "must be >= 1");
    c.sna_sigma = r.get_or<double>("sna_sigma", c.sna_sigma);
    if (!(c.sna_sigma >= 0.0)) throw ParseError(r.field("sna_sigma"), "must be >= 0");
    if (auto o = r.opt<std::string>("optimizer")) {
        if (*o == "adam") c.optimizer = OptimizerKind::adam;
        else if (*o == "gd") c.optimizer = OptimizerKind::gd;
        else throw ParseError(r.field("optimizer"), "expected 'adam' or 'gd'");
    }
    c.seed = r.get_or<std::uint64_t>("seed", c.seed);
    if (auto init = r.opt<std::vector<double>>("initial_latent"))
        c.initial_latent = Eigen::Map<const Vec>(init->data(), static_cast<Eigen::Index>(init->size()));
    r.finish();
    if (c.method == Method::ilo && c.per_layer.size() < c.splits.size() + 1)
        throw ParseError(r.field("per_layer"), "needs one entry per split plus one for the CSGM phase");
    return c;
}

/// Report JSON. Timing lives only under "seconds" so reruns can be
/// compared after dropping that key.
inline nlohmann::json to_json(const RecoveryReport &r) {
    nlohmann::json phases = nlohmann::json::array();
    for (const auto &p : r.phases) phases.push_back({{"name", p.name}, {"start", p.start}, {"layer", p.layer}});
    nlohmann::json j{{"method", std::string(to_string(r.method))},
                     {"seed", r.seed},
                     {"config", to_json(r.config)},
                     {"best_loss", r.best_loss},
                     {"meas_mse", r.meas_mse},
                     {"steps_total", r.steps_total},
                     {"phases", std::move(phases)},
                     {"loss_trace", r.loss_trace},
                     {"seconds", r.seconds}};
    j["true_mse"] = r.true_mse ? nlohmann::json(*r.true_mse) : nlohmann::json(nullptr);
    return j;
}

} // namespace ilo

#pragma once

// Covering-number bounds for l1 balls, Maurey nets, the sample-complexity
// and error-bound expressions for extended-range recovery, and Monte-Carlo
// S-REC certification.

#include "ilo/generator.hpp"
#include "ilo/numerics.hpp"
#include "ilo/operators.hpp"
#include "ilo/projections.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

namespace ilo::theory {

/// log N(delta, B1^d(r), l2) <= (r^2 / delta^2) log(2d + 1)
inline double bound_maurey(double r, double delta, double d) {
    if (!(r > 0.0) || !(delta > 0.0) || !(d >= 1.0)) throw std::invalid_argument("bound_maurey: need r, delta > 0, d >= 1");
    return (r * r) / (delta * delta) * std::log(2.0 * d + 1.0);
}

/// log N(delta, B1^d(r), l2) <= d log(4r / delta), floored at 0.
inline double bound_volumetric(double r, double delta, double d) {
    if (!(r > 0.0) || !(delta > 0.0) || !(d >= 1.0)) throw std::invalid_argument("bound_volumetric: need r, delta > 0, d >= 1");
    if (delta >= 4.0 * r) return 0.0;
    return d * std::log(4.0 * r / delta);
}

/// log N(delta, B1^d(r), l2) <= 16 (r^2 / delta^2) log d
inline double bound_sudakov(double r, double delta, double d) {
    if (!(r > 0.0) || !(delta > 0.0)) throw std::invalid_argument("bound_sudakov: need r, delta > 0");
    if (!(d >= 2.0)) throw std::invalid_argument("bound_sudakov: d must be >= 2");
    return 16.0 * (r * r) / (delta * delta) * std::log(d);
}

/// Number of atoms averaged by a Maurey net: ceil(r^2 / delta^2).
inline int maurey_atoms(double r, double delta) {
    const double t = (r * r) / (delta * delta);
    // Guard against r/delta ratios like 1/sqrt(0.5) landing a hair above an integer.
    const double rounded = std::round(t);
    return std::max(1, static_cast<int>(std::abs(t - rounded) < 1e-9 ? rounded : std::ceil(t)));
}

/// Net for B1^d(r) made of averages of t atoms from {+-r e_i, 0}.
/// Enumerated points are stored as integer atom counts c in Z^d with
/// sum |c_i| <= t; the point is (r / t) c, so deduplication is exact.
struct MaureyNet {
    std::size_t d = 0;
    double r = 0.0;
    double delta = 0.0;
    int t = 1;
    std::vector<Vec> points;

    std::size_t size() const { return points.size(); }

    /// Smallest l2 distance from `x` to the net.
    double distance(const Vec &x) const {
        double best = std::numeric_limits<double>::infinity();
        for (const auto &p : points) best = std::min(best, (p - x).squaredNorm());
        return std::sqrt(best);
    }
};

inline constexpr double kMaureyEnumerationBudget = 1e6;

/// All distinct averages of t atoms. Requires (2d+1)^t <= 1e6.
inline MaureyNet maurey_net_enumerate(std::size_t d, double r, double delta) {
    if (d < 1 || !(r > 0.0) || !(delta > 0.0)) throw std::invalid_argument("maurey_net_enumerate: invalid arguments");
    MaureyNet net{d, r, delta, maurey_atoms(r, delta), {}};
    const double count = std::pow(2.0 * static_cast<double>(d) + 1.0, net.t);
    if (count > kMaureyEnumerationBudget)
        throw std::length_error("maurey_net_enumerate: (2d+1)^t = " + std::to_string(count) + " exceeds budget 1e6");

    // A multiset of t atoms is determined by its signed counts c with
    // sum |c_i| <= t (the remainder are zero atoms), so enumerate those.
    std::vector<int> c(d, 0);
    const double scale = r / static_cast<double>(net.t);
    std::function<void(std::size_t, int)> rec = [&](std::size_t i, int remaining) {
        if (i == d) {
            Vec p(static_cast<Eigen::Index>(d));
            for (std::size_t j = 0; j < d; ++j) p[static_cast<Eigen::Index>(j)] = scale * c[j];
            net.points.push_back(std::move(p));
            return;
        }
        for (int v = -remaining; v <= remaining; ++v) {
            c[i] = v;
            rec(i + 1, remaining - std::abs(v));
        }
        c[i] = 0;
    };
    rec(0, net.t);
    return net;
}

/// One draw of the empirical-method average for target x in B1^d(r):
/// each atom is sgn(x_i) r e_i with probability |x_i| / r, else 0.
inline Vec maurey_sample(const Vec &x, double r, int t, Rng &rng) {
    if (t < 1) throw std::invalid_argument("maurey_sample: t must be >= 1");
    const double l1 = x.lpNorm<1>();
    if (l1 > r * (1.0 + 1e-12)) throw std::invalid_argument("maurey_sample: target outside B1(r)");
    Vec avg = Vec::Zero(x.size());
    for (int a = 0; a < t; ++a) {
        double u = rng.uniform() * r;
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double w = std::abs(x[i]);
            if (u < w) {
                avg[i] += x[i] > 0.0 ? r : -r;
                break;
            }
            u -= w;
        }
    }
    return avg / static_cast<double>(t);
}

/// Sampling mode of a Maurey net: `count` empirical averages for one target.
inline MaureyNet maurey_net_sample(const Vec &target, double r, double delta, std::size_t count, Rng &rng) {
    MaureyNet net{static_cast<std::size_t>(target.size()), r, delta, maurey_atoms(r, delta), {}};
    net.points.reserve(count);
    for (std::size_t i = 0; i < count; ++i) net.points.push_back(maurey_sample(target, r, net.t, rng));
    return net;
}

/// Uniform sample from B1^d(r): normalized exponential spacings with random signs.
inline Vec sample_l1_ball(Eigen::Index d, double r, Rng &rng) {
    Vec e(d);
    double total = rng.exponential();
    for (Eigen::Index i = 0; i < d; ++i) {
        e[i] = rng.exponential();
        total += e[i];
    }
    for (Eigen::Index i = 0; i < d; ++i) e[i] = rng.rademacher() * r * e[i] / total;
    return e;
}

struct TheoryParams {
    double k = 8;
    double p = 32;
    double n = 128;
    double K = 2.0;
    double delta = 0.01;
    double gamma = 0.8;
    double r1 = 1.0;
    double L1 = 1.0;
    double L2 = 1.0;
    double C = 1.0;

    /// r2 = K delta / L2
    double r2() const { return K * delta / L2; }

    void validate() const {
        if (!(k >= 1 && p >= 1)) throw std::invalid_argument("TheoryParams: k, p must be >= 1");
        if (!(K > 1.0) || K > std::sqrt(p) * (1.0 + 1e-12)) throw std::invalid_argument("TheoryParams: need 1 < K <= sqrt(p)");
        if (!(delta > 0.0)) throw std::invalid_argument("TheoryParams: delta must be > 0");
        if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("TheoryParams: gamma must lie in (0,1)");
        if (!(r1 > 0.0 && L1 > 0.0 && L2 > 0.0 && C > 0.0))
            throw std::invalid_argument("TheoryParams: r1, L1, L2, C must be > 0");
    }
};

struct SampleComplexity {
    long long m = 0;
    bool log_term_floored = false; // L1 L2 r1 <= delta
};

/// ceil( C / (1-gamma)^2 * (k log(L1 L2 r1 / delta) + K^2 log p) )
inline SampleComplexity sample_complexity(const TheoryParams &tp) {
    tp.validate();
    SampleComplexity out;
    double range_term = tp.k * std::log(tp.L1 * tp.L2 * tp.r1 / tp.delta);
    if (tp.L1 * tp.L2 * tp.r1 <= tp.delta) {
        range_term = 0.0;
        out.log_term_floored = true;
    }
    const double ball_term = tp.K * tp.K * std::log(tp.p);
    const double scale = tp.C / ((1.0 - tp.gamma) * (1.0 - tp.gamma));
    out.m = static_cast<long long>(std::ceil(scale * (range_term + ball_term)));
    return out;
}

/// delta * (log(4K) / gamma) * (sqrt(p)/K) * log(sqrt(p)/K), floored at 0.
inline double additive_error_term(const TheoryParams &tp) {
    const double ratio = std::sqrt(tp.p) / tp.K;
    const double v = tp.delta * (std::log(4.0 * tp.K) / tp.gamma) * ratio * std::log(ratio);
    return std::max(0.0, v);
}

/// (1 + 4/gamma) * oracle_error + additive_error_term(tp)
inline double error_bound_rhs(const TheoryParams &tp, double oracle_error) {
    if (!(oracle_error >= 0.0)) throw std::invalid_argument("error_bound_rhs: oracle_error must be >= 0");
    return (1.0 + 4.0 / tp.gamma) * oracle_error + additive_error_term(tp);
}

/// One row of the chaining table: scale delta_i = delta / 2^i and the
/// per-scale log-size of both covers of B1^p(r2).
struct ChainRow {
    int level = 0;
    double scale = 0.0;
    double log_maurey = 0.0;
    double log_volumetric = 0.0;
    bool uses_maurey = false; // Maurey below the switch level log(sqrt(p)/K)
};

inline std::vector<ChainRow> chain_table(const TheoryParams &tp, int levels) {
    tp.validate();
    std::vector<ChainRow> rows;
    const double switch_level = std::log2(std::sqrt(tp.p) / tp.K);
    const double r2 = tp.r2();
    for (int i = 0; i < levels; ++i) {
        ChainRow row;
        row.level = i;
        row.scale = tp.delta / std::pow(2.0, i);
        row.log_maurey = bound_maurey(r2, row.scale, tp.p);
        row.log_volumetric = bound_volumetric(r2, row.scale, tp.p);
        row.uses_maurey = static_cast<double>(i) < switch_level;
        rows.push_back(row);
    }
    return rows;
}

/// An extended-range point with the planted pieces that produced it.
struct PlantedPoint {
    Vec signal;     // G2(G1(z) + v)
    Vec latent;     // z in B2^k(r1)
    Vec deviation;  // v with ||v||_1 <= budget
    Vec intermediate; // G1(z) + v
};

/// z uniform in B2^k(r1); v s-sparse with uniform support, Dirichlet(1)
/// magnitudes, random signs, and ||v||_1 = l1_budget.
inline PlantedPoint sample_extended_range(const GeneratorSplit &split, double r1, double l1_budget,
                                          std::size_t sparsity, Rng &rng) {
    if (!(r1 > 0.0) || !(l1_budget >= 0.0)) throw std::invalid_argument("sample_extended_range: invalid radii");
    const Eigen::Index k = split.k(), p = split.p();
    PlantedPoint out;
    Vec dir = randn(rng, k, 1.0);
    while (dir.norm() == 0.0) dir = randn(rng, k, 1.0);
    const double radius = r1 * std::pow(rng.uniform(), 1.0 / static_cast<double>(k));
    out.latent = project_l2(dir.normalized() * radius, BallSpec::l2_origin(k, r1));

    out.deviation = Vec::Zero(p);
    const auto s = std::min<std::size_t>(sparsity, static_cast<std::size_t>(p));
    if (l1_budget > 0.0 && s > 0) {
        std::vector<Eigen::Index> idx(static_cast<std::size_t>(p));
        for (Eigen::Index i = 0; i < p; ++i) idx[static_cast<std::size_t>(i)] = i;
        for (std::size_t i = 0; i < s; ++i) {
            const auto j = i + rng.uniform_index(idx.size() - i);
            std::swap(idx[i], idx[j]);
        }
        std::vector<double> w(s);
        double total = 0.0;
        for (auto &wi : w) total += (wi = rng.exponential());
        for (std::size_t i = 0; i < s; ++i) out.deviation[idx[i]] = rng.rademacher() * l1_budget * w[i] / total;
        const double l1 = out.deviation.lpNorm<1>();
        if (l1 > l1_budget) out.deviation *= l1_budget / l1;
    }
    out.intermediate = split.prefix.forward(out.latent) + out.deviation;
    out.signal = split.suffix.forward(out.intermediate);
    return out;
}

/// Sampler of extended-range signals, r2 = budget of the l1 ball.
inline std::function<Vec(Rng &)> extended_range_sampler(const GeneratorSplit &split, double r1, double r2,
                                                        std::size_t sparsity = 3) {
    return [split, r1, r2, sparsity](Rng &rng) { return sample_extended_range(split, r1, r2, sparsity, rng).signal; };
}

/// Smallest delta with ||A(x1 - x2)|| >= gamma ||x1 - x2|| - delta on
/// `pairs` sampled pairs. A necessary-condition check only.
inline double srec_check(const MeasurementOperator &op, const std::function<Vec(Rng &)> &sampler, double gamma,
                         std::size_t pairs, Rng &rng) {
    if (pairs < 1) throw std::invalid_argument("srec_check: pairs must be >= 1");
    double worst = 0.0;
    for (std::size_t i = 0; i < pairs; ++i) {
        const Vec a = sampler(rng);
        const Vec b = sampler(rng);
        const Vec diff = a - b;
        worst = std::max(worst, gamma * diff.norm() - op.apply(diff).norm());
    }
    return worst;
}

} // namespace ilo::theory

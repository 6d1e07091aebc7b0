#pragma once

// Euclidean projections onto l2 balls, spheres and anchored l1 balls.

#include "ilo/numerics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace ilo {

namespace detail {

// Points that round-trip through the anchor shift by a few ulps still count
// as feasible, which keeps every projection exactly idempotent.
inline double feasibility_slack(const Vec &center, double radius, double offset) {
    const double scale = radius + center.lpNorm<Eigen::Infinity>() * static_cast<double>(center.size()) + offset;
    return 16.0 * std::numeric_limits<double>::epsilon() * scale;
}

} // namespace detail

enum class BallNorm { l1, l2 };

struct BallSpec {
    Vec center;
    double radius = 0.0;
    BallNorm norm = BallNorm::l2;

    static BallSpec l2(Vec center, double radius) { return {std::move(center), radius, BallNorm::l2}; }
    static BallSpec l1(Vec center, double radius) { return {std::move(center), radius, BallNorm::l1}; }
    static BallSpec l2_origin(Eigen::Index dim, double radius) { return l2(Vec::Zero(dim), radius); }

    /// Distance from the center in the ball's own norm.
    double offset_norm(const Vec &v) const {
        require_dim(v.size(), center.size(), "BallSpec");
        return norm == BallNorm::l1 ? (v - center).lpNorm<1>() : (v - center).norm();
    }

    bool contains(const Vec &v, double slack = 0.0) const { return offset_norm(v) <= radius + slack; }
};

inline Vec project_l2(const Vec &v, const BallSpec &ball) {
    require_dim(v.size(), ball.center.size(), "project_l2");
    if (ball.radius < 0.0) throw std::invalid_argument("project_l2: negative radius");
    const Vec d = v - ball.center;
    const double nd = d.norm();
    if (nd <= ball.radius + detail::feasibility_slack(ball.center, ball.radius, nd)) return v;
    return ball.center + (ball.radius / nd) * d;
}

/// Projection onto {u : ||u - c||_1 <= r} by the sort-and-threshold method
/// (Duchi et al. 2008). Ties in magnitude are ordered by index.
inline Vec project_l1(const Vec &v, const BallSpec &ball) {
    require_dim(v.size(), ball.center.size(), "project_l1");
    const double r = ball.radius;
    if (r < 0.0) throw std::invalid_argument("project_l1: negative radius");
    if (r == 0.0) return ball.center;

    const Vec d = v - ball.center;
    const double l1 = d.lpNorm<1>();
    if (l1 <= r + detail::feasibility_slack(ball.center, r, l1)) return v;

    const auto n = static_cast<std::size_t>(d.size());
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::abs(d[static_cast<Eigen::Index>(a)]) > std::abs(d[static_cast<Eigen::Index>(b)]);
    });

    double cumulative = 0.0;
    double theta = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const double mag = std::abs(d[static_cast<Eigen::Index>(order[j])]);
        cumulative += mag;
        const double candidate = (cumulative - r) / static_cast<double>(j + 1);
        if (mag > candidate) theta = candidate;
        else break;
    }

    Vec out(d.size());
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        const double shrunk = std::max(std::abs(d[i]) - theta, 0.0);
        out[i] = std::copysign(shrunk, d[i]);
    }
    // Rounding can leave the shrunk offset a few ulps outside the ball.
    const double excess = out.lpNorm<1>();
    if (excess > r) out *= r / excess;
    return ball.center + out;
}

inline Vec project(const Vec &v, const BallSpec &ball) {
    return ball.norm == BallNorm::l1 ? project_l1(v, ball) : project_l2(v, ball);
}

/// radius * v / ||v||; the zero vector maps to radius * e_1.
inline Vec project_sphere(const Vec &v, double radius) {
    if (!(radius > 0.0)) throw std::invalid_argument("project_sphere: radius must be > 0");
    if (v.size() < 1) throw DimensionError("project_sphere: empty vector");
    const double nv = v.norm();
    if (nv == 0.0) {
        Vec e = Vec::Zero(v.size());
        e[0] = radius;
        return e;
    }
    if (nv == radius) return v;
    return (radius / nv) * v;
}

} // namespace ilo

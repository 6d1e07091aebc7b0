#pragma once

// Linear measurement operators y = A x with exact adjoints.

#include "ilo/numerics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace ilo {

enum class OperatorKind { mask, gaussian, circulant_signed, downsample, identity };

inline std::string_view to_string(OperatorKind k) {
    switch (k) {
    case OperatorKind::mask: return "mask";
    case OperatorKind::gaussian: return "gaussian";
    case OperatorKind::circulant_signed: return "circulant_signed";
    case OperatorKind::downsample: return "downsample";
    case OperatorKind::identity: return "identity";
    }
    return "identity";
}

inline std::optional<OperatorKind> parse_operator_kind(std::string_view s) {
    if (s == "mask" || s == "random_mask") return OperatorKind::mask;
    if (s == "gaussian") return OperatorKind::gaussian;
    if (s == "circulant_signed") return OperatorKind::circulant_signed;
    if (s == "downsample") return OperatorKind::downsample;
    if (s == "identity") return OperatorKind::identity;
    return std::nullopt;
}

namespace ops {

struct Identity {
    Eigen::Index n;
};

struct Mask {
    Eigen::Index n;
    std::vector<Eigen::Index> observed;
};

struct Dense {
    Mat a;
};

/// rows(row_subset) of F * D where F has `first_row` as its first row and
/// each later row is its cyclic shift to the right; D = diag(signs).
struct CirculantSigned {
    Vec first_row;
    Vec signs;
    std::vector<Eigen::Index> rows;
    CircularConvolver forward_kernel; // reversed first row: F x = conv(rev, x)
    CircularConvolver adjoint_kernel; // first row itself:  F^T y = conv(g, y)
};

struct Downsample {
    Eigen::Index n;
    Eigen::Index factor;
};

} // namespace ops

class MeasurementOperator {
  public:
    using Payload = std::variant<ops::Identity, ops::Mask, ops::Dense, ops::CirculantSigned, ops::Downsample>;

    explicit MeasurementOperator(Payload payload) : payload_(std::move(payload)) {}

    OperatorKind kind() const {
        return std::visit(
            [](const auto &p) {
                using T = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<T, ops::Identity>) return OperatorKind::identity;
                else if constexpr (std::is_same_v<T, ops::Mask>) return OperatorKind::mask;
                else if constexpr (std::is_same_v<T, ops::Dense>) return OperatorKind::gaussian;
                else if constexpr (std::is_same_v<T, ops::CirculantSigned>) return OperatorKind::circulant_signed;
                else return OperatorKind::downsample;
            },
            payload_);
    }

    Eigen::Index rows() const {
        return std::visit(
            [](const auto &p) -> Eigen::Index {
                using T = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<T, ops::Identity>) return p.n;
                else if constexpr (std::is_same_v<T, ops::Mask>) return static_cast<Eigen::Index>(p.observed.size());
                else if constexpr (std::is_same_v<T, ops::Dense>) return p.a.rows();
                else if constexpr (std::is_same_v<T, ops::CirculantSigned>) return static_cast<Eigen::Index>(p.rows.size());
                else return p.n / p.factor;
            },
            payload_);
    }

    Eigen::Index cols() const {
        return std::visit(
            [](const auto &p) -> Eigen::Index {
                using T = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<T, ops::Dense>) return p.a.cols();
                else if constexpr (std::is_same_v<T, ops::CirculantSigned>) return p.first_row.size();
                else return p.n;
            },
            payload_);
    }

    Eigen::Index m() const { return rows(); }
    Eigen::Index n() const { return cols(); }

    Vec apply(const Vec &x) const {
        require_dim(x.size(), cols(), "operator apply");
        return std::visit(
            [&](const auto &p) -> Vec {
                using T = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<T, ops::Identity>) {
                    return x;
                } else if constexpr (std::is_same_v<T, ops::Mask>) {
                    Vec y(static_cast<Eigen::Index>(p.observed.size()));
                    for (std::size_t i = 0; i < p.observed.size(); ++i) y[static_cast<Eigen::Index>(i)] = x[p.observed[i]];
                    return y;
                } else if constexpr (std::is_same_v<T, ops::Dense>) {
                    return p.a * x;
                } else if constexpr (std::is_same_v<T, ops::CirculantSigned>) {
                    const Vec full = p.forward_kernel.apply(x.cwiseProduct(p.signs));
                    Vec y(static_cast<Eigen::Index>(p.rows.size()));
                    for (std::size_t i = 0; i < p.rows.size(); ++i) y[static_cast<Eigen::Index>(i)] = full[p.rows[i]];
                    return y;
                } else {
                    const Eigen::Index out = p.n / p.factor;
                    Vec y(out);
                    for (Eigen::Index i = 0; i < out; ++i)
                        y[i] = x.segment(i * p.factor, p.factor).sum() / static_cast<double>(p.factor);
                    return y;
                }
            },
            payload_);
    }

    Vec adjoint(const Vec &y) const {
        require_dim(y.size(), rows(), "operator adjoint");
        return std::visit(
            [&](const auto &p) -> Vec {
                using T = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<T, ops::Identity>) {
                    return y;
                } else if constexpr (std::is_same_v<T, ops::Mask>) {
                    Vec x = Vec::Zero(p.n);
                    for (std::size_t i = 0; i < p.observed.size(); ++i) x[p.observed[i]] = y[static_cast<Eigen::Index>(i)];
                    return x;
                } else if constexpr (std::is_same_v<T, ops::Dense>) {
                    return p.a.transpose() * y;
                } else if constexpr (std::is_same_v<T, ops::CirculantSigned>) {
                    Vec scattered = Vec::Zero(p.first_row.size());
                    for (std::size_t i = 0; i < p.rows.size(); ++i) scattered[p.rows[i]] += y[static_cast<Eigen::Index>(i)];
                    return p.adjoint_kernel.apply(scattered).cwiseProduct(p.signs);
                } else {
                    Vec x(p.n);
                    const double w = 1.0 / static_cast<double>(p.factor);
                    for (Eigen::Index i = 0; i < y.size(); ++i) x.segment(i * p.factor, p.factor).setConstant(w * y[i]);
                    return x;
                }
            },
            payload_);
    }

    /// Explicit matrix, column by column. Intended for small n.
    Mat to_dense() const {
        Mat out(rows(), cols());
        for (Eigen::Index j = 0; j < cols(); ++j) out.col(j) = apply(Vec::Unit(cols(), j));
        return out;
    }

    const Payload &payload() const { return payload_; }

  private:
    Payload payload_;
};

inline MeasurementOperator make_identity(Eigen::Index n) {
    if (n < 1) throw std::invalid_argument("make_identity: n must be >= 1");
    return MeasurementOperator(ops::Identity{n});
}

inline MeasurementOperator make_mask(Eigen::Index n, std::vector<Eigen::Index> observed) {
    if (n < 1) throw std::invalid_argument("make_mask: n must be >= 1");
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    for (auto i : observed) {
        if (i < 0 || i >= n) throw std::invalid_argument("make_mask: index " + std::to_string(i) + " outside [0, n)");
        if (seen[static_cast<std::size_t>(i)]) throw std::invalid_argument("make_mask: duplicate index " + std::to_string(i));
        seen[static_cast<std::size_t>(i)] = 1;
    }
    return MeasurementOperator(ops::Mask{n, std::move(observed)});
}

/// Keeps each index independently with probability keep_prob; an empty draw
/// is redrawn.
inline MeasurementOperator make_random_mask(Rng &rng, Eigen::Index n, double keep_prob) {
    if (!(keep_prob > 0.0 && keep_prob <= 1.0)) throw std::invalid_argument("make_random_mask: keep_prob must lie in (0,1]");
    if (n < 1) throw std::invalid_argument("make_random_mask: n must be >= 1");
    std::vector<Eigen::Index> kept;
    while (kept.empty()) {
        for (Eigen::Index i = 0; i < n; ++i)
            if (keep_prob == 1.0 || rng.uniform() < keep_prob) kept.push_back(i);
    }
    return MeasurementOperator(ops::Mask{n, std::move(kept)});
}

/// i.i.d. N(0, 1/m) entries.
inline MeasurementOperator make_gaussian(Rng &rng, Eigen::Index m, Eigen::Index n) {
    if (m < 1 || n < 1) throw std::invalid_argument("make_gaussian: m, n must be >= 1");
    return MeasurementOperator(ops::Dense{randn(rng, m, n, 1.0 / std::sqrt(static_cast<double>(m)))});
}

inline MeasurementOperator make_dense(Mat a) {
    if (a.rows() < 1 || a.cols() < 1) throw std::invalid_argument("make_dense: empty matrix");
    return MeasurementOperator(ops::Dense{std::move(a)});
}

/// Circulant-signed operator from explicit parts.
inline MeasurementOperator make_circulant_signed(Vec first_row, Vec signs, std::vector<Eigen::Index> rows) {
    const Eigen::Index n = first_row.size();
    if (n < 1) throw std::invalid_argument("make_circulant_signed: empty generating vector");
    require_dim(signs.size(), n, "make_circulant_signed signs");
    if (rows.empty() || static_cast<Eigen::Index>(rows.size()) > n)
        throw std::invalid_argument("make_circulant_signed: need 1 <= m <= n rows");
    for (auto r : rows)
        if (r < 0 || r >= n) throw std::invalid_argument("make_circulant_signed: row index out of range");
    Vec reversed(n);
    for (Eigen::Index k = 0; k < n; ++k) reversed[k] = first_row[(n - k) % n];
    CircularConvolver fwd(reversed);
    CircularConvolver adj(first_row);
    return MeasurementOperator(ops::CirculantSigned{std::move(first_row), std::move(signs), std::move(rows),
                                                    std::move(fwd), std::move(adj)});
}

enum class RowSubset { first, random };

/// g ~ N(0, 1/m) i.i.d., uniform random signs, m rows (first m by default).
inline MeasurementOperator make_circulant_signed(Rng &rng, Eigen::Index m, Eigen::Index n,
                                                 RowSubset subset = RowSubset::first) {
    if (m < 1 || n < 1) throw std::invalid_argument("make_circulant_signed: m, n must be >= 1");
    if (m > n) throw std::invalid_argument("make_circulant_signed: m = " + std::to_string(m) + " exceeds n = " + std::to_string(n));
    Vec g = randn(rng, n, 1.0 / std::sqrt(static_cast<double>(m)));
    Vec signs(n);
    for (Eigen::Index i = 0; i < n; ++i) signs[i] = rng.rademacher();
    std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) rows[static_cast<std::size_t>(i)] = i;
    if (subset == RowSubset::random) {
        // Partial Fisher-Yates; the chosen rows are kept in ascending order.
        for (Eigen::Index i = 0; i < m; ++i) {
            const auto j = static_cast<Eigen::Index>(i + static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::size_t>(n - i))));
            std::swap(rows[static_cast<std::size_t>(i)], rows[static_cast<std::size_t>(j)]);
        }
        rows.resize(static_cast<std::size_t>(m));
        std::sort(rows.begin(), rows.end());
    } else {
        rows.resize(static_cast<std::size_t>(m));
    }
    return make_circulant_signed(std::move(g), std::move(signs), std::move(rows));
}

/// Non-overlapping box average of width `factor`.
inline MeasurementOperator make_downsample(Eigen::Index n, Eigen::Index factor) {
    if (n < 1 || factor < 1) throw std::invalid_argument("make_downsample: n and factor must be >= 1");
    if (n % factor != 0)
        throw std::invalid_argument("make_downsample: factor " + std::to_string(factor) + " does not divide n = " + std::to_string(n));
    return MeasurementOperator(ops::Downsample{n, factor});
}

struct NoiseSpec {
    double sigma = 0.0;
    std::optional<std::pair<double, double>> clip;

    void validate() const {
        if (!(sigma >= 0.0)) throw std::invalid_argument("NoiseSpec: sigma must be >= 0");
        if (clip && !(clip->first < clip->second)) throw std::invalid_argument("NoiseSpec: clip requires lo < hi");
    }
};

/// y = A x + sigma * N(0, I), optionally clipped.
inline Vec sense(const MeasurementOperator &op, const Vec &x, const NoiseSpec &noise, Rng &rng) {
    noise.validate();
    Vec y = op.apply(x);
    if (noise.sigma > 0.0) y += randn(rng, y.size(), noise.sigma);
    if (noise.clip) y = y.cwiseMax(noise.clip->first).cwiseMin(noise.clip->second);
    return y;
}

/// Serializable recipe that fully determines an operator.
struct OperatorSpec {
    OperatorKind kind = OperatorKind::identity;
    Eigen::Index m = 0; // gaussian, circulant_signed
    std::uint64_t seed = 0;
    std::optional<double> keep_prob;                  // random mask
    std::optional<std::vector<Eigen::Index>> observed; // explicit mask
    Eigen::Index factor = 1;                          // downsample
    RowSubset row_subset = RowSubset::first;          // circulant_signed
};

inline MeasurementOperator build_operator(const OperatorSpec &spec, Eigen::Index n) {
    Rng rng(spec.seed);
    switch (spec.kind) {
    case OperatorKind::identity: return make_identity(n);
    case OperatorKind::mask:
        if (spec.observed) return make_mask(n, *spec.observed);
        if (!spec.keep_prob) throw std::invalid_argument("mask operator needs 'observed' or 'keep_prob'");
        return make_random_mask(rng, n, *spec.keep_prob);
    case OperatorKind::gaussian: return make_gaussian(rng, spec.m, n);
    case OperatorKind::circulant_signed: return make_circulant_signed(rng, spec.m, n, spec.row_subset);
    case OperatorKind::downsample: return make_downsample(n, spec.factor);
    }
    throw std::invalid_argument("unknown operator kind");
}

inline nlohmann::json to_json(const OperatorSpec &spec) {
    nlohmann::json j;
    j["kind"] = std::string(to_string(spec.kind));
    j["seed"] = spec.seed;
    switch (spec.kind) {
    case OperatorKind::gaussian:
        if (spec.m > 0) j["m"] = spec.m;
        break;
    case OperatorKind::circulant_signed:
        if (spec.m > 0) j["m"] = spec.m;
        j["row_subset"] = spec.row_subset == RowSubset::first ? "first" : "random";
        break;
    case OperatorKind::mask:
        if (spec.observed) j["observed"] = *spec.observed;
        if (spec.keep_prob) j["keep_prob"] = *spec.keep_prob;
        break;
    case OperatorKind::downsample: j["factor"] = spec.factor; break;
    case OperatorKind::identity: break;
    }
    return j;
}

} // namespace ilo

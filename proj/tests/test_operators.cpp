#include "catch_amalgamated.hpp"

#include "ilo/operators.hpp"
#include "oracles.hpp"

using namespace ilo;
using Catch::Matchers::WithinAbs;

namespace {

std::vector<MeasurementOperator> operator_zoo(Rng &rng, Eigen::Index n) {
    std::vector<MeasurementOperator> ops;
    ops.push_back(make_identity(n));
    ops.push_back(make_random_mask(rng, n, 0.4));
    ops.push_back(make_gaussian(rng, n / 2 + 1, n));
    ops.push_back(make_circulant_signed(rng, n / 2 + 1, n, RowSubset::random));
    ops.push_back(make_circulant_signed(rng, n, n));
    ops.push_back(make_downsample(n, 4));
    return ops;
}

Mat dense_fd(const Vec &g, const Vec &signs, const std::vector<Eigen::Index> &rows) {
    const Mat fd = oracle::circulant_first_row(g) * signs.asDiagonal();
    Mat out(static_cast<Eigen::Index>(rows.size()), g.size());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = fd.row(rows[i]);
    return out;
}

} // namespace

TEST_CASE("full mask is the identity") {
    std::vector<Eigen::Index> all{0, 1, 2, 3, 4};
    const auto op = make_mask(5, all);
    const Vec x = Vec::LinSpaced(5, -2, 2);
    CHECK(op.apply(x) == x);
    CHECK(op.adjoint(x) == x);
}

TEST_CASE("mask selects and scatters") {
    const auto op = make_mask(4, {0, 2});
    const Vec y = op.apply(Vec{{1.0, 2.0, 3.0, 4.0}});
    CHECK(y == Vec{{1.0, 3.0}});
    CHECK(op.adjoint(Vec{{5.0, 6.0}}) == Vec{{5.0, 0.0, 6.0, 0.0}});
    CHECK(op.rows() == 2);
    CHECK(op.cols() == 4);
}

TEST_CASE("mask rejects bad indices") {
    CHECK_THROWS_AS(make_mask(3, {0, 3}), std::invalid_argument);
    CHECK_THROWS_AS(make_mask(3, {1, 1}), std::invalid_argument);
}

TEST_CASE("random mask with keep_prob 1 keeps everything") {
    Rng rng(1);
    const auto op = make_random_mask(rng, 9, 1.0);
    CHECK(op.rows() == 9);
    const Vec x = Vec::LinSpaced(9, 0, 8);
    CHECK(op.apply(x) == x);
}

TEST_CASE("random mask keep count is binomial") {
    Rng rng(7);
    const auto op = make_random_mask(rng, 10000, 0.01);
    const double sd = std::sqrt(10000 * 0.01 * 0.99);
    CHECK(std::abs(static_cast<double>(op.rows()) - 100.0) <= 3.0 * sd);
}

TEST_CASE("random mask is deterministic per seed") {
    Rng a(5), b(5);
    CHECK(make_random_mask(a, 200, 0.3).to_dense() == make_random_mask(b, 200, 0.3).to_dense());
}

TEST_CASE("gaussian entries have variance 1/m") {
    Rng rng(8);
    const Eigen::Index m = 250, n = 400;
    const Mat a = make_gaussian(rng, m, n).to_dense();
    const double mean = a.mean();
    const double var = (a.array() - mean).square().sum() / static_cast<double>(a.size() - 1);
    CHECK(std::abs(var * m - 1.0) < 0.05);
}

TEST_CASE("gaussian operator is isotropic on average") {
    Rng rng(9);
    Vec x = randn(rng, 30, 1.0);
    x.normalize();
    double total = 0.0;
    for (int i = 0; i < 200; ++i) total += make_gaussian(rng, 20, 30).apply(x).squaredNorm();
    CHECK(std::abs(total / 200.0 - 1.0) < 0.1);
}

TEST_CASE("gaussian operator is deterministic per seed") {
    Rng a(3), b(3);
    CHECK(make_gaussian(a, 16, 16).to_dense() == make_gaussian(b, 16, 16).to_dense());
}

TEST_CASE("circulant-signed matches the dense F D construction") {
    Rng rng(10);
    for (Eigen::Index n = 1; n <= 64; ++n) {
        for (auto subset : {RowSubset::first, RowSubset::random}) {
            const Eigen::Index m = 1 + static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::size_t>(n)));
            const auto op = make_circulant_signed(rng, m, n, subset);
            const auto &p = std::get<ops::CirculantSigned>(op.payload());
            const Mat want = dense_fd(p.first_row, p.signs, p.rows);
            INFO("n = " << n << " m = " << m);
            CHECK((op.to_dense() - want).norm() <= 1e-10 * want.norm());
            const Vec x = randn(rng, n, 1.0);
            CHECK((op.apply(x) - want * x).norm() <= 1e-10 * (want * x).norm() + 1e-300);
        }
    }
}

TEST_CASE("circulant-signed with e1 and unit signs is the identity") {
    Vec g = Vec::Zero(6);
    g[0] = 1.0;
    const auto op = make_circulant_signed(g, Vec::Ones(6), {0, 1, 2, 3, 4, 5});
    Rng rng(1);
    const Vec x = randn(rng, 6, 1.0);
    CHECK((op.apply(x) - x).norm() < 1e-14);
    CHECK((op.adjoint(x) - x).norm() < 1e-14);
}

TEST_CASE("circulant-signed row 0 is the signed first row") {
    Rng rng(2);
    const Vec g = randn(rng, 5, 1.0);
    const Vec s{{1.0, -1.0, 1.0, 1.0, -1.0}};
    const auto op = make_circulant_signed(g, s, {0});
    CHECK((op.to_dense().row(0).transpose() - g.cwiseProduct(s)).norm() < 1e-14);
}

TEST_CASE("circulant-signed rejects m > n") {
    Rng rng(1);
    CHECK_THROWS_AS(make_circulant_signed(rng, 9, 8), std::invalid_argument);
}

TEST_CASE("circulant-signed operator norm is below sqrt(n) scale") {
    Rng rng(4);
    const Eigen::Index n = 64;
    const auto op = make_circulant_signed(rng, n, n);
    const Mat a = op.to_dense();
    const auto &p = std::get<ops::CirculantSigned>(op.payload());
    // Rescaled to unit-variance g, the Frobenius norm is sqrt(n) ||g|| / sqrt(n)-ish.
    const double op_norm = spectral_norm(a).value;
    CHECK(op_norm <= a.norm() * (1.0 + 1e-9));
    CHECK_THAT(a.norm(), WithinAbs(std::sqrt(static_cast<double>(n)) * p.first_row.norm(), 1e-9));
}

TEST_CASE("downsample averages boxes") {
    const auto op = make_downsample(4, 2);
    CHECK(op.apply(Vec{{1.0, 3.0, 5.0, 7.0}}) == Vec{{2.0, 6.0}});
    const Vec c = Vec::Constant(12, 2.5);
    const Vec y = make_downsample(12, 3).apply(c);
    CHECK(y.size() == 4);
    for (Eigen::Index i = 0; i < 4; ++i) CHECK_THAT(y[i], WithinAbs(2.5, 1e-15));
    CHECK_THROWS_AS(make_downsample(10, 3), std::invalid_argument);
}

TEST_CASE("adjoint identity holds for every operator kind") {
    Rng rng(13);
    const Eigen::Index n = 32;
    for (const auto &op : operator_zoo(rng, n)) {
        for (int i = 0; i < 100; ++i) {
            const Vec x = randn(rng, n, 1.0);
            const Vec y = randn(rng, op.rows(), 1.0);
            const double lhs = op.apply(x).dot(y);
            const double rhs = x.dot(op.adjoint(y));
            INFO(to_string(op.kind()));
            CHECK(std::abs(lhs - rhs) <= 1e-10 * x.norm() * y.norm());
        }
    }
}

TEST_CASE("operators are linear") {
    Rng rng(14);
    const Eigen::Index n = 32;
    for (const auto &op : operator_zoo(rng, n)) {
        const Vec x = randn(rng, n, 1.0), z = randn(rng, n, 1.0);
        const double a = 1.7, b = -0.3;
        const Vec lhs = op.apply(a * x + b * z);
        const Vec rhs = a * op.apply(x) + b * op.apply(z);
        CHECK((lhs - rhs).norm() <= 1e-12 * std::max(1.0, rhs.norm()));
    }
}

TEST_CASE("to_dense agrees with apply") {
    Rng rng(15);
    for (const auto &op : operator_zoo(rng, 16)) {
        const Vec x = randn(rng, 16, 1.0);
        CHECK((op.to_dense() * x - op.apply(x)).norm() <= 1e-12 * std::max(1.0, x.norm()));
    }
}

TEST_CASE("noiseless sensing is exact") {
    Rng rng(1);
    const auto op = make_gaussian(rng, 5, 8);
    const Vec x = randn(rng, 8, 1.0);
    CHECK(sense(op, x, NoiseSpec{}, rng) == op.apply(x));
}

TEST_CASE("noisy sensing is reproducible per seed") {
    const auto op = make_identity(20);
    const Vec x = Vec::Ones(20);
    Rng a(4), b(4);
    CHECK(sense(op, x, NoiseSpec{0.1, {}}, a) == sense(op, x, NoiseSpec{0.1, {}}, b));
}

TEST_CASE("noise variance matches sigma squared") {
    const auto op = make_identity(4);
    const Vec x = Vec::LinSpaced(4, -1, 1);
    Rng rng(6);
    Vec sum = Vec::Zero(4), sumsq = Vec::Zero(4);
    const int trials = 10000;
    for (int t = 0; t < trials; ++t) {
        const Vec r = sense(op, x, NoiseSpec{0.1, {}}, rng) - x;
        sum += r;
        sumsq += r.cwiseProduct(r);
    }
    for (Eigen::Index i = 0; i < 4; ++i) {
        const double mean = sum[i] / trials;
        const double var = sumsq[i] / trials - mean * mean;
        CHECK(std::abs(var / 0.01 - 1.0) < 0.05);
    }
}

TEST_CASE("sensing clips when asked") {
    Rng rng(2);
    const Vec y = sense(make_identity(3), Vec{{-5.0, 0.0, 5.0}}, NoiseSpec{0.0, std::make_pair(-1.0, 1.0)}, rng);
    CHECK(y == Vec{{-1.0, 0.0, 1.0}});
    CHECK_THROWS(sense(make_identity(3), Vec::Zero(3), NoiseSpec{-1.0, {}}, rng));
}

TEST_CASE("operator specs build deterministically") {
    OperatorSpec spec;
    spec.kind = OperatorKind::circulant_signed;
    spec.m = 10;
    spec.seed = 77;
    spec.row_subset = RowSubset::random;
    CHECK(build_operator(spec, 20).to_dense() == build_operator(spec, 20).to_dense());
    spec.kind = OperatorKind::mask;
    CHECK_THROWS(build_operator(spec, 20));
    CHECK(parse_operator_kind("random_mask") == OperatorKind::mask);
    CHECK(parse_operator_kind("circulant_signed") == OperatorKind::circulant_signed);
    CHECK_FALSE(parse_operator_kind("fourier").has_value());
}

TEST_CASE("apply and adjoint validate sizes") {
    const auto op = make_downsample(8, 2);
    CHECK_THROWS_AS(op.apply(Vec::Zero(7)), DimensionError);
    CHECK_THROWS_AS(op.adjoint(Vec::Zero(8)), DimensionError);
}

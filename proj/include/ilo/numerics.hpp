#pragma once

// Dense vectors/matrices, seeded sampling, FFT-backed circular convolution
// and power-iteration spectral norms.

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace ilo {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

class DimensionError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

inline void require_dim(Eigen::Index got, Eigen::Index want, const char *what) {
    if (got != want) {
        throw DimensionError(std::string(what) + ": expected dimension " + std::to_string(want) +
                             ", got " + std::to_string(got));
    }
}

inline bool all_finite(const Vec &v) { return v.allFinite(); }

/// SplitMix64 finalizer. Used to derive independent child seeds from a
/// parent seed and a tag without consuming generator state.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Seeded generator. Normals come from the Box-Muller transform over
/// 53-bit uniforms drawn from mt19937_64, so a seed reproduces bit-exactly
/// with this implementation regardless of the standard library vendor.
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform in (0, 1].
    double uniform_open_low() { return (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53; }

    /// Uniform integer in [0, n).
    std::size_t uniform_index(std::size_t n) {
        if (n == 0) throw std::invalid_argument("uniform_index: empty range");
        // Rejection sampling removes modulo bias.
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t r;
        do {
            r = engine_();
        } while (r >= limit);
        return static_cast<std::size_t>(r % n);
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform_open_low();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    double rademacher() { return (engine_() >> 63) ? 1.0 : -1.0; }

    double exponential() { return -std::log(uniform_open_low()); }

  private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

inline Vec randn(Rng &rng, Eigen::Index n, double sigma = 1.0) {
    if (n < 1) throw std::invalid_argument("randn: n must be >= 1");
    if (!(sigma >= 0.0)) throw std::invalid_argument("randn: sigma must be >= 0");
    Vec out(n);
    for (Eigen::Index i = 0; i < n; ++i) out[i] = sigma * rng.normal();
    return out;
}

inline Mat randn(Rng &rng, Eigen::Index rows, Eigen::Index cols, double sigma) {
    if (rows < 1 || cols < 1) throw std::invalid_argument("randn: shape must be positive");
    Mat out(rows, cols);
    // Row-major fill order so the draw sequence matches the file layout.
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = sigma * rng.normal();
    return out;
}

namespace detail {

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

} // namespace detail

/// Circular convolution out[i] = sum_j g[(i-j) mod n] x[j] for a fixed
/// kernel g. The kernel spectrum is computed once; any n is handled by
/// zero-padding to a power of two >= 2n-1 and folding the linear
/// convolution back onto n samples.
class CircularConvolver {
  public:
    explicit CircularConvolver(const Vec &kernel) : n_(checked_size(kernel)), padded_(padded_size(n_)) {
        std::vector<double> buf(padded_, 0.0);
        for (std::size_t i = 0; i < n_; ++i) buf[i] = kernel[static_cast<Eigen::Index>(i)];
        Eigen::FFT<double> fft;
        fft.fwd(spectrum_, buf);
    }

    Eigen::Index size() const { return static_cast<Eigen::Index>(n_); }

    Vec apply(const Vec &x) const {
        require_dim(x.size(), size(), "circular convolution");
        std::vector<double> buf(padded_, 0.0);
        for (std::size_t i = 0; i < n_; ++i) buf[i] = x[static_cast<Eigen::Index>(i)];
        // A local plan keeps apply() safe to call concurrently.
        Eigen::FFT<double> fft;
        std::vector<std::complex<double>> freq;
        fft.fwd(freq, buf);
        for (std::size_t i = 0; i < freq.size(); ++i) freq[i] *= spectrum_[i];
        std::vector<double> linear;
        fft.inv(linear, freq);
        Vec out(size());
        for (std::size_t i = 0; i < n_; ++i) {
            double v = linear[i];
            if (i + n_ < 2 * n_ - 1) v += linear[i + n_];
            out[static_cast<Eigen::Index>(i)] = v;
        }
        return out;
    }

  private:
    static std::size_t checked_size(const Vec &kernel) {
        if (kernel.size() < 1) throw DimensionError("CircularConvolver: empty kernel");
        return static_cast<std::size_t>(kernel.size());
    }

    // Eigen's FFT cannot take a length-1 transform.
    static std::size_t padded_size(std::size_t n) { return std::max<std::size_t>(2, detail::next_pow2(2 * n - 1)); }

    std::size_t n_;
    std::size_t padded_;
    std::vector<std::complex<double>> spectrum_;
};

inline Vec fft_circular_convolve(const Vec &g, const Vec &x) {
    require_dim(x.size(), g.size(), "fft_circular_convolve");
    return CircularConvolver(g).apply(x);
}

struct SpectralNorm {
    double value = 0.0;
    bool converged = false;
    int iterations = 0;
};

/// Largest singular value by power iteration on W^T W. The Rayleigh
/// estimate ||Wv|| / ||v|| never exceeds the true value.
inline SpectralNorm spectral_norm(const Mat &w, int iters = 1000, double tol = 1e-12) {
    if (iters < 1) throw std::invalid_argument("spectral_norm: iters must be >= 1");
    if (w.size() == 0 || w.cwiseAbs().maxCoeff() == 0.0) return {0.0, true, 0};

    // Fixed start so the estimate is a pure function of W.
    Rng rng(0x5eed);
    Vec v = randn(rng, w.cols(), 1.0);
    v.normalize();
    double sigma = (w * v).norm();
    for (int it = 1; it <= iters; ++it) {
        Vec u = w.transpose() * (w * v);
        const double nu = u.norm();
        if (nu == 0.0) return {sigma, true, it};
        v = u / nu;
        const double next = (w * v).norm();
        const bool done = std::abs(next - sigma) <= tol * next;
        sigma = std::max(sigma, next);
        if (done) return {sigma, true, it};
    }
    return {sigma, false, iters};
}

inline double inner(const Vec &a, const Vec &b) {
    require_dim(b.size(), a.size(), "inner");
    return a.dot(b);
}

} // namespace ilo

#pragma once

// Layered feed-forward generator G = G_d o ... o G_1 with exact
// vector-Jacobian products, splitting and Lipschitz bounds.

#include "ilo/numerics.hpp"

#include <atomic>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ilo {

enum class Activation { identity, relu, leaky_relu, tanh };

inline constexpr double kDefaultLeakySlope = 0.2;

inline std::string_view to_string(Activation a) {
    switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::tanh: return "tanh";
    }
    return "identity";
}

inline std::optional<Activation> parse_activation(std::string_view s) {
    if (s == "identity") return Activation::identity;
    if (s == "relu") return Activation::relu;
    if (s == "leaky_relu") return Activation::leaky_relu;
    if (s == "tanh") return Activation::tanh;
    return std::nullopt;
}

/// One affine map followed by a 1-Lipschitz pointwise nonlinearity.
struct Layer {
    Mat weights; // out x in
    Vec bias;    // out
    Activation activation = Activation::identity;
    double slope = kDefaultLeakySlope; // only meaningful for leaky_relu

    Eigen::Index in_dim() const { return weights.cols(); }
    Eigen::Index out_dim() const { return weights.rows(); }

    void validate() const {
        if (weights.rows() < 1 || weights.cols() < 1)
            throw DimensionError("Layer: weights must be non-empty");
        require_dim(bias.size(), weights.rows(), "Layer bias");
        if (activation == Activation::leaky_relu && !(slope > 0.0 && slope < 1.0))
            throw std::invalid_argument("Layer: leaky_relu slope must lie in (0,1)");
        if (!weights.allFinite() || !bias.allFinite())
            throw std::invalid_argument("Layer: non-finite parameters");
    }

    double activate(double x) const {
        switch (activation) {
        case Activation::identity: return x;
        case Activation::relu: return x > 0.0 ? x : 0.0;
        case Activation::leaky_relu: return x >= 0.0 ? x : slope * x;
        case Activation::tanh: return std::tanh(x);
        }
        return x;
    }

    // At a kink the positive-side slope is used.
    double derivative(double pre) const {
        switch (activation) {
        case Activation::identity: return 1.0;
        case Activation::relu: return pre >= 0.0 ? 1.0 : 0.0;
        case Activation::leaky_relu: return pre >= 0.0 ? 1.0 : slope;
        case Activation::tanh: {
            const double t = std::tanh(pre);
            return 1.0 - t * t;
        }
        }
        return 1.0;
    }

    friend bool operator==(const Layer &a, const Layer &b) {
        return a.activation == b.activation && a.slope == b.slope &&
               a.weights.rows() == b.weights.rows() && a.weights.cols() == b.weights.cols() &&
               a.weights == b.weights && a.bias == b.bias;
    }
};

/// Pre-activations of every layer from one forward pass, tagged with the
/// identity of the generator that produced them.
struct ForwardCache {
    std::uint64_t generator_id = 0;
    std::vector<Vec> pre_activations;
};

class LayeredGenerator {
  public:
    LayeredGenerator() = default;

    explicit LayeredGenerator(std::vector<Layer> layers) : layers_(std::move(layers)), id_(next_id()) {
        if (layers_.empty()) throw std::invalid_argument("LayeredGenerator: at least one layer required");
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            layers_[i].validate();
            if (i > 0 && layers_[i].in_dim() != layers_[i - 1].out_dim()) {
                throw DimensionError("LayeredGenerator: layer " + std::to_string(i) + " expects input " +
                                     std::to_string(layers_[i].in_dim()) + " but previous layer emits " +
                                     std::to_string(layers_[i - 1].out_dim()));
            }
        }
    }

    std::size_t num_layers() const { return layers_.size(); }
    const std::vector<Layer> &layers() const { return layers_; }
    const Layer &layer(std::size_t i) const { return layers_.at(i); }
    std::uint64_t id() const { return id_; }

    Eigen::Index in_dim() const { return layers_.front().in_dim(); }
    Eigen::Index out_dim() const { return layers_.back().out_dim(); }

    /// (k, p_1, ..., n)
    std::vector<Eigen::Index> dims() const {
        std::vector<Eigen::Index> d{in_dim()};
        for (const auto &l : layers_) d.push_back(l.out_dim());
        return d;
    }

    Vec forward(const Vec &z) const {
        require_dim(z.size(), in_dim(), "forward");
        Vec h = z;
        for (const auto &l : layers_) {
            Vec pre = l.weights * h + l.bias;
            h = pre.unaryExpr([&](double x) { return l.activate(x); });
        }
        return h;
    }

    Vec forward(const Vec &z, ForwardCache &cache) const {
        require_dim(z.size(), in_dim(), "forward");
        cache.generator_id = id_;
        cache.pre_activations.clear();
        cache.pre_activations.reserve(layers_.size());
        Vec h = z;
        for (const auto &l : layers_) {
            cache.pre_activations.push_back(l.weights * h + l.bias);
            h = cache.pre_activations.back().unaryExpr([&](double x) { return l.activate(x); });
        }
        return h;
    }

    /// J^T * cotangent at the point recorded in `cache`.
    Vec vjp(const ForwardCache &cache, const Vec &cotangent) const {
        if (cache.generator_id != id_ || cache.pre_activations.size() != layers_.size())
            throw std::invalid_argument("vjp: cache does not belong to this generator");
        require_dim(cotangent.size(), out_dim(), "vjp cotangent");
        Vec g = cotangent;
        for (std::size_t i = layers_.size(); i-- > 0;) {
            const auto &l = layers_[i];
            const Vec &pre = cache.pre_activations[i];
            if (pre.size() != l.out_dim()) throw std::invalid_argument("vjp: stale cache");
            if (l.activation != Activation::identity)
                g = g.cwiseProduct(pre.unaryExpr([&](double x) { return l.derivative(x); }));
            g = l.weights.transpose() * g;
        }
        return g;
    }

    /// Layers [first, last) as a standalone generator.
    LayeredGenerator slice(std::size_t first, std::size_t last) const {
        if (first >= last || last > layers_.size())
            throw std::out_of_range("slice: invalid layer range");
        return LayeredGenerator(std::vector<Layer>(layers_.begin() + static_cast<std::ptrdiff_t>(first),
                                                   layers_.begin() + static_cast<std::ptrdiff_t>(last)));
    }

    friend bool operator==(const LayeredGenerator &a, const LayeredGenerator &b) {
        return a.layers_ == b.layers_;
    }

  private:
    static std::uint64_t next_id() {
        static std::atomic<std::uint64_t> counter{1};
        return counter.fetch_add(1, std::memory_order_relaxed);
    }

    std::vector<Layer> layers_;
    std::uint64_t id_ = 0;
};

/// G = suffix o prefix, split after layer `index` (1-based layer count of
/// the prefix).
struct GeneratorSplit {
    LayeredGenerator prefix;
    LayeredGenerator suffix;
    std::size_t index = 0;

    Eigen::Index k() const { return prefix.in_dim(); }
    Eigen::Index p() const { return prefix.out_dim(); }
    Eigen::Index n() const { return suffix.out_dim(); }
};

inline GeneratorSplit split(const LayeredGenerator &g, std::size_t s) {
    if (s < 1 || s >= g.num_layers())
        throw std::out_of_range("split: index " + std::to_string(s) + " outside [1, " +
                                std::to_string(g.num_layers() - 1) + "]");
    return {g.slice(0, s), g.slice(s, g.num_layers()), s};
}

struct LipschitzBounds {
    std::vector<double> per_layer;
    double prefix = 1.0; // L1
    double suffix = 1.0; // L2
    double total() const { return prefix * suffix; }
};

/// Per-layer spectral norms (activations are 1-Lipschitz). `split_index`
/// selects how many leading layers form the prefix; 0 puts all layers in
/// the prefix.
inline LipschitzBounds lipschitz(const LayeredGenerator &g, std::size_t split_index = 0) {
    LipschitzBounds out;
    const std::size_t cut = split_index == 0 ? g.num_layers() : split_index;
    for (std::size_t i = 0; i < g.num_layers(); ++i) {
        const double s = spectral_norm(g.layer(i).weights, 5000, 1e-13).value;
        out.per_layer.push_back(s);
        (i < cut ? out.prefix : out.suffix) *= s;
    }
    return out;
}

/// Recipe for a random "trained-like" generator: orthogonal-ish Gaussian
/// weights rescaled so every layer has spectral norm `layer_lipschitz`.
struct SynthesisSpec {
    std::vector<Eigen::Index> dims{8, 16, 32, 64, 128};
    Activation activation = Activation::leaky_relu;
    double slope = kDefaultLeakySlope;
    Activation output_activation = Activation::leaky_relu;
    double layer_lipschitz = 1.0;
    double bias_std = 0.05;
    std::uint64_t seed = 0;
};

inline LayeredGenerator synthesize(const SynthesisSpec &spec) {
    if (spec.dims.size() < 2) throw std::invalid_argument("synthesize: need at least two dims");
    for (auto d : spec.dims)
        if (d < 1) throw std::invalid_argument("synthesize: dims must be positive");
    if (!(spec.layer_lipschitz > 0.0)) throw std::invalid_argument("synthesize: layer_lipschitz must be > 0");
    if (!(spec.bias_std >= 0.0)) throw std::invalid_argument("synthesize: bias_std must be >= 0");

    Rng rng(spec.seed);
    std::vector<Layer> layers;
    for (std::size_t i = 0; i + 1 < spec.dims.size(); ++i) {
        const Eigen::Index in = spec.dims[i];
        const Eigen::Index out = spec.dims[i + 1];
        Mat w = randn(rng, out, in, 1.0);
        // Orthonormalize the long side so all singular values coincide.
        if (out >= in) {
            Eigen::HouseholderQR<Mat> qr(w);
            w = qr.householderQ() * Mat::Identity(out, in);
        } else {
            Mat wt = w.transpose();
            Eigen::HouseholderQR<Mat> qr(wt);
            w = (qr.householderQ() * Mat::Identity(in, out)).transpose();
        }
        w *= spec.layer_lipschitz / spectral_norm(w).value;
        Vec b = spec.bias_std > 0.0 ? randn(rng, out, spec.bias_std) : Vec::Zero(out);
        const bool last = i + 2 == spec.dims.size();
        Layer l{std::move(w), std::move(b), last ? spec.output_activation : spec.activation, spec.slope};
        layers.push_back(std::move(l));
    }
    return LayeredGenerator(std::move(layers));
}

/// Convenience for tests: a single layer with the given weights.
inline LayeredGenerator single_layer(Mat w, Activation act = Activation::identity, Vec bias = {}) {
    if (bias.size() == 0) bias = Vec::Zero(w.rows());
    return LayeredGenerator({Layer{std::move(w), std::move(bias), act, kDefaultLeakySlope}});
}

} // namespace ilo

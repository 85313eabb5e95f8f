#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "grpfed/errors.hpp"

namespace grpfed::nn {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

enum class Role { extractor, classifier, discriminator };

inline std::string_view to_string(Role role) {
    switch (role) {
        case Role::extractor: return "extractor";
        case Role::classifier: return "classifier";
        case Role::discriminator: return "discriminator";
    }
    return "unknown";
}

inline Role role_from_string(std::string_view name) {
    if (name == "extractor") return Role::extractor;
    if (name == "classifier") return Role::classifier;
    if (name == "discriminator") return Role::discriminator;
    throw ConfigError("unknown model role '" + std::string(name) + "'");
}

// One fully-connected layer: y = W x + b, weight is out x in.
template <typename Scalar = double>
struct DenseLayer {
    Matrix<Scalar> weight;
    Vector<Scalar> bias;

    [[nodiscard]] Index in_dim() const noexcept { return weight.cols(); }
    [[nodiscard]] Index out_dim() const noexcept { return weight.rows(); }

    bool operator==(const DenseLayer& other) const {
        return weight.rows() == other.weight.rows() && weight.cols() == other.weight.cols() &&
               bias.size() == other.bias.size() && weight == other.weight && bias == other.bias;
    }
};

// Parameters of a dense network. Hidden layers use ReLU, the last layer is
// linear; the discriminator's sigmoid is applied by discriminate().
template <typename Scalar = double>
struct Mlp {
    Role role = Role::extractor;
    std::vector<DenseLayer<Scalar>> layers;

    [[nodiscard]] Index input_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
    [[nodiscard]] Index output_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

    [[nodiscard]] Index parameter_count() const {
        Index n = 0;
        for (const auto& l : layers) n += l.weight.size() + l.bias.size();
        return n;
    }

    bool operator==(const Mlp& other) const { return role == other.role && layers == other.layers; }
};

// Same layout as the parameters they belong to.
template <typename Scalar = double>
struct Gradients {
    std::vector<DenseLayer<Scalar>> layers;
};

template <typename Scalar>
Gradients<Scalar> zeros_like(const Mlp<Scalar>& params) {
    Gradients<Scalar> g;
    g.layers.reserve(params.layers.size());
    for (const auto& l : params.layers) {
        g.layers.push_back({Matrix<Scalar>::Zero(l.weight.rows(), l.weight.cols()),
                            Vector<Scalar>::Zero(l.bias.size())});
    }
    return g;
}

template <typename Scalar>
bool all_finite(const std::vector<DenseLayer<Scalar>>& layers) {
    for (const auto& l : layers) {
        if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    }
    return true;
}

template <typename Scalar>
bool congruent(const std::vector<DenseLayer<Scalar>>& a, const std::vector<DenseLayer<Scalar>>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (a[k].weight.rows() != b[k].weight.rows() || a[k].weight.cols() != b[k].weight.cols() ||
            a[k].bias.size() != b[k].bias.size()) {
            return false;
        }
    }
    return true;
}

// Checks layer composition, role-specific output width and finiteness.
// num_classes < 0 skips the classifier width check.
template <typename Scalar>
void validate(const Mlp<Scalar>& params, Index num_classes = -1) {
    const std::string name(to_string(params.role));
    if (params.layers.empty()) throw ConfigError(name + ": network has no layers");
    for (std::size_t k = 0; k < params.layers.size(); ++k) {
        const auto& l = params.layers[k];
        if (l.bias.size() != l.weight.rows()) {
            throw ConfigError(name + ": layer " + std::to_string(k) + " bias size does not match weight rows");
        }
        if (k + 1 < params.layers.size() && l.out_dim() != params.layers[k + 1].in_dim()) {
            throw ConfigError(name + ": layer " + std::to_string(k) + " output does not feed layer " +
                              std::to_string(k + 1));
        }
    }
    if (params.role == Role::discriminator && params.output_dim() != 1) {
        throw ConfigError("discriminator must have a single output");
    }
    if (params.role == Role::classifier && num_classes >= 0 && params.output_dim() != num_classes) {
        throw ConfigError("classifier output width " + std::to_string(params.output_dim()) +
                          " does not match class count " + std::to_string(num_classes));
    }
    if (!all_finite(params.layers)) throw NumericalError(name + ": non-finite parameter");
}

// Glorot-uniform initialisation: U(-a, a), a = sqrt(6 / (fan_in + fan_out)).
// Biases start at zero.
template <typename Scalar = double, typename Rng>
Mlp<Scalar> make_mlp(Role role, std::span<const Index> dims, Rng& rng) {
    if (dims.size() < 2) throw ConfigError("an MLP needs at least input and output widths");
    Mlp<Scalar> net;
    net.role = role;
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
        const Index in = dims[k];
        const Index out = dims[k + 1];
        if (in <= 0 || out <= 0) throw ConfigError("layer widths must be positive");
        const double a = std::sqrt(6.0 / static_cast<double>(in + out));
        std::uniform_real_distribution<double> u(-a, a);
        DenseLayer<Scalar> layer{Matrix<Scalar>(out, in), Vector<Scalar>::Zero(out)};
        for (Index j = 0; j < in; ++j) {
            for (Index i = 0; i < out; ++i) layer.weight(i, j) = static_cast<Scalar>(u(rng));
        }
        net.layers.push_back(std::move(layer));
    }
    return net;
}

template <typename Scalar = double, typename Rng>
Mlp<Scalar> make_mlp(Role role, std::initializer_list<Index> dims, Rng& rng) {
    return make_mlp<Scalar>(role, std::span<const Index>(dims.begin(), dims.size()), rng);
}

// Overwrites every weight and bias with U(-a, a).
template <typename Scalar, typename Rng>
void fill_uniform(Mlp<Scalar>& params, double a, Rng& rng) {
    std::uniform_real_distribution<double> u(-a, a);
    for (auto& l : params.layers) {
        for (Index j = 0; j < l.weight.cols(); ++j) {
            for (Index i = 0; i < l.weight.rows(); ++i) l.weight(i, j) = static_cast<Scalar>(u(rng));
        }
        for (Index i = 0; i < l.bias.size(); ++i) l.bias(i) = static_cast<Scalar>(u(rng));
    }
}

// Per-layer inputs and pre-activations of one forward pass.
template <typename Scalar = double>
struct ForwardCache {
    std::vector<Matrix<Scalar>> inputs;
    std::vector<Matrix<Scalar>> preact;

    [[nodiscard]] bool empty() const noexcept { return inputs.empty(); }
};

// Rows of x are examples. Returns the n x out output of the last layer.
template <typename Scalar>
Matrix<Scalar> forward(const Mlp<Scalar>& params, const Matrix<Scalar>& x, ForwardCache<Scalar>* cache = nullptr) {
    if (params.layers.empty()) throw ConfigError("forward through an empty network");
    if (x.cols() != params.input_dim()) {
        throw ConfigError(std::string(to_string(params.role)) + ": input width " + std::to_string(x.cols()) +
                          " does not match expected " + std::to_string(params.input_dim()));
    }
    if (cache) {
        cache->inputs.clear();
        cache->preact.clear();
    }
    Matrix<Scalar> h = x;
    for (std::size_t k = 0; k < params.layers.size(); ++k) {
        const auto& l = params.layers[k];
        Matrix<Scalar> z = (h * l.weight.transpose()).rowwise() + l.bias.transpose();
        if (cache) {
            cache->inputs.push_back(std::move(h));
            cache->preact.push_back(z);
        }
        if (k + 1 < params.layers.size()) {
            h = z.cwiseMax(Scalar(0));
        } else {
            h = std::move(z);
        }
    }
    return h;
}

template <typename Scalar = double>
struct BackwardResult {
    Gradients<Scalar> grads;
    Matrix<Scalar> d_input;
};

// Reverse pass for the cached forward call; d_output is dLoss/dOutput.
template <typename Scalar>
BackwardResult<Scalar> backward(const Mlp<Scalar>& params, const ForwardCache<Scalar>& cache,
                                const Matrix<Scalar>& d_output) {
    if (cache.empty() || cache.inputs.size() != params.layers.size()) {
        throw UsageError("backward called without a forward cache for this network");
    }
    const Index n = cache.inputs.front().rows();
    if (d_output.rows() != n || d_output.cols() != params.output_dim()) {
        throw UsageError("upstream gradient shape does not match the cached forward pass");
    }
    BackwardResult<Scalar> out;
    out.grads.layers.resize(params.layers.size());
    Matrix<Scalar> delta = d_output;
    for (std::size_t k = params.layers.size(); k-- > 0;) {
        const auto& l = params.layers[k];
        if (k + 1 < params.layers.size()) {
            delta = delta.cwiseProduct((cache.preact[k].array() > Scalar(0)).template cast<Scalar>().matrix());
        }
        out.grads.layers[k].weight = delta.transpose() * cache.inputs[k];
        out.grads.layers[k].bias = delta.colwise().sum().transpose();
        delta = delta * l.weight;
    }
    out.d_input = std::move(delta);
    return out;
}

}  // namespace grpfed::nn

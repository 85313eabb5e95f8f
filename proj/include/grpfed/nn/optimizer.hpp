#pragma once

#include "grpfed/nn/mlp.hpp"

namespace grpfed::nn {

// Heavy-ball SGD: v <- momentum * v + g; p <- p - lr * v.
template <typename Scalar = double>
struct OptimizerState {
    std::vector<DenseLayer<Scalar>> velocity;
    Scalar learning_rate{};
    Scalar momentum{};
};

template <typename Scalar>
OptimizerState<Scalar> make_optimizer(const Mlp<Scalar>& params, Scalar learning_rate, Scalar momentum) {
    if (!(learning_rate >= Scalar(0)) || !(momentum >= Scalar(0) && momentum < Scalar(1))) {
        throw ConfigError("optimizer: learning rate must be >= 0 and momentum in [0, 1)");
    }
    return {zeros_like(params).layers, learning_rate, momentum};
}

template <typename Scalar>
void sgd_step(Mlp<Scalar>& params, const Gradients<Scalar>& grads, OptimizerState<Scalar>& opt) {
    if (!congruent(params.layers, grads.layers) || !congruent(params.layers, opt.velocity)) {
        throw ConfigError("sgd_step: gradient or velocity shape does not match parameters");
    }
    if (!all_finite(grads.layers)) {
        throw NumericalError(std::string("sgd_step: non-finite gradient for ") + std::string(to_string(params.role)));
    }
    for (std::size_t k = 0; k < params.layers.size(); ++k) {
        auto& v = opt.velocity[k];
        v.weight = opt.momentum * v.weight + grads.layers[k].weight;
        v.bias = opt.momentum * v.bias + grads.layers[k].bias;
        params.layers[k].weight -= opt.learning_rate * v.weight;
        params.layers[k].bias -= opt.learning_rate * v.bias;
    }
}

}  // namespace grpfed::nn

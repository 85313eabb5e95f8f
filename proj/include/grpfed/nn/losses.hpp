#pragma once

#include <cmath>
#include <span>

#include "grpfed/nn/mlp.hpp"

namespace grpfed::nn {

// Clamp applied to discriminator probabilities so that both log(p) and
// log(1 - p) stay finite.
inline constexpr double kProbEpsilon = 1e-7;

template <typename Scalar>
Matrix<Scalar> softmax(const Matrix<Scalar>& logits) {
    Matrix<Scalar> p(logits.rows(), logits.cols());
    for (Index i = 0; i < logits.rows(); ++i) {
        const Scalar m = logits.row(i).maxCoeff();
        p.row(i) = (logits.row(i).array() - m).exp().matrix();
        p.row(i) /= p.row(i).sum();
    }
    return p;
}

template <typename Scalar = double>
struct LossAndGrad {
    Scalar loss{};
    Matrix<Scalar> grad;
};

// Mean negative log-likelihood of softmax(logits) at the labels, computed
// with log-sum-exp. grad is dLoss/dLogits.
template <typename Scalar>
LossAndGrad<Scalar> cross_entropy(const Matrix<Scalar>& logits, std::span<const int> labels) {
    const Index n = logits.rows();
    const Index classes = logits.cols();
    if (n == 0 || static_cast<std::size_t>(n) != labels.size()) {
        throw ConfigError("cross_entropy: logits rows and label count differ or are empty");
    }
    LossAndGrad<Scalar> out;
    out.grad.resize(n, classes);
    Scalar total(0);
    const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);
    for (Index i = 0; i < n; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= classes) throw ConfigError("cross_entropy: label out of range");
        const Scalar m = logits.row(i).maxCoeff();
        const auto shifted = (logits.row(i).array() - m).eval();
        const Scalar lse = std::log(shifted.exp().sum());
        total += lse - shifted(y);
        out.grad.row(i) = ((shifted - lse).exp() * inv_n).matrix();
        out.grad(i, y) -= inv_n;
    }
    out.loss = total * inv_n;
    return out;
}

template <typename Scalar>
Scalar clamp_probability(Scalar p) {
    const Scalar lo = static_cast<Scalar>(kProbEpsilon);
    const Scalar hi = Scalar(1) - static_cast<Scalar>(kProbEpsilon);
    return p < lo ? lo : (p > hi ? hi : p);
}

// Clamped sigmoid of the discriminator's scalar output, one entry per row.
template <typename Scalar>
Vector<Scalar> discriminate(const Mlp<Scalar>& disc, const Matrix<Scalar>& features,
                            ForwardCache<Scalar>* cache = nullptr) {
    if (disc.role != Role::discriminator) throw ConfigError("discriminate: network is not a discriminator");
    const Matrix<Scalar> z = forward(disc, features, cache);
    if (z.cols() != 1) throw ConfigError("discriminate: discriminator must have a single output");
    Vector<Scalar> p(z.rows());
    for (Index i = 0; i < z.rows(); ++i) {
        p(i) = clamp_probability(Scalar(1) / (Scalar(1) + std::exp(-z(i, 0))));
    }
    return p;
}

// Maps dLoss/dProb to dLoss/dLogit through the sigmoid. Entries sitting on
// the clamp boundary have zero derivative.
template <typename Scalar>
Matrix<Scalar> sigmoid_backward(const Vector<Scalar>& prob, const Vector<Scalar>& d_prob) {
    const Scalar lo = static_cast<Scalar>(kProbEpsilon);
    const Scalar hi = Scalar(1) - static_cast<Scalar>(kProbEpsilon);
    Matrix<Scalar> dz(prob.size(), 1);
    for (Index i = 0; i < prob.size(); ++i) {
        const Scalar p = prob(i);
        dz(i, 0) = (p <= lo || p >= hi) ? Scalar(0) : d_prob(i) * p * (Scalar(1) - p);
    }
    return dz;
}

template <typename Scalar = double>
struct DiscLoss {
    Scalar loss{};
    Vector<Scalar> d_global;  // dL/dDg
    Vector<Scalar> d_local;   // dL/dDl
};

// L_D = mean log(1 - Dg) + mean log(Dl). Gradient descent on this drives
// Dg -> 1 and Dl -> 0.
template <typename Scalar>
DiscLoss<Scalar> disc_loss(const Vector<Scalar>& dg, const Vector<Scalar>& dl) {
    if (dg.size() == 0 || dl.size() == 0) throw ConfigError("disc_loss: empty batch");
    DiscLoss<Scalar> out;
    const Scalar inv_g = Scalar(1) / static_cast<Scalar>(dg.size());
    const Scalar inv_l = Scalar(1) / static_cast<Scalar>(dl.size());
    Scalar sg(0), sl(0);
    out.d_global.resize(dg.size());
    out.d_local.resize(dl.size());
    for (Index i = 0; i < dg.size(); ++i) {
        sg += std::log(Scalar(1) - dg(i));
        out.d_global(i) = -inv_g / (Scalar(1) - dg(i));
    }
    for (Index i = 0; i < dl.size(); ++i) {
        sl += std::log(dl(i));
        out.d_local(i) = inv_l / dl(i);
    }
    out.loss = sg * inv_g + sl * inv_l;
    return out;
}

template <typename Scalar = double>
struct RegLoss {
    Scalar loss{};
    Vector<Scalar> d_local;  // dL/dDl
};

// L_R = mean log(1 - Dl). Descent drives Dl -> 1, i.e. local features are
// pushed to look global to the (frozen) discriminator.
template <typename Scalar>
RegLoss<Scalar> reg_loss(const Vector<Scalar>& dl) {
    if (dl.size() == 0) throw ConfigError("reg_loss: empty batch");
    RegLoss<Scalar> out;
    const Scalar inv = Scalar(1) / static_cast<Scalar>(dl.size());
    Scalar s(0);
    out.d_local.resize(dl.size());
    for (Index i = 0; i < dl.size(); ++i) {
        s += std::log(Scalar(1) - dl(i));
        out.d_local(i) = -inv / (Scalar(1) - dl(i));
    }
    out.loss = s * inv;
    return out;
}

}  // namespace grpfed::nn

#pragma once

#include <span>

#include "grpfed/nn/losses.hpp"
#include "grpfed/nn/mlp.hpp"

// Composite objectives used by federated clients. Each returns the loss
// value(s) and exact gradients for the trainable networks only; frozen
// networks take part in the forward pass but receive nothing.
namespace grpfed::nn {

template <typename Scalar>
Matrix<Scalar> forward_features(const Mlp<Scalar>& extractor, const Matrix<Scalar>& x,
                                ForwardCache<Scalar>* cache = nullptr) {
    if (extractor.role != Role::extractor) throw ConfigError("forward_features: network is not an extractor");
    return forward(extractor, x, cache);
}

template <typename Scalar>
Matrix<Scalar> forward_classify(const Mlp<Scalar>& classifier, const Matrix<Scalar>& features,
                                ForwardCache<Scalar>* cache = nullptr) {
    if (classifier.role != Role::classifier) throw ConfigError("forward_classify: network is not a classifier");
    return forward(classifier, features, cache);
}

template <typename Scalar = double>
struct ClassificationGrads {
    Scalar loss{};
    Gradients<Scalar> extractor;
    Gradients<Scalar> classifier;
};

// J(C(F(x)), y) with gradients for both F and C.
template <typename Scalar>
ClassificationGrads<Scalar> classification_grads(const Mlp<Scalar>& extractor, const Mlp<Scalar>& classifier,
                                                 const Matrix<Scalar>& x, std::span<const int> labels) {
    ForwardCache<Scalar> fc, cc;
    const Matrix<Scalar> f = forward_features(extractor, x, &fc);
    const Matrix<Scalar> logits = forward_classify(classifier, f, &cc);
    auto ce = cross_entropy(logits, labels);
    auto cb = backward(classifier, cc, ce.grad);
    auto fb = backward(extractor, fc, cb.d_input);
    return {ce.loss, std::move(fb.grads), std::move(cb.grads)};
}

template <typename Scalar = double>
struct LocalObjectiveGrads {
    Scalar total{};
    Scalar classification{};  // L^l
    Scalar regularizer{};     // L_R, zero when not evaluated
    Gradients<Scalar> extractor;
};

// beta * J(C(F_l(x)), y) + (1 - beta) * L_R(D(F_l(x))) with C and D frozen.
// The regularizer path is skipped entirely when its weight is zero or no
// discriminator is given.
template <typename Scalar>
LocalObjectiveGrads<Scalar> local_objective_grads(const Mlp<Scalar>& local_extractor, const Mlp<Scalar>& classifier,
                                                  const Mlp<Scalar>* disc, const Matrix<Scalar>& x,
                                                  std::span<const int> labels, Scalar beta) {
    ForwardCache<Scalar> fc, cc;
    const Matrix<Scalar> f = forward_features(local_extractor, x, &fc);
    const Matrix<Scalar> logits = forward_classify(classifier, f, &cc);
    auto ce = cross_entropy(logits, labels);
    Matrix<Scalar> d_features = backward(classifier, cc, Matrix<Scalar>(beta * ce.grad)).d_input;

    LocalObjectiveGrads<Scalar> out;
    out.classification = ce.loss;
    const Scalar reg_weight = Scalar(1) - beta;
    if (disc != nullptr && reg_weight != Scalar(0)) {
        ForwardCache<Scalar> dc;
        const Vector<Scalar> dl = discriminate(*disc, f, &dc);
        auto reg = reg_loss(dl);
        const Vector<Scalar> d_prob = reg_weight * reg.d_local;
        d_features += backward(*disc, dc, sigmoid_backward(dl, d_prob)).d_input;
        out.regularizer = reg.loss;
    }
    out.total = beta * out.classification + reg_weight * out.regularizer;
    out.extractor = backward(local_extractor, fc, d_features).grads;
    return out;
}

template <typename Scalar = double>
struct DiscriminatorGrads {
    Scalar loss{};
    Gradients<Scalar> disc;
};

// L_D on fixed feature batches; only the discriminator receives gradient.
template <typename Scalar>
DiscriminatorGrads<Scalar> discriminator_grads(const Mlp<Scalar>& disc, const Matrix<Scalar>& global_features,
                                               const Matrix<Scalar>& local_features) {
    ForwardCache<Scalar> gc, lc;
    const Vector<Scalar> dg = discriminate(disc, global_features, &gc);
    const Vector<Scalar> dl = discriminate(disc, local_features, &lc);
    auto ld = disc_loss(dg, dl);
    auto bg = backward(disc, gc, sigmoid_backward(dg, ld.d_global));
    auto bl = backward(disc, lc, sigmoid_backward(dl, ld.d_local));
    for (std::size_t k = 0; k < bg.grads.layers.size(); ++k) {
        bg.grads.layers[k].weight += bl.grads.layers[k].weight;
        bg.grads.layers[k].bias += bl.grads.layers[k].bias;
    }
    return {ld.loss, std::move(bg.grads)};
}

}  // namespace grpfed::nn

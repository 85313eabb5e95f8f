#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "grpfed/nn.hpp"
#include "support.hpp"

using namespace grpfed;
using namespace grpfed::nn;
using grpfed::testing::cast_mlp;
using grpfed::testing::flatten;
using grpfed::testing::max_relative_error;
using grpfed::testing::numeric_gradient;

namespace {

Matrix<double> random_matrix(Index rows, Index cols, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix<double> m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

std::vector<int> random_labels(Index n, int classes, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> u(0, classes - 1);
    std::vector<int> y(static_cast<std::size_t>(n));
    for (auto& v : y) v = u(rng);
    return y;
}

}  // namespace

TEST_SUITE("forward") {
    TEST_CASE("zero network outputs its bias") {
        std::mt19937_64 rng(1);
        auto net = make_mlp(Role::classifier, {3, 2}, rng);
        net.layers[0].weight.setZero();
        net.layers[0].bias << 0.5, -1.5;
        Matrix<double> x = random_matrix(4, 3, rng);
        const auto y = forward(net, x);
        for (Index i = 0; i < 4; ++i) {
            CHECK(y(i, 0) == 0.5);
            CHECK(y(i, 1) == -1.5);
        }
    }

    TEST_CASE("identity hidden layer passes positive inputs and zeroes negatives") {
        std::mt19937_64 rng(2);
        auto net = make_mlp(Role::extractor, {2, 2, 2}, rng);
        net.layers[0].weight.setIdentity();
        net.layers[1].weight.setIdentity();
        Matrix<double> x(1, 2);
        x << 3.0, -4.0;
        const auto y = forward(net, x);
        CHECK(y(0, 0) == 3.0);
        CHECK(y(0, 1) == 0.0);
    }

    TEST_CASE("single layer matches an explicit loop") {
        std::mt19937_64 rng(3);
        auto net = make_mlp(Role::classifier, {5, 3}, rng);
        fill_uniform(net, 1.0, rng);
        const Matrix<double> x = random_matrix(7, 5, rng);
        const auto y = forward(net, x);
        for (Index n = 0; n < 7; ++n) {
            for (Index o = 0; o < 3; ++o) {
                double z = net.layers[0].bias(o);
                for (Index i = 0; i < 5; ++i) z += net.layers[0].weight(o, i) * x(n, i);
                CHECK(y(n, o) == doctest::Approx(z).epsilon(1e-14));
            }
        }
    }

    TEST_CASE("glorot init respects its bound and zero biases") {
        std::mt19937_64 rng(4);
        const auto net = make_mlp(Role::extractor, {16, 64, 32}, rng);
        CHECK(net.layers[0].weight.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 80.0));
        CHECK(net.layers[1].weight.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 96.0));
        CHECK(net.layers[0].bias.isZero());
        CHECK(net.parameter_count() == 16 * 64 + 64 + 64 * 32 + 32);
    }

    TEST_CASE("shape mismatches are rejected") {
        std::mt19937_64 rng(5);
        const auto net = make_mlp(Role::extractor, {4, 3}, rng);
        CHECK_THROWS_AS(forward(net, Matrix<double>(2, 5)), ConfigError);
        ForwardCache<double> empty;
        CHECK_THROWS_AS(backward(net, empty, Matrix<double>(2, 3)), UsageError);
        CHECK_THROWS_AS(validate(make_mlp(Role::classifier, {4, 3}, rng), 5), ConfigError);
        CHECK_THROWS_AS(role_from_string("decoder"), ConfigError);
    }
}

TEST_SUITE("losses") {
    TEST_CASE("uniform logits over ten classes cost ln 10") {
        const Matrix<double> logits = Matrix<double>::Zero(3, 10);
        const std::vector<int> y{0, 4, 9};
        CHECK(cross_entropy(logits, y).loss == doctest::Approx(std::log(10.0)).epsilon(1e-15));
    }

    TEST_CASE("cross entropy matches the naive formula and stays finite for large logits") {
        std::mt19937_64 rng(6);
        const Matrix<double> logits = random_matrix(6, 4, rng);
        const auto y = random_labels(6, 4, rng);
        double naive = 0.0;
        for (Index i = 0; i < 6; ++i) {
            double s = 0.0;
            for (Index c = 0; c < 4; ++c) s += std::exp(logits(i, c));
            naive -= std::log(std::exp(logits(i, y[static_cast<std::size_t>(i)])) / s);
        }
        CHECK(cross_entropy(logits, y).loss == doctest::Approx(naive / 6.0).epsilon(1e-13));

        Matrix<double> big(1, 2);
        big << 1000.0, 0.0;
        const std::vector<int> zero{0};
        const auto ce = cross_entropy(big, zero);
        CHECK(std::isfinite(ce.loss));
        CHECK(ce.loss == doctest::Approx(0.0));
        const std::vector<int> bad{2};
        CHECK_THROWS_AS(cross_entropy(big, bad), ConfigError);
    }

    TEST_CASE("discriminator and regularizer losses at one half") {
        Vector<double> half = Vector<double>::Constant(4, 0.5);
        CHECK(disc_loss(half, half).loss == doctest::Approx(-1.386294).epsilon(1e-6));
        CHECK(reg_loss(half).loss == doctest::Approx(-0.693147).epsilon(1e-6));
    }

    TEST_CASE("clamped probabilities carry no gradient") {
        Vector<double> p(3);
        p << kProbEpsilon, 0.5, 1.0 - kProbEpsilon;
        const Vector<double> d = Vector<double>::Ones(3);
        const auto dz = sigmoid_backward(p, d);
        CHECK(dz(0, 0) == 0.0);
        CHECK(dz(1, 0) == doctest::Approx(0.25));
        CHECK(dz(2, 0) == 0.0);
        CHECK(clamp_probability(0.0) == kProbEpsilon);
        CHECK(clamp_probability(1.0) == 1.0 - kProbEpsilon);
    }
}

TEST_SUITE("gradients") {
    TEST_CASE("each network's backward pass matches finite differences") {
        for (const Role role : {Role::extractor, Role::classifier, Role::discriminator}) {
            std::mt19937_64 rng(7);
            const auto net = make_mlp(role, {6, 5, 4, 3}, rng);
            const Matrix<double> x = random_matrix(5, 6, rng);
            const Matrix<double> upstream = random_matrix(5, 3, rng);
            ForwardCache<double> cache;
            forward(net, x, &cache);
            const auto analytic = flatten(backward(net, cache, upstream).grads.layers);
            const Matrix<long double> xl = x.cast<long double>();
            const Matrix<long double> ul = upstream.cast<long double>();
            const auto numeric = numeric_gradient(cast_mlp<long double>(net), [&](const Mlp<long double>& m) {
                return forward(m, xl).cwiseProduct(ul).sum();
            });
            CHECK(max_relative_error(analytic, numeric) < 1e-6);
        }
    }

    TEST_CASE("classification loss gradients for extractor and classifier") {
        std::mt19937_64 rng(8);
        const auto f = make_mlp(Role::extractor, {4, 6, 3}, rng);
        const auto c = make_mlp(Role::classifier, {3, 5, 3}, rng);
        const Matrix<double> x = random_matrix(8, 4, rng);
        const auto y = random_labels(8, 3, rng);
        const auto g = classification_grads(f, c, x, y);
        const Matrix<long double> xl = x.cast<long double>();
        const auto fl = cast_mlp<long double>(f);
        const auto cl = cast_mlp<long double>(c);
        const auto nf = numeric_gradient(fl, [&](const Mlp<long double>& m) {
            return cross_entropy(forward(cl, forward(m, xl)), std::span<const int>(y)).loss;
        });
        const auto nc = numeric_gradient(cl, [&](const Mlp<long double>& m) {
            return cross_entropy(forward(m, forward(fl, xl)), std::span<const int>(y)).loss;
        });
        CHECK(max_relative_error(flatten(g.extractor.layers), nf) < 1e-6);
        CHECK(max_relative_error(flatten(g.classifier.layers), nc) < 1e-6);
    }

    TEST_CASE("discriminator loss gradient") {
        std::mt19937_64 rng(9);
        const auto d = make_mlp(Role::discriminator, {3, 4, 1}, rng);
        const Matrix<double> fg = random_matrix(5, 3, rng);
        const Matrix<double> fl = random_matrix(7, 3, rng);
        const auto g = discriminator_grads(d, fg, fl);
        const Matrix<long double> fgl = fg.cast<long double>(), fll = fl.cast<long double>();
        const auto n = numeric_gradient(cast_mlp<long double>(d), [&](const Mlp<long double>& m) {
            return disc_loss(discriminate(m, fgl), discriminate(m, fll)).loss;
        });
        CHECK(max_relative_error(flatten(g.disc.layers), n) < 1e-6);
    }

    TEST_CASE("local objective gradient over beta") {
        for (const double beta : {0.0, 0.3, 1.0}) {
            std::mt19937_64 rng(10);
            const auto f = make_mlp(Role::extractor, {4, 6, 3}, rng);
            const auto c = make_mlp(Role::classifier, {3, 3}, rng);
            const auto d = make_mlp(Role::discriminator, {3, 4, 1}, rng);
            const Matrix<double> x = random_matrix(6, 4, rng);
            const auto y = random_labels(6, 3, rng);
            const auto g = local_objective_grads(f, c, &d, x, y, beta);
            const auto cl = cast_mlp<long double>(c);
            const auto dl = cast_mlp<long double>(d);
            const Matrix<long double> xl = x.cast<long double>();
            const long double b = beta;
            const auto n = numeric_gradient(cast_mlp<long double>(f), [&](const Mlp<long double>& m) {
                const Matrix<long double> feat = forward(m, xl);
                return b * cross_entropy(forward(cl, feat), std::span<const int>(y)).loss +
                       (1 - b) * reg_loss(discriminate(dl, feat)).loss;
            });
            CHECK(max_relative_error(flatten(g.extractor.layers), n) < 1e-6);
        }
    }

    TEST_CASE("beta of one ignores the discriminator") {
        std::mt19937_64 rng(11);
        const auto f = make_mlp(Role::extractor, {4, 3}, rng);
        const auto c = make_mlp(Role::classifier, {3, 2}, rng);
        const auto d = make_mlp(Role::discriminator, {3, 1}, rng);
        const Matrix<double> x = random_matrix(3, 4, rng);
        const std::vector<int> y{0, 1, 1};
        const auto with = local_objective_grads(f, c, &d, x, y, 1.0);
        const auto without = local_objective_grads<double>(f, c, nullptr, x, y, 1.0);
        CHECK(with.regularizer == 0.0);
        CHECK(with.extractor.layers == without.extractor.layers);
        CHECK(with.extractor.layers == classification_grads(f, c, x, y).extractor.layers);
    }
}

TEST_SUITE("optimizer") {
    TEST_CASE("plain step and momentum accumulation") {
        std::mt19937_64 rng(12);
        auto net = make_mlp(Role::classifier, {1, 1}, rng);
        net.layers[0].weight(0, 0) = 1.0;
        auto grads = zeros_like(net);
        grads.layers[0].weight(0, 0) = 0.25;

        auto plain = make_optimizer(net, 1.0, 0.0);
        auto p = net;
        sgd_step(p, grads, plain);
        CHECK(p.layers[0].weight(0, 0) == 0.75);

        auto heavy = make_optimizer(net, 0.1, 0.9);
        auto h = net;
        sgd_step(h, grads, heavy);
        const double first = 1.0 - h.layers[0].weight(0, 0);
        const double before = h.layers[0].weight(0, 0);
        sgd_step(h, grads, heavy);
        const double second = before - h.layers[0].weight(0, 0);
        CHECK(second / first == doctest::Approx(1.9).epsilon(1e-12));
    }

    TEST_CASE("invalid settings and gradients are rejected") {
        std::mt19937_64 rng(13);
        auto net = make_mlp(Role::classifier, {2, 2}, rng);
        CHECK_THROWS_AS(make_optimizer(net, -1.0, 0.5), ConfigError);
        CHECK_THROWS_AS(make_optimizer(net, 0.1, 1.0), ConfigError);
        auto opt = make_optimizer(net, 0.1, 0.5);
        auto grads = zeros_like(net);
        grads.layers[0].bias(1) = NAN;
        const auto before = net;
        CHECK_THROWS_AS(sgd_step(net, grads, opt), NumericalError);
        CHECK(net == before);
    }
}

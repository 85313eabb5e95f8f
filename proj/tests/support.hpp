#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "grpfed/metrics.hpp"
#include "grpfed/nn.hpp"

// Test-side helpers: parameter flattening and central finite differences
// evaluated in long double, independent of the analytic backward pass.
namespace grpfed::testing {

template <typename To, typename From>
nn::Mlp<To> cast_mlp(const nn::Mlp<From>& m) {
    nn::Mlp<To> out;
    out.role = m.role;
    for (const auto& l : m.layers) out.layers.push_back({l.weight.template cast<To>(), l.bias.template cast<To>()});
    return out;
}

template <typename S>
std::vector<S*> parameter_slots(std::vector<nn::DenseLayer<S>>& layers) {
    std::vector<S*> out;
    for (auto& l : layers) {
        for (nn::Index i = 0; i < l.weight.size(); ++i) out.push_back(l.weight.data() + i);
        for (nn::Index i = 0; i < l.bias.size(); ++i) out.push_back(l.bias.data() + i);
    }
    return out;
}

template <typename S>
std::vector<S> flatten(std::vector<nn::DenseLayer<S>> layers) {
    std::vector<S> out;
    for (S* p : parameter_slots(layers)) out.push_back(*p);
    return out;
}

// d loss / d theta for every parameter of m by central differences.
inline std::vector<long double> numeric_gradient(nn::Mlp<long double> m,
                                                 const std::function<long double(const nn::Mlp<long double>&)>& loss,
                                                 long double h = 1e-6L) {
    std::vector<long double> out;
    for (long double* p : parameter_slots(m.layers)) {
        const long double saved = *p;
        *p = saved + h;
        const long double up = loss(m);
        *p = saved - h;
        const long double down = loss(m);
        *p = saved;
        out.push_back((up - down) / (2 * h));
    }
    return out;
}

// Largest elementwise |a - n| / max(|a|, |n|, floor).
inline double max_relative_error(const std::vector<double>& analytic, const std::vector<long double>& numeric,
                                 double floor = 1e-6) {
    if (analytic.size() != numeric.size()) return INFINITY;
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double n = static_cast<double>(numeric[i]);
        const double denom = std::max({std::abs(analytic[i]), std::abs(n), floor});
        worst = std::max(worst, std::abs(analytic[i] - n) / denom);
    }
    return worst;
}

// Macro-F1 from integer counts alone: class k scores 2TP / (2TP + FP + FN),
// or 0 when it has no true positives. Accumulated as an exact fraction.
inline long double brute_force_macro_f1(const metrics::CountMatrix& cm) {
    const auto c = cm.rows();
    long long num = 0, den = 1;
    for (Eigen::Index k = 0; k < c; ++k) {
        long long tp = cm(k, k), fp = 0, fn = 0;
        for (Eigen::Index j = 0; j < c; ++j) {
            if (j == k) continue;
            fp += cm(j, k);
            fn += cm(k, j);
        }
        if (tp == 0) continue;
        const long long a = 2 * tp, b = 2 * tp + fp + fn;
        num = num * b + a * den;
        den *= b;
        const long long g = std::gcd(num, den);
        num /= g;
        den /= g;
    }
    return static_cast<long double>(num) / static_cast<long double>(den * c);
}

// Calls visit for every C x C count matrix whose total lies in [1, max_total].
inline void for_each_confusion(int classes, int max_total, const std::function<void(const metrics::CountMatrix&)>& visit) {
    metrics::CountMatrix cm = metrics::CountMatrix::Zero(classes, classes);
    const Eigen::Index cells = cm.size();
    std::function<void(Eigen::Index, int)> fill = [&](Eigen::Index cell, int left) {
        if (cell == cells) {
            if (left < max_total) visit(cm);
            return;
        }
        for (int v = 0; v <= left; ++v) {
            cm.data()[cell] = v;
            fill(cell + 1, left - v);
        }
        cm.data()[cell] = 0;
    };
    fill(0, max_total);
}

}  // namespace grpfed::testing

// Acceptance suite: one PASS/FAIL line per criterion. Run without arguments
// for all nine, or select with --criterion N (repeatable).

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "../support.hpp"
#include "grpfed/app.hpp"
#include "grpfed/experiment.hpp"
#include "grpfed/fl.hpp"
#include "grpfed/metrics.hpp"
#include "grpfed/nn.hpp"

using namespace grpfed;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int digits = 4) {
    std::ostringstream s;
    s.precision(digits);
    s << v;
    return s.str();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------- criterion 1

Verdict gradient_check() {
    using testing::cast_mlp;
    using testing::flatten;
    using testing::max_relative_error;
    using testing::numeric_gradient;
    using LD = long double;
    using nn::Matrix;
    using nn::Mlp;
    using nn::Role;

    const auto start = Clock::now();
    double worst = 0.0;
    std::string worst_case;
    const auto record = [&](double err, const std::string& what, int seed) {
        if (err > worst) {
            worst = err;
            worst_case = what + " #" + std::to_string(seed);
        }
    };

    for (int seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(1000 + static_cast<std::uint64_t>(seed));
        std::uniform_int_distribution<int> width(2, 7), batch(2, 6), classes(2, 5);
        std::normal_distribution<double> normal(0.0, 1.0);
        const auto random_matrix = [&](nn::Index r, nn::Index c) {
            Matrix<double> m(r, c);
            for (nn::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
            return m;
        };
        const int d = width(rng), h = width(rng), k = width(rng), hc = width(rng), c = classes(rng), n = batch(rng);
        // Random biases keep pre-activations off the ReLU kink, where zero-bias
        // initialization and dead feature rows would otherwise pin them at 0.
        const auto randomized = [&](nn::Mlp<double> m) {
            for (auto& l : m.layers) {
                for (nn::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = 0.5 * normal(rng);
            }
            return m;
        };
        const auto f = randomized(nn::make_mlp(Role::extractor, {d, h, h, k}, rng));
        const auto cl = randomized(nn::make_mlp(Role::classifier, {k, hc, c}, rng));
        const auto disc = randomized(nn::make_mlp(Role::discriminator, {k, hc, 1}, rng));
        const auto x = random_matrix(n, d);
        std::uniform_int_distribution<int> label(0, c - 1);
        std::vector<int> y(static_cast<std::size_t>(n));
        for (auto& v : y) v = label(rng);
        const Matrix<LD> xl = x.cast<LD>();
        const auto fL = cast_mlp<LD>(f), cL = cast_mlp<LD>(cl), dL = cast_mlp<LD>(disc);

        // Each network against a random upstream gradient.
        for (const auto* net : {&f, &cl, &disc}) {
            const auto in = random_matrix(n, net->input_dim());
            const auto up = random_matrix(n, net->output_dim());
            nn::ForwardCache<double> cache;
            nn::forward(*net, in, &cache);
            const auto analytic = flatten(nn::backward(*net, cache, up).grads.layers);
            const Matrix<LD> inL = in.cast<LD>(), upL = up.cast<LD>();
            const auto numeric = numeric_gradient(cast_mlp<LD>(*net), [&](const Mlp<LD>& m) {
                return nn::forward(m, inL).cwiseProduct(upL).sum();
            });
            record(max_relative_error(analytic, numeric), std::string(nn::to_string(net->role)), seed);
        }

        // J with respect to extractor and classifier.
        const auto cg = nn::classification_grads(f, cl, x, y);
        record(max_relative_error(flatten(cg.extractor.layers), numeric_gradient(fL, [&](const Mlp<LD>& m) {
                   return nn::cross_entropy(nn::forward(cL, nn::forward(m, xl)), std::span<const int>(y)).loss;
               })),
               "J/extractor", seed);
        record(max_relative_error(flatten(cg.classifier.layers), numeric_gradient(cL, [&](const Mlp<LD>& m) {
                   return nn::cross_entropy(nn::forward(m, nn::forward(fL, xl)), std::span<const int>(y)).loss;
               })),
               "J/classifier", seed);

        // L_D with respect to the discriminator.
        const auto fg = random_matrix(n, k), flo = random_matrix(batch(rng), k);
        const Matrix<LD> fgL = fg.cast<LD>(), floL = flo.cast<LD>();
        const auto dg = nn::discriminator_grads(disc, fg, flo);
        record(max_relative_error(flatten(dg.disc.layers), numeric_gradient(dL, [&](const Mlp<LD>& m) {
                   return nn::disc_loss(nn::discriminate(m, fgL), nn::discriminate(m, floL)).loss;
               })),
               "L_D/discriminator", seed);

        // beta * L^l + (1 - beta) * L_R with respect to the local extractor.
        const double beta = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        const auto lo = nn::local_objective_grads(f, cl, &disc, x, y, beta);
        const LD b = beta;
        record(max_relative_error(flatten(lo.extractor.layers), numeric_gradient(fL, [&](const Mlp<LD>& m) {
                   const Matrix<LD> feat = nn::forward(m, xl);
                   return b * nn::cross_entropy(nn::forward(cL, feat), std::span<const int>(y)).loss +
                          (1 - b) * nn::reg_loss(nn::discriminate(dL, feat)).loss;
               })),
               "local objective/extractor", seed);
    }
    const double elapsed = seconds_since(start);
    return {worst < 1e-4 && elapsed < 30.0, "worst relative error " + fmt(worst, 3) + " (" + worst_case + "), " +
                                                fmt(elapsed, 3) + " s"};
}

// ---------------------------------------------------------------- criterion 2

Verdict aggregation_algebra() {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> size(1, 20);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    int failures = 0;
    std::string first;
    const auto fail = [&](const std::string& what) {
        if (failures++ == 0) first = what;
    };
    double worst_direct = 0.0;
    for (int t = 0; t < 1000; ++t) {
        const bool narrow = t % 2 == 0;  // half the draws in the direct-power comparison range
        std::vector<double> losses(static_cast<std::size_t>(size(rng)));
        for (auto& l : losses) l = narrow ? 0.1 + 4.9 * unit(rng) : std::exp(std::log(1e-3) + unit(rng) * std::log(1e6));
        const double q = narrow ? 10.0 * unit(rng) : 50.0 * unit(rng);
        const auto w = fl::aggregation_weights(losses, q);

        double sum = 0.0;
        for (double v : w) {
            if (!(v >= 0.0)) fail("negative weight");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-9) fail("sum " + fmt(sum, 17));

        const double c = std::exp(std::log(0.01) + unit(rng) * std::log(1e4));
        std::vector<double> scaled(losses);
        for (auto& l : scaled) l *= c;
        const auto ws = fl::aggregation_weights(scaled, q);
        for (std::size_t i = 0; i < w.size(); ++i) {
            if (std::abs(ws[i] - w[i]) > 1e-12) fail("scale dependence " + fmt(std::abs(ws[i] - w[i]), 3));
        }

        for (std::size_t i = 0; i < w.size(); ++i) {
            for (std::size_t j = 0; j < w.size(); ++j) {
                if (!(losses[i] > losses[j]) || q == 0.0) continue;
                if (w[i] < w[j]) fail("monotonicity");
                // Strictness wherever the gap is representable and not underflowed.
                if (q * std::log(losses[i] / losses[j]) > 1e-12 && w[i] > 1e-300 && !(w[i] > w[j])) {
                    fail("strict monotonicity");
                }
            }
        }

        const auto uniform = fl::aggregation_weights(losses, 0.0);
        for (double v : uniform) {
            if (v != 1.0 / static_cast<double>(losses.size())) fail("q = 0 not exactly uniform");
        }

        if (narrow) {
            const auto direct = fl::aggregation_weights_direct(losses, q);
            for (std::size_t i = 0; i < w.size(); ++i) worst_direct = std::max(worst_direct, std::abs(direct[i] - w[i]));
        }
    }
    if (worst_direct > 1e-12) fail("log-space vs direct " + fmt(worst_direct, 3));
    return {failures == 0, failures == 0 ? "1000 draws, max |log-space - direct| = " + fmt(worst_direct, 3)
                                         : std::to_string(failures) + " violations, first: " + first};
}

// ---------------------------------------------------------------- criterion 3

Verdict power_update() {
    const double up = fl::adapt_q(10.0, 1.0, 3.0, 0.5).q;
    const double down = fl::adapt_q(10.0, 3.0, 1.0, 0.5).q;
    const double same = fl::adapt_q(10.0, 2.0, 2.0, 0.5).q;
    const bool ok = std::abs(up - 10.5) <= 1e-12 && std::abs(down - 9.5) <= 1e-12 && std::abs(same - 10.0) <= 1e-12;
    return {ok, "sigma 1->3: " + fmt(up, 17) + ", 3->1: " + fmt(down, 17) + ", equal: " + fmt(same, 17)};
}

// ---------------------------------------------------------------- criterion 4

ExperimentConfig reference(std::uint64_t seed) {
    ExperimentConfig c = reference_experiment();
    c.seed = seed;
    c.eval_every = c.strategy.rounds;
    return c.resolved();
}

Verdict reductions() {
    const int rounds = 20;
    int mismatches = 0;
    for (std::uint64_t seed : {1u, 2u}) {
        const auto base = reference(seed);
        const auto fed = load_data(base);

        auto grp = base.strategy;
        grp.rounds = rounds;
        grp.eta_q = 0.0;
        auto qffl = grp;
        qffl.kind = fl::StrategyKind::q_ffl;
        qffl = qffl.resolved();
        auto a = fl::initialize(fed, grp), b = fl::initialize(fed, qffl);

        auto plain = base.strategy;
        plain.rounds = rounds;
        plain.q0 = 0.0;
        plain.eta_q = 0.0;
        plain.beta = 1.0;
        plain.discriminator = false;
        auto avg = plain;
        avg.kind = fl::StrategyKind::fed_avg;
        auto c = fl::initialize(fed, plain), d = fl::initialize(fed, avg);

        for (int t = 0; t < rounds; ++t) {
            const auto ra = fl::run_round(a, fed, grp), rb = fl::run_round(b, fed, qffl);
            const auto rc = fl::run_round(c, fed, plain), rd = fl::run_round(d, fed, avg);
            if (!(a.server.extractor == b.server.extractor) || !(a.server.classifier == b.server.classifier) ||
                ra.losses != rb.losses || ra.lambda != rb.lambda) {
                ++mismatches;
            }
            if (!(c.server.extractor == d.server.extractor) || !(c.server.classifier == d.server.classifier) ||
                rc.losses != rd.losses || rc.lambda != rd.lambda) {
                ++mismatches;
            }
        }
    }
    return {mismatches == 0, std::to_string(mismatches) + " mismatching rounds over 2 seeds x " +
                                 std::to_string(rounds) + " rounds x 2 reductions"};
}

// ---------------------------------------------------------------- criterion 5

Verdict metric_oracle() {
    long checked = 0;
    double worst = 0.0;
    for (int c = 1; c <= 4; ++c) {
        testing::for_each_confusion(c, 8, [&](const metrics::CountMatrix& m) {
            ++checked;
            const double got = metrics::macro_f1(metrics::ConfusionMatrix(m));
            worst = std::max(worst, std::abs(got - static_cast<double>(testing::brute_force_macro_f1(m))));
        });
    }
    const double tl = metrics::harmonic_local_score(0.933, 0.076);
    const bool ok = worst <= 1e-12 && std::abs(tl - 0.140) <= 0.001;
    return {ok, std::to_string(checked) + " matrices, max deviation " + fmt(worst, 3) + "; T_l(0.933, 0.076) = " +
                    fmt(tl, 6)};
}

// ---------------------------------------------------------- criteria 6 to 8

struct RunScores {
    double max_loss = 0.0;
    metrics::EvalReport eval;
};

RunScores train_reference(std::uint64_t seed, fl::StrategyKind kind, std::optional<double> beta = std::nullopt) {
    ExperimentConfig c = reference_experiment();
    c.seed = seed;
    c.strategy.kind = kind;
    if (beta) c.strategy.beta = *beta;
    c.eval_every = c.strategy.rounds;
    const auto r = c.resolved();
    const auto fed = load_data(r);
    const auto run = run_experiment(r, fed);
    if (run.aborted) throw NumericalError("reference run aborted: " + run.abort_reason);
    return {run.reports.back().max_loss, run.final_eval};
}

const std::vector<std::uint64_t> kSeeds{1, 2, 3, 4, 5};

// Runs are cached so criteria 6 and 7 share their paired runs.
const RunScores& cached(std::uint64_t seed, fl::StrategyKind kind) {
    static std::map<std::pair<std::uint64_t, fl::StrategyKind>, RunScores> cache;
    const auto key = std::make_pair(seed, kind);
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, train_reference(seed, kind)).first;
    return it->second;
}

Verdict fairness() {
    const auto start = Clock::now();
    std::vector<double> grp, avg;
    for (auto s : kSeeds) {
        grp.push_back(cached(s, fl::StrategyKind::grp_fed).max_loss);
        avg.push_back(cached(s, fl::StrategyKind::fed_avg).max_loss);
    }
    const double elapsed = seconds_since(start);
    const double mg = median(grp), ma = median(avg);
    return {mg <= ma && elapsed < 600.0, "median final max L^g: GRP-FED " + fmt(mg) + ", FedAvg " + fmt(ma) + " (" +
                                             fmt(elapsed, 3) + " s)"};
}

Verdict overfitting() {
    std::vector<double> tp_local, tr_local, tl_local, tp_grp, tr_grp, tl_grp, tl_avg;
    for (auto s : kSeeds) {
        const auto& l = cached(s, fl::StrategyKind::local_only).eval;
        const auto& g = cached(s, fl::StrategyKind::grp_fed).eval;
        const auto& a = cached(s, fl::StrategyKind::fed_avg).eval;
        tp_local.push_back(l.personalization);
        tr_local.push_back(l.generalization);
        tl_local.push_back(l.local_test);
        tp_grp.push_back(g.personalization);
        tr_grp.push_back(g.generalization);
        tl_grp.push_back(g.local_test);
        tl_avg.push_back(a.local_test);
    }
    const bool signature = median(tp_local) > median(tp_grp) && median(tr_local) < median(tr_grp);
    const bool harmonic = median(tl_grp) > median(tl_avg) && median(tl_grp) > median(tl_local);
    return {signature && harmonic,
            "median T_p local " + fmt(median(tp_local)) + " vs GRP-FED " + fmt(median(tp_grp)) + "; T_r local " +
                fmt(median(tr_local)) + " vs GRP-FED " + fmt(median(tr_grp)) + "; T_l GRP-FED " +
                fmt(median(tl_grp)) + " vs FedAvg " + fmt(median(tl_avg)) + " vs local " + fmt(median(tl_local)) +
                (signature ? "" : " [signature not met]") + (harmonic ? "" : " [T_l ordering not met]")};
}

int inversions(const std::vector<double>& v, bool increasing) {
    int n = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (increasing ? v[i] < v[i - 1] : v[i] > v[i - 1]) ++n;
    }
    return n;
}

Verdict beta_tradeoff() {
    const std::vector<double> betas{0.1, 0.3, 0.5, 0.7, 0.9};
    std::vector<double> tp, tr;
    for (double b : betas) {
        std::vector<double> p, r;
        for (auto s : kSeeds) {
            const auto run = train_reference(s, fl::StrategyKind::grp_fed, b);
            p.push_back(run.eval.personalization);
            r.push_back(run.eval.generalization);
        }
        tp.push_back(median(p));
        tr.push_back(median(r));
    }
    const int ip = inversions(tp, true), ir = inversions(tr, false);
    std::string detail = "beta 0.1..0.9: T_p";
    for (double v : tp) detail += " " + fmt(v, 3);
    detail += " (" + std::to_string(ip) + " inversions); T_r";
    for (double v : tr) detail += " " + fmt(v, 3);
    detail += " (" + std::to_string(ir) + " inversions)";
    return {ip <= 1 && ir <= 1, detail};
}

// ---------------------------------------------------------------- criterion 9

std::string slurp(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Verdict determinism() {
    const fs::path root = fs::temp_directory_path() / "grpfed-acceptance-determinism";
    fs::remove_all(root);
    std::ostringstream log;
    int compared = 0, differing = 0;
    for (auto kind : {fl::StrategyKind::grp_fed, fl::StrategyKind::local_only}) {
        ExperimentConfig c = reference_experiment();
        c.seed = 7;
        c.strategy.kind = kind;
        const auto r = c.resolved();
        const fs::path a = root / (fl::to_string(kind) + "-a"), b = root / (fl::to_string(kind) + "-b");
        app::train(r, a, false, log);
        app::train(r, b, false, log);
        for (const auto& entry : fs::directory_iterator(a)) {
            ++compared;
            if (slurp(entry.path()) != slurp(b / entry.path().filename())) ++differing;
        }
    }
    fs::remove_all(root);
    return {differing == 0 && compared > 0,
            std::to_string(compared) + " files compared across 2 repeated runs, " + std::to_string(differing) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App cli{"acceptance criteria"};
    std::vector<int> selected;
    cli.add_option("--criterion", selected, "criterion number 1-9 (repeatable); default all")
        ->check(CLI::Range(1, 9));
    CLI11_PARSE(cli, argc, argv);
    if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8, 9};

    const std::map<int, std::pair<std::string, std::function<Verdict()>>> criteria{
        {1, {"gradient correctness", gradient_check}},
        {2, {"aggregation algebra", aggregation_algebra}},
        {3, {"power update", power_update}},
        {4, {"reductions", reductions}},
        {5, {"metric oracle", metric_oracle}},
        {6, {"fairness experiment", fairness}},
        {7, {"overfitting signature", overfitting}},
        {8, {"beta trade-off", beta_tradeoff}},
        {9, {"determinism", determinism}},
    };

    int failed = 0;
    for (int id : selected) {
        const auto& [name, check] = criteria.at(id);
        Verdict v;
        try {
            v = check();
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        if (!v.pass) ++failed;
        std::cout << "criterion " << id << " (" << name << "): " << (v.pass ? "PASS" : "FAIL") << " | " << v.detail
                  << std::endl;
    }
    return failed == 0 ? 0 : 1;
}

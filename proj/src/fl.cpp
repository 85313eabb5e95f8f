#include "grpfed/fl.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <numeric>
#include <sstream>
#include <thread>

#include "grpfed/config_keys.hpp"
#include "grpfed/errors.hpp"

namespace grpfed::fl {

using nlohmann::json;

namespace {

constexpr double kLossFloor = 1e-12;

void check_finite(double v, const std::string& what) {
    if (!std::isfinite(v)) throw NumericalError(what + " is not finite");
}

std::vector<Eigen::Index> slice(const std::vector<Eigen::Index>& order, std::size_t begin, std::size_t end) {
    return {order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(end)};
}

json layers_to_json(const std::vector<nn::DenseLayer<double>>& layers) {
    json out = json::array();
    for (const auto& l : layers) {
        out.push_back({{"rows", l.weight.rows()},
                       {"cols", l.weight.cols()},
                       {"weight", std::vector<double>(l.weight.data(), l.weight.data() + l.weight.size())},
                       {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
    }
    return out;
}

std::vector<nn::DenseLayer<double>> layers_from_json(const json& j) {
    std::vector<nn::DenseLayer<double>> layers;
    for (const auto& e : j) {
        const auto rows = e.at("rows").get<Eigen::Index>();
        const auto cols = e.at("cols").get<Eigen::Index>();
        const auto w = e.at("weight").get<std::vector<double>>();
        const auto b = e.at("bias").get<std::vector<double>>();
        if (static_cast<Eigen::Index>(w.size()) != rows * cols || static_cast<Eigen::Index>(b.size()) != rows) {
            throw DataError("checkpoint: layer size mismatch");
        }
        layers.push_back({Eigen::Map<const Eigen::MatrixXd>(w.data(), rows, cols),
                          Eigen::Map<const Eigen::VectorXd>(b.data(), rows)});
    }
    return layers;
}

json opt_to_json(const Optimizer& o) {
    return {{"learning_rate", o.learning_rate}, {"momentum", o.momentum}, {"velocity", layers_to_json(o.velocity)}};
}

Optimizer opt_from_json(const json& j) {
    return {layers_from_json(j.at("velocity")), j.at("learning_rate").get<double>(), j.at("momentum").get<double>()};
}

template <typename T>
json optional_to_json(const std::optional<T>& v) {
    return v ? json(*v) : json(nullptr);
}

std::optional<double> optional_double(const json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

}  // namespace

std::string to_string(StrategyKind kind) {
    switch (kind) {
        case StrategyKind::grp_fed: return "grp-fed";
        case StrategyKind::fed_avg: return "fedavg";
        case StrategyKind::q_ffl: return "qffl";
        case StrategyKind::local_only: return "local";
    }
    return "unknown";
}

StrategyKind strategy_from_string(const std::string& name) {
    std::string n;
    for (char c : name) {
        if (c != '-' && c != '_') n.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    if (n == "grpfed") return StrategyKind::grp_fed;
    if (n == "fedavg") return StrategyKind::fed_avg;
    if (n == "qffl") return StrategyKind::q_ffl;
    if (n == "local" || n == "localonly") return StrategyKind::local_only;
    throw ConfigError("unknown strategy '" + name + "'");
}

void StrategyConfig::validate() const {
    if (!(q0 >= 0.0) || !std::isfinite(q0)) throw ConfigError("q0 must be finite and >= 0");
    if (!(eta_q >= 0.0)) throw ConfigError("eta_q must be >= 0");
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0, 1]");
    if (local_epochs < 1) throw ConfigError("local_epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(client_fraction > 0.0 && client_fraction <= 1.0)) throw ConfigError("client_fraction must lie in (0, 1]");
    if (rounds < 0) throw ConfigError("rounds must be >= 0");
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (model.extractor_hidden < 1 || model.feature_dim < 1 || model.classifier_hidden < 1 ||
        model.discriminator_hidden < 1) {
        throw ConfigError("model widths must be positive");
    }
}

StrategyConfig StrategyConfig::resolved() const {
    validate();
    StrategyConfig c = *this;
    if (c.kind == StrategyKind::q_ffl) c.eta_q = 0.0;
    return c;
}

void to_json(json& j, const StrategyConfig& c) {
    j = json{{"strategy", to_string(c.kind)},
             {"q0", c.q0},
             {"eta_q", c.eta_q},
             {"beta", c.beta},
             {"local_epochs", c.local_epochs},
             {"batch_size", c.batch_size},
             {"client_fraction", c.client_fraction},
             {"rounds", c.rounds},
             {"learning_rate", c.learning_rate},
             {"momentum", c.momentum},
             {"discriminator", c.discriminator},
             {"workers", c.workers},
             {"seed", c.seed},
             {"model",
              {{"extractor_hidden", c.model.extractor_hidden},
               {"feature_dim", c.model.feature_dim},
               {"classifier_hidden", c.model.classifier_hidden},
               {"discriminator_hidden", c.model.discriminator_hidden}}}};
    // Fields that carry no meaning for a strategy are omitted.
    if (c.kind == StrategyKind::local_only || c.kind == StrategyKind::fed_avg) {
        j.erase("q0");
        j.erase("eta_q");
    }
    if (c.kind != StrategyKind::grp_fed) {
        j.erase("beta");
        j.erase("discriminator");
    }
}

void from_json(const json& j, StrategyConfig& c) {
    require_known_keys(j,
                       {"strategy", "q0", "eta_q", "beta", "local_epochs", "batch_size", "client_fraction", "rounds",
                        "learning_rate", "momentum", "discriminator", "workers", "seed", "model"},
                       "strategy");
    StrategyConfig d;
    c.kind = strategy_from_string(j.value("strategy", to_string(d.kind)));
    c.q0 = j.value("q0", d.q0);
    c.eta_q = j.value("eta_q", d.eta_q);
    c.beta = j.value("beta", d.beta);
    c.local_epochs = j.value("local_epochs", d.local_epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.client_fraction = j.value("client_fraction", d.client_fraction);
    c.rounds = j.value("rounds", d.rounds);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.momentum = j.value("momentum", d.momentum);
    c.discriminator = j.value("discriminator", d.discriminator);
    c.workers = j.value("workers", d.workers);
    c.seed = j.value("seed", d.seed);
    if (j.contains("model")) {
        const auto& m = j["model"];
        require_known_keys(m, {"extractor_hidden", "feature_dim", "classifier_hidden", "discriminator_hidden"}, "model");
        c.model.extractor_hidden = m.value("extractor_hidden", d.model.extractor_hidden);
        c.model.feature_dim = m.value("feature_dim", d.model.feature_dim);
        c.model.classifier_hidden = m.value("classifier_hidden", d.model.classifier_hidden);
        c.model.discriminator_hidden = m.value("discriminator_hidden", d.model.discriminator_hidden);
    }
}

FederatedState initialize(const data::Federation& fed, const StrategyConfig& config) {
    config.validate();
    if (fed.clients.empty()) throw DataError("federation has no clients");
    const auto& m = config.model;
    std::mt19937_64 rng(config.seed);
    FederatedState s;
    s.kind = config.kind;
    s.num_classes = fed.num_classes;
    s.server.extractor = nn::make_mlp(nn::Role::extractor,
                                      {fed.feature_dim, m.extractor_hidden, m.extractor_hidden, m.feature_dim}, rng);
    s.server.classifier = nn::make_mlp(nn::Role::classifier, {m.feature_dim, m.classifier_hidden, fed.num_classes}, rng);
    s.server.q = config.q0;
    for (const auto& c : fed.clients) {
        ClientState cs;
        cs.client_id = c.client_id;
        cs.local_extractor = s.server.extractor;
        cs.discriminator = nn::make_mlp(nn::Role::discriminator, {m.feature_dim, m.discriminator_hidden, 1}, rng);
        cs.local_opt = nn::make_optimizer(cs.local_extractor, config.learning_rate, config.momentum);
        cs.disc_opt = nn::make_optimizer(cs.discriminator, config.learning_rate, config.momentum);
        if (config.kind == StrategyKind::local_only) {
            cs.own_classifier = s.server.classifier;
            cs.own_classifier_opt = nn::make_optimizer(*cs.own_classifier, config.learning_rate, config.momentum);
        }
        s.clients.push_back(std::move(cs));
    }
    s.server.rng.seed(rng());
    return s;
}

std::mt19937_64 client_rng(std::uint64_t seed, int round, int client_id) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(round), static_cast<std::uint32_t>(client_id), 0x9e3779b9u};
    return std::mt19937_64(seq);
}

std::vector<int> select_clients(int num_clients, double fraction, std::mt19937_64& rng) {
    const int k = static_cast<int>(std::ceil(fraction * num_clients - 1e-12));
    if (k < 1 || k > num_clients) throw ConfigError("client_fraction selects " + std::to_string(k) + " clients");
    std::vector<int> all(static_cast<std::size_t>(num_clients));
    std::iota(all.begin(), all.end(), 0);
    if (k == num_clients) return all;
    // Partial Fisher-Yates.
    for (int i = 0; i < k; ++i) {
        std::uniform_int_distribution<int> pick(i, num_clients - 1);
        std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(pick(rng))]);
    }
    all.resize(static_cast<std::size_t>(k));
    std::sort(all.begin(), all.end());
    return all;
}

ClientResult client_update(const ClientState& client, const Mlp& global_extractor, const Mlp& classifier,
                           const data::LabeledSet& train, const StrategyConfig& config, StrategyKind kind,
                           std::mt19937_64& rng) {
    if (train.empty()) throw DataError("client " + std::to_string(client.client_id) + " has no training data");
    if (client.local_extractor.output_dim() != global_extractor.output_dim()) {
        throw ConfigError("local and global extractors produce different feature widths");
    }
    const std::string who = "client " + std::to_string(client.client_id);

    ClientResult r{global_extractor, classifier, 0.0, 0.0, 0.0, 0.0, client};
    const Mlp& snapshot = global_extractor;
    auto ext_opt = nn::make_optimizer(r.extractor, config.learning_rate, config.momentum);
    auto cls_opt = nn::make_optimizer(r.classifier, config.learning_rate, config.momentum);
    ClientState& cs = r.client;

    const bool global_phase = has_global_model(kind);
    const bool personal_phase = kind == StrategyKind::grp_fed;
    const bool disc_phase = personal_phase && config.discriminator;

    std::vector<Eigen::Index> order(static_cast<std::size_t>(train.size()));
    std::iota(order.begin(), order.end(), 0);
    const auto n = order.size();
    const auto bs = static_cast<std::size_t>(config.batch_size);

    for (int epoch = 0; epoch < config.local_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double g_sum = 0.0, l_sum = 0.0, r_sum = 0.0, d_sum = 0.0;
        for (std::size_t begin = 0; begin < n; begin += bs) {
            const auto rows = slice(order, begin, std::min(n, begin + bs));
            const Eigen::MatrixXd xb = train.x(rows, Eigen::all);
            std::vector<int> yb;
            yb.reserve(rows.size());
            for (auto i : rows) yb.push_back(train.y[static_cast<std::size_t>(i)]);
            const double nb = static_cast<double>(rows.size());

            if (global_phase) {
                auto g = nn::classification_grads(r.extractor, r.classifier, xb, std::span<const int>(yb));
                check_finite(g.loss, who + " global loss");
                nn::sgd_step(r.extractor, g.extractor, ext_opt);
                nn::sgd_step(r.classifier, g.classifier, cls_opt);
                g_sum += g.loss * nb;
            }
            if (personal_phase) {
                // Classifier (the client's in-flight copy) and discriminator are frozen here.
                auto lo = nn::local_objective_grads(cs.local_extractor, r.classifier,
                                                    disc_phase ? &cs.discriminator : nullptr, xb,
                                                    std::span<const int>(yb), config.beta);
                check_finite(lo.total, who + " local objective");
                nn::sgd_step(cs.local_extractor, lo.extractor, cs.local_opt);
                l_sum += lo.classification * nb;
                r_sum += lo.regularizer * nb;
            }
            if (disc_phase) {
                const Eigen::MatrixXd fg = nn::forward_features(snapshot, xb);
                const Eigen::MatrixXd fl = nn::forward_features(cs.local_extractor, xb);
                auto dg = nn::discriminator_grads(cs.discriminator, fg, fl);
                check_finite(dg.loss, who + " discriminator loss");
                nn::sgd_step(cs.discriminator, dg.disc, cs.disc_opt);
                d_sum += dg.loss * nb;
            }
            if (kind == StrategyKind::local_only) {
                auto g = nn::classification_grads(cs.local_extractor, *cs.own_classifier, xb, std::span<const int>(yb));
                check_finite(g.loss, who + " local loss");
                nn::sgd_step(cs.local_extractor, g.extractor, cs.local_opt);
                nn::sgd_step(*cs.own_classifier, g.classifier, *cs.own_classifier_opt);
                l_sum += g.loss * nb;
            }
        }
        const double inv = 1.0 / static_cast<double>(n);
        r.global_loss = g_sum * inv;
        r.local_loss = l_sum * inv;
        r.reg_loss = r_sum * inv;
        r.disc_loss = d_sum * inv;
    }
    if (global_phase) cs.last_global_loss = r.global_loss;
    return r;
}

QUpdate adapt_q(double q, std::optional<double> prev_std, double std, double eta_q) {
    QUpdate out{q, false};
    if (!prev_std) return out;
    const double denom = (std + *prev_std) / 2.0;
    if (denom == 0.0) return out;
    out.q = q + eta_q * (std - *prev_std) / denom;
    if (out.q < 0.0) {
        out.q = 0.0;
        out.floored = true;
    }
    return out;
}

std::vector<double> aggregation_weights(std::span<const double> losses, double q, int* clamped) {
    if (losses.empty()) throw ConfigError("aggregation over an empty client set");
    const auto n = losses.size();
    int n_clamped = 0;
    std::vector<double> a(n);
    for (std::size_t i = 0; i < n; ++i) {
        double l = losses[i];
        if (!(l > 0.0)) {
            l = kLossFloor;
            ++n_clamped;
        }
        a[i] = q * std::log(l);
    }
    if (clamped) *clamped = n_clamped;
    if (q == 0.0) return std::vector<double>(n, 1.0 / static_cast<double>(n));
    const double m = *std::max_element(a.begin(), a.end());
    double s = 0.0;
    for (double v : a) s += std::exp(v - m);
    const double lse = m + std::log(s);
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) w[i] = std::exp(a[i] - lse);
    return w;
}

std::vector<double> aggregation_weights_direct(std::span<const double> losses, double q) {
    std::vector<double> w(losses.size());
    double s = 0.0;
    for (std::size_t i = 0; i < losses.size(); ++i) {
        w[i] = std::pow(losses[i], q);
        s += w[i];
    }
    for (auto& v : w) v /= s;
    return w;
}

Mlp weighted_average(std::span<const Mlp* const> params, std::span<const double> weights) {
    if (params.empty() || params.size() != weights.size()) throw ConfigError("weighted_average: size mismatch");
    Mlp out = *params[0];
    for (auto& l : out.layers) {
        l.weight *= weights[0];
        l.bias *= weights[0];
    }
    for (std::size_t i = 1; i < params.size(); ++i) {
        if (!nn::congruent(out.layers, params[i]->layers)) throw ConfigError("weighted_average: shape mismatch");
        for (std::size_t k = 0; k < out.layers.size(); ++k) {
            out.layers[k].weight += weights[i] * params[i]->layers[k].weight;
            out.layers[k].bias += weights[i] * params[i]->layers[k].bias;
        }
    }
    return out;
}

RoundReport run_round(FederatedState& state, const data::Federation& fed, const StrategyConfig& config) {
    if (state.clients.size() != fed.clients.size()) throw ConfigError("state and federation disagree on client count");
    const StrategyKind kind = state.kind;
    std::mt19937_64 server_rng = state.server.rng;
    RoundReport rep;
    rep.round = state.server.round + 1;
    rep.selected = select_clients(static_cast<int>(fed.clients.size()), config.client_fraction, server_rng);

    const auto n = rep.selected.size();
    std::vector<std::optional<ClientResult>> results(n);
    std::vector<std::exception_ptr> errors(n);
    auto work = [&](std::size_t i) {
        const int m = rep.selected[i];
        try {
            auto rng = client_rng(config.seed, rep.round, m);
            results[i] = client_update(state.clients[static_cast<std::size_t>(m)], state.server.extractor,
                                       state.server.classifier, fed.clients[static_cast<std::size_t>(m)].train, config,
                                       kind, rng);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(config.workers), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) work(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < workers; ++t) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) work(i);
            });
        }
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& r = *results[i];
        const double reported = has_global_model(kind) ? r.global_loss : r.local_loss;
        rep.losses.push_back(reported);
        sum += reported;
        rep.total_loss += r.global_loss + config.beta * r.local_loss + (1.0 - config.beta) * r.reg_loss + r.disc_loss;
        rep.mean_local_loss += r.local_loss / static_cast<double>(n);
        rep.mean_reg_loss += r.reg_loss / static_cast<double>(n);
        rep.mean_disc_loss += r.disc_loss / static_cast<double>(n);
    }
    if (kind == StrategyKind::local_only) {
        rep.total_loss = sum;
    } else if (kind != StrategyKind::grp_fed) {
        rep.total_loss = 0.0;
        for (const auto& r : results) rep.total_loss += r->global_loss;
    }
    // Shifted by the first loss so that identical losses average to exactly that loss.
    double shifted = 0.0;
    for (double l : rep.losses) shifted += l - rep.losses.front();
    rep.mean_loss = rep.losses.front() + shifted / static_cast<double>(n);
    rep.max_loss = *std::max_element(rep.losses.begin(), rep.losses.end());
    rep.loss_std = data::population_std(rep.losses);

    ServerState next_server = state.server;
    next_server.rng = server_rng;
    next_server.round = rep.round;
    if (has_global_model(kind)) {
        int clamped = 0;
        switch (kind) {
            case StrategyKind::grp_fed: {
                const auto qu = adapt_q(state.server.q, state.server.prev_loss_std, rep.loss_std, config.eta_q);
                if (qu.floored) rep.warnings.push_back("loss power q fell below 0 and was floored");
                next_server.q = qu.q;
                rep.lambda = aggregation_weights(rep.losses, next_server.q, &clamped);
                rep.q = next_server.q;
                break;
            }
            case StrategyKind::q_ffl:
                next_server.q = config.q0;
                rep.lambda = aggregation_weights(rep.losses, next_server.q, &clamped);
                rep.q = next_server.q;
                break;
            default:
                rep.lambda.assign(n, 1.0 / static_cast<double>(n));
                break;
        }
        if (clamped > 0) rep.warnings.push_back(std::to_string(clamped) + " non-positive client loss(es) clamped to 1e-12");
        next_server.prev_loss_std = rep.loss_std;

        std::vector<const Mlp*> exts, clss;
        for (const auto& r : results) {
            exts.push_back(&r->extractor);
            clss.push_back(&r->classifier);
        }
        next_server.extractor = weighted_average(exts, rep.lambda);
        next_server.classifier = weighted_average(clss, rep.lambda);
        if (!nn::all_finite(next_server.extractor.layers) || !nn::all_finite(next_server.classifier.layers)) {
            throw NumericalError("aggregated global model is not finite in round " + std::to_string(rep.round));
        }
    }

    // Commit.
    state.server = std::move(next_server);
    for (std::size_t i = 0; i < n; ++i) {
        state.clients[static_cast<std::size_t>(rep.selected[i])] = std::move(results[i]->client);
    }
    return rep;
}

Eigen::MatrixXd global_scores(const FederatedState& state, const Eigen::MatrixXd& x) {
    if (has_global_model(state.kind)) {
        return nn::forward_classify(state.server.classifier, nn::forward_features(state.server.extractor, x));
    }
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(x.rows(), state.num_classes);
    for (std::size_t m = 0; m < state.clients.size(); ++m) {
        acc += nn::softmax(local_scores(state, static_cast<int>(m), x));
    }
    return acc / static_cast<double>(state.clients.size());
}

Eigen::MatrixXd local_scores(const FederatedState& state, int client, const Eigen::MatrixXd& x) {
    if (client < 0 || client >= static_cast<int>(state.clients.size())) {
        throw ConfigError("unknown client id " + std::to_string(client));
    }
    const auto& cs = state.clients[static_cast<std::size_t>(client)];
    switch (state.kind) {
        case StrategyKind::grp_fed:
            return nn::forward_classify(state.server.classifier, nn::forward_features(cs.local_extractor, x));
        case StrategyKind::local_only:
            return nn::forward_classify(*cs.own_classifier, nn::forward_features(cs.local_extractor, x));
        default:
            return global_scores(state, x);
    }
}

std::vector<int> argmax_rows(const Eigen::MatrixXd& scores) {
    std::vector<int> out(static_cast<std::size_t>(scores.rows()));
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < scores.cols(); ++c) {
            if (scores(i, c) > scores(i, best)) best = c;
        }
        out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
}

int infer(const Eigen::VectorXd& x, std::optional<int> owner, const FederatedState& state) {
    const Eigen::MatrixXd row = x.transpose();
    const auto scores = owner ? local_scores(state, *owner, row) : global_scores(state, row);
    return argmax_rows(scores).front();
}

json mlp_to_json(const Mlp& m) {
    return {{"role", std::string(nn::to_string(m.role))}, {"layers", layers_to_json(m.layers)}};
}

Mlp mlp_from_json(const json& j) {
    Mlp m;
    m.role = nn::role_from_string(j.at("role").get<std::string>());
    m.layers = layers_from_json(j.at("layers"));
    nn::validate(m);
    return m;
}

json checkpoint_to_json(const FederatedState& state) {
    std::ostringstream rng;
    rng << state.server.rng;
    json clients = json::array();
    for (const auto& c : state.clients) {
        json cj{{"client_id", c.client_id},
                {"local_extractor", mlp_to_json(c.local_extractor)},
                {"discriminator", mlp_to_json(c.discriminator)},
                {"local_opt", opt_to_json(c.local_opt)},
                {"disc_opt", opt_to_json(c.disc_opt)},
                {"last_global_loss", optional_to_json(c.last_global_loss)}};
        if (c.own_classifier) {
            cj["own_classifier"] = mlp_to_json(*c.own_classifier);
            cj["own_classifier_opt"] = opt_to_json(*c.own_classifier_opt);
        }
        clients.push_back(std::move(cj));
    }
    return {{"schema", "grpfed.checkpoint/1"},
            {"strategy", to_string(state.kind)},
            {"num_classes", state.num_classes},
            {"server",
             {{"extractor", mlp_to_json(state.server.extractor)},
              {"classifier", mlp_to_json(state.server.classifier)},
              {"q", state.server.q},
              {"prev_loss_std", optional_to_json(state.server.prev_loss_std)},
              {"round", state.server.round},
              {"rng", rng.str()}}},
            {"clients", clients}};
}

FederatedState checkpoint_from_json(const json& j) {
    if (j.value("schema", std::string()) != "grpfed.checkpoint/1") throw DataError("not a grpfed checkpoint");
    FederatedState s;
    s.kind = strategy_from_string(j.at("strategy").get<std::string>());
    s.num_classes = j.at("num_classes").get<int>();
    const auto& sj = j.at("server");
    s.server.extractor = mlp_from_json(sj.at("extractor"));
    s.server.classifier = mlp_from_json(sj.at("classifier"));
    s.server.q = sj.at("q").get<double>();
    s.server.prev_loss_std = optional_double(sj.at("prev_loss_std"));
    s.server.round = sj.at("round").get<int>();
    std::istringstream rng(sj.at("rng").get<std::string>());
    rng >> s.server.rng;
    for (const auto& cj : j.at("clients")) {
        ClientState c;
        c.client_id = cj.at("client_id").get<int>();
        c.local_extractor = mlp_from_json(cj.at("local_extractor"));
        c.discriminator = mlp_from_json(cj.at("discriminator"));
        c.local_opt = opt_from_json(cj.at("local_opt"));
        c.disc_opt = opt_from_json(cj.at("disc_opt"));
        c.last_global_loss = optional_double(cj.at("last_global_loss"));
        if (cj.contains("own_classifier")) {
            c.own_classifier = mlp_from_json(cj["own_classifier"]);
            c.own_classifier_opt = opt_from_json(cj.at("own_classifier_opt"));
        }
        s.clients.push_back(std::move(c));
    }
    return s;
}

}  // namespace grpfed::fl

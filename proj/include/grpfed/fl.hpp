#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "grpfed/data.hpp"
#include "grpfed/nn.hpp"
#include "json.hpp"

namespace grpfed::fl {

using Mlp = nn::Mlp<double>;
using Optimizer = nn::OptimizerState<double>;

enum class StrategyKind { grp_fed, fed_avg, q_ffl, local_only };

std::string to_string(StrategyKind kind);
StrategyKind strategy_from_string(const std::string& name);

// Strategies that keep per-client local extractors.
inline bool has_local_models(StrategyKind k) { return k == StrategyKind::grp_fed || k == StrategyKind::local_only; }
// Strategies that train and aggregate a global model.
inline bool has_global_model(StrategyKind k) { return k != StrategyKind::local_only; }

struct ModelConfig {
    int extractor_hidden = 64;
    int feature_dim = 32;
    int classifier_hidden = 32;
    int discriminator_hidden = 32;
};

struct StrategyConfig {
    StrategyKind kind = StrategyKind::grp_fed;
    double q0 = 10.0;
    double eta_q = 0.5;
    double beta = 0.5;
    int local_epochs = 5;
    int batch_size = 64;
    double client_fraction = 0.5;
    int rounds = 100;
    double learning_rate = 5e-3;
    double momentum = 0.9;
    bool discriminator = true;  // GRP-FED only: phase-3 updates and the L_R term
    int workers = 1;            // concurrent client updates per round
    std::uint64_t seed = 0;
    ModelConfig model;

    // Applies strategy reductions (q-FFL pins eta_q = 0) and range checks.
    [[nodiscard]] StrategyConfig resolved() const;
    void validate() const;
};

void to_json(nlohmann::json& j, const StrategyConfig& c);
void from_json(const nlohmann::json& j, StrategyConfig& c);

struct ServerState {
    Mlp extractor;
    Mlp classifier;
    double q = 0.0;
    std::optional<double> prev_loss_std;
    int round = 0;
    std::mt19937_64 rng;
};

struct ClientState {
    int client_id = 0;
    Mlp local_extractor;
    Mlp discriminator;
    Optimizer local_opt;
    Optimizer disc_opt;
    // Local-only training owns a private classifier in place of the shared one.
    std::optional<Mlp> own_classifier;
    std::optional<Optimizer> own_classifier_opt;
    std::optional<double> last_global_loss;
};

struct FederatedState {
    StrategyKind kind = StrategyKind::grp_fed;
    int num_classes = 0;
    ServerState server;
    std::vector<ClientState> clients;
};

// Fresh models from the strategy seed. Every local extractor starts as a
// copy of the initial global extractor.
FederatedState initialize(const data::Federation& fed, const StrategyConfig& config);

// Seeds the per-(round, client) training stream; independent of scheduling.
std::mt19937_64 client_rng(std::uint64_t seed, int round, int client_id);

// ceil(fraction * M) distinct clients, ascending.
std::vector<int> select_clients(int num_clients, double fraction, std::mt19937_64& rng);

struct ClientResult {
    Mlp extractor;   // trained copy of the global extractor
    Mlp classifier;  // trained copy of the classifier
    double global_loss = 0.0;  // final-epoch mean J of the global model
    double local_loss = 0.0;   // final-epoch mean L^l
    double reg_loss = 0.0;     // final-epoch mean L_R
    double disc_loss = 0.0;    // final-epoch mean L_D
    ClientState client;
};

ClientResult client_update(const ClientState& client, const Mlp& global_extractor, const Mlp& classifier,
                           const data::LabeledSet& train, const StrategyConfig& config, StrategyKind kind,
                           std::mt19937_64& rng);

struct QUpdate {
    double q = 0.0;
    bool floored = false;
};

// Loss-dispersion driven power update; no-op without a previous dispersion
// or when both dispersions are zero. Result is floored at 0.
QUpdate adapt_q(double q, std::optional<double> prev_std, double std, double eta_q);

// lambda_m proportional to loss_m^q, evaluated in log space. q == 0 gives
// exactly 1/n. Non-positive losses are clamped to 1e-12 and counted in
// clamped (if given).
std::vector<double> aggregation_weights(std::span<const double> losses, double q, int* clamped = nullptr);

// Direct-power evaluation of the same weights; reference for tests.
std::vector<double> aggregation_weights_direct(std::span<const double> losses, double q);

// sum_i w_i * params_i accumulated in index order.
Mlp weighted_average(std::span<const Mlp* const> params, std::span<const double> weights);

struct RoundReport {
    int round = 0;
    std::vector<int> selected;
    std::vector<double> losses;          // L^g per selected client (L^l for local-only)
    std::vector<double> lambda;          // empty when nothing is aggregated
    std::optional<double> q;             // only for loss-powered strategies
    double mean_loss = 0.0;
    double max_loss = 0.0;
    double loss_std = 0.0;
    double total_loss = 0.0;             // sum over S_t of every optimised term
    double mean_local_loss = 0.0;        // L^l, personalised strategies
    double mean_reg_loss = 0.0;          // L_R
    double mean_disc_loss = 0.0;         // L_D
    std::vector<std::string> warnings;
};

// One federated round. On failure the state is left untouched and the
// exception propagates.
RoundReport run_round(FederatedState& state, const data::Federation& fed, const StrategyConfig& config);

// Logits of the model that serves clients without an owner. For local-only
// strategies this is the ensemble (mean softmax) of all local models.
Eigen::MatrixXd global_scores(const FederatedState& state, const Eigen::MatrixXd& x);

// Logits (or ensemble probabilities) of client m's personalised model;
// global-only strategies fall back to the global model.
Eigen::MatrixXd local_scores(const FederatedState& state, int client, const Eigen::MatrixXd& x);

// Row-wise argmax with the lowest index winning ties.
std::vector<int> argmax_rows(const Eigen::MatrixXd& scores);

// Routes x to client owner's local model, or to the global model.
int infer(const Eigen::VectorXd& x, std::optional<int> owner, const FederatedState& state);

nlohmann::json checkpoint_to_json(const FederatedState& state);
FederatedState checkpoint_from_json(const nlohmann::json& j);

nlohmann::json mlp_to_json(const Mlp& m);
Mlp mlp_from_json(const nlohmann::json& j);

}  // namespace grpfed::fl

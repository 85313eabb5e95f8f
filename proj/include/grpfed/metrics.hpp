#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "grpfed/data.hpp"
#include "grpfed/fl.hpp"
#include "json.hpp"

namespace grpfed::metrics {

using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes) : counts_(CountMatrix::Zero(num_classes, num_classes)) {}
    explicit ConfusionMatrix(CountMatrix counts);

    static ConfusionMatrix from_predictions(std::span<const int> truth, std::span<const int> predicted,
                                            int num_classes);

    void add(int truth, int predicted);

    [[nodiscard]] int num_classes() const noexcept { return static_cast<int>(counts_.rows()); }
    [[nodiscard]] std::int64_t total() const { return counts_.sum(); }
    [[nodiscard]] const CountMatrix& counts() const noexcept { return counts_; }
    [[nodiscard]] std::int64_t operator()(int truth, int predicted) const { return counts_(truth, predicted); }

private:
    CountMatrix counts_;
};

// Per-class F1 = 2PR/(P+R); a class with P+R == 0 scores 0, including
// classes that never occur.
std::vector<double> per_class_f1(const ConfusionMatrix& cm);
double macro_f1(const ConfusionMatrix& cm);

// 2 * tp * tr / (tp + tr), or 0 when both are 0.
double harmonic_local_score(double personalization, double generalization);

struct ClientScore {
    int client_id = 0;
    std::optional<double> personalization;  // absent when the client has no test rows
    double generalization = 0.0;
};

struct EvalReport {
    int round = 0;
    double global_test = 0.0;      // T_g
    double personalization = 0.0;  // T_p
    double generalization = 0.0;   // T_r
    double local_test = 0.0;       // T_l
    std::vector<ClientScore> clients;
};

double eval_global(const fl::FederatedState& state, const data::LabeledSet& global_test);

// Fills personalization, generalization and local_test of an EvalReport.
// Clients without test rows are left out of the personalization mean.
EvalReport eval_local(const fl::FederatedState& state, const data::Federation& fed);

EvalReport evaluate(const fl::FederatedState& state, const data::Federation& fed);

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);

struct CurveRow {
    int round = 0;
    double mean_loss = 0.0;
    double max_loss = 0.0;
    std::optional<double> q;
    std::optional<double> lambda_min;
    std::optional<double> lambda_max;
};

struct CurveTable {
    std::vector<CurveRow> rows;

    // Appends one report; rounds must be strictly increasing.
    void append(const fl::RoundReport& report);
    [[nodiscard]] std::string to_csv() const;
    [[nodiscard]] nlohmann::json to_json() const;
};

CurveTable record_curves(std::span<const fl::RoundReport> reports);

std::string eval_history_csv(std::span<const EvalReport> history);

}  // namespace grpfed::metrics

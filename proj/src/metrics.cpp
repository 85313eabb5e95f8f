#include "grpfed/metrics.hpp"

#include <algorithm>
#include <sstream>

#include "grpfed/errors.hpp"

namespace grpfed::metrics {

using nlohmann::json;

namespace {

// Shortest round-trip text for a double.
std::string num(double v) { return json(v).dump(); }

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

}  // namespace

ConfusionMatrix::ConfusionMatrix(CountMatrix counts) : counts_(std::move(counts)) {
    if (counts_.rows() != counts_.cols()) throw ConfigError("confusion matrix must be square");
    if ((counts_.array() < 0).any()) throw DataError("confusion matrix counts must be non-negative");
}

ConfusionMatrix ConfusionMatrix::from_predictions(std::span<const int> truth, std::span<const int> predicted,
                                                  int num_classes) {
    if (truth.size() != predicted.size()) throw ConfigError("truth and prediction lengths differ");
    ConfusionMatrix cm(num_classes);
    for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
    return cm;
}

void ConfusionMatrix::add(int truth, int predicted) {
    if (truth < 0 || truth >= num_classes() || predicted < 0 || predicted >= num_classes()) {
        throw DataError("class index out of range");
    }
    ++counts_(truth, predicted);
}

std::vector<double> per_class_f1(const ConfusionMatrix& cm) {
    const auto& c = cm.counts();
    std::vector<double> f1(static_cast<std::size_t>(cm.num_classes()), 0.0);
    for (int k = 0; k < cm.num_classes(); ++k) {
        const auto tp = static_cast<double>(c(k, k));
        const auto predicted = static_cast<double>(c.col(k).sum());
        const auto actual = static_cast<double>(c.row(k).sum());
        const double p = predicted > 0 ? tp / predicted : 0.0;
        const double r = actual > 0 ? tp / actual : 0.0;
        f1[static_cast<std::size_t>(k)] = (p + r) > 0 ? 2.0 * p * r / (p + r) : 0.0;
    }
    return f1;
}

double macro_f1(const ConfusionMatrix& cm) {
    if (cm.total() <= 0) throw DataError("macro_f1 of an empty confusion matrix");
    const auto f1 = per_class_f1(cm);
    double s = 0.0;
    for (double v : f1) s += v;
    return s / static_cast<double>(f1.size());
}

double harmonic_local_score(double personalization, double generalization) {
    const double s = personalization + generalization;
    return s > 0 ? 2.0 * personalization * generalization / s : 0.0;
}

double eval_global(const fl::FederatedState& state, const data::LabeledSet& global_test) {
    const auto pred = fl::argmax_rows(fl::global_scores(state, global_test.x));
    return macro_f1(ConfusionMatrix::from_predictions(global_test.y, pred, state.num_classes));
}

EvalReport eval_local(const fl::FederatedState& state, const data::Federation& fed) {
    EvalReport r;
    double p_sum = 0.0, g_sum = 0.0;
    int p_count = 0;
    for (std::size_t m = 0; m < fed.clients.size(); ++m) {
        const auto& c = fed.clients[m];
        ClientScore s;
        s.client_id = c.client_id;
        if (!c.test.empty()) {
            const auto pred = fl::argmax_rows(fl::local_scores(state, static_cast<int>(m), c.test.x));
            s.personalization = macro_f1(ConfusionMatrix::from_predictions(c.test.y, pred, state.num_classes));
            p_sum += *s.personalization;
            ++p_count;
        }
        const auto gpred = fl::argmax_rows(fl::local_scores(state, static_cast<int>(m), fed.global_test.x));
        s.generalization = macro_f1(ConfusionMatrix::from_predictions(fed.global_test.y, gpred, state.num_classes));
        g_sum += s.generalization;
        r.clients.push_back(s);
    }
    r.personalization = p_count > 0 ? p_sum / p_count : 0.0;
    r.generalization = g_sum / static_cast<double>(fed.clients.size());
    r.local_test = harmonic_local_score(r.personalization, r.generalization);
    return r;
}

EvalReport evaluate(const fl::FederatedState& state, const data::Federation& fed) {
    EvalReport r = eval_local(state, fed);
    r.round = state.server.round;
    r.global_test = eval_global(state, fed.global_test);
    return r;
}

json to_json(const EvalReport& r) {
    json clients = json::array();
    for (const auto& c : r.clients) {
        clients.push_back({{"client_id", c.client_id},
                           {"personalization", c.personalization ? json(*c.personalization) : json(nullptr)},
                           {"generalization", c.generalization}});
    }
    return {{"schema", "grpfed.eval/1"},
            {"round", r.round},
            {"T_g", r.global_test},
            {"T_p", r.personalization},
            {"T_r", r.generalization},
            {"T_l", r.local_test},
            {"clients", clients}};
}

EvalReport eval_report_from_json(const json& j) {
    EvalReport r;
    r.round = j.at("round").get<int>();
    r.global_test = j.at("T_g").get<double>();
    r.personalization = j.at("T_p").get<double>();
    r.generalization = j.at("T_r").get<double>();
    r.local_test = j.at("T_l").get<double>();
    for (const auto& c : j.value("clients", json::array())) {
        ClientScore s;
        s.client_id = c.at("client_id").get<int>();
        if (!c.at("personalization").is_null()) s.personalization = c["personalization"].get<double>();
        s.generalization = c.at("generalization").get<double>();
        r.clients.push_back(s);
    }
    return r;
}

void CurveTable::append(const fl::RoundReport& report) {
    if (!rows.empty() && report.round <= rows.back().round) {
        throw DataError("round " + std::to_string(report.round) + " reported after round " +
                        std::to_string(rows.back().round));
    }
    CurveRow row;
    row.round = report.round;
    row.mean_loss = report.mean_loss;
    row.max_loss = report.max_loss;
    row.q = report.q;
    if (!report.lambda.empty()) {
        row.lambda_min = *std::min_element(report.lambda.begin(), report.lambda.end());
        row.lambda_max = *std::max_element(report.lambda.begin(), report.lambda.end());
    }
    rows.push_back(row);
}

std::string CurveTable::to_csv() const {
    std::ostringstream out;
    out << "round,mean_loss,max_loss,q,lambda_min,lambda_max\n";
    for (const auto& r : rows) {
        out << r.round << ',' << num(r.mean_loss) << ',' << num(r.max_loss) << ',' << opt_num(r.q) << ','
            << opt_num(r.lambda_min) << ',' << opt_num(r.lambda_max) << '\n';
    }
    return out.str();
}

json CurveTable::to_json() const {
    json out = json::array();
    for (const auto& r : rows) {
        json row{{"round", r.round}, {"mean_loss", r.mean_loss}, {"max_loss", r.max_loss}};
        if (r.q) row["q"] = *r.q;
        if (r.lambda_min) {
            row["lambda_min"] = *r.lambda_min;
            row["lambda_max"] = *r.lambda_max;
        }
        out.push_back(std::move(row));
    }
    return {{"schema", "grpfed.curves/1"}, {"rows", out}};
}

CurveTable record_curves(std::span<const fl::RoundReport> reports) {
    CurveTable t;
    for (const auto& r : reports) t.append(r);
    return t;
}

std::string eval_history_csv(std::span<const EvalReport> history) {
    std::ostringstream out;
    out << "round,T_g,T_p,T_r,T_l\n";
    for (const auto& e : history) {
        out << e.round << ',' << num(e.global_test) << ',' << num(e.personalization) << ','
            << num(e.generalization) << ',' << num(e.local_test) << '\n';
    }
    return out.str();
}

}  // namespace grpfed::metrics

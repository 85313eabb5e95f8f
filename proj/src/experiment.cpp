#include "grpfed/experiment.hpp"

#include <fstream>

#include "grpfed/config_keys.hpp"
#include "grpfed/errors.hpp"

namespace grpfed {

using nlohmann::json;

ExperimentConfig ExperimentConfig::resolved() const {
    if (!seed) throw ConfigError("a seed is required");
    if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
    ExperimentConfig c = *this;
    c.strategy.seed = *seed;
    c.strategy = c.strategy.resolved();
    if (c.label.empty()) c.label = fl::to_string(c.strategy.kind);
    switch (c.data.kind) {
        case DataSource::Kind::synthetic:
            if (!c.data.spec_seed_given) {
                c.data.spec.seed = *seed;
                c.data.spec_seed_given = true;
            }
            c.data.spec.validate();
            break;
        case DataSource::Kind::directory:
            if (!std::filesystem::exists(c.data.path / "manifest.json")) {
                throw ConfigError("data directory " + c.data.path.string() + " has no manifest.json");
            }
            break;
        case DataSource::Kind::tabular:
            if (!std::filesystem::exists(c.data.path)) throw ConfigError("no such file " + c.data.path.string());
            break;
    }
    return c;
}

json to_json(const ExperimentConfig& c) {
    json data;
    switch (c.data.kind) {
        case DataSource::Kind::synthetic: {
            json spec = c.data.spec;
            if (!c.data.spec_seed_given) spec.erase("seed");
            data["synthetic"] = spec;
            break;
        }
        case DataSource::Kind::directory: data["directory"] = c.data.path.string(); break;
        case DataSource::Kind::tabular: data["tabular"] = {{"path", c.data.path.string()}, {"schema", c.data.schema}}; break;
    }
    json out{{"schema", "grpfed.experiment/1"},
             {"label", c.label},
             {"data", data},
             {"strategy", c.strategy},
             {"eval_every", c.eval_every}};
    if (!c.output_dir.empty()) out["output_dir"] = c.output_dir.string();
    if (c.seed) out["seed"] = *c.seed;
    return out;
}

ExperimentConfig experiment_from_json(const json& j) {
    try {
        require_known_keys(j, {"schema", "label", "data", "strategy", "eval_every", "output_dir", "seed"}, "experiment");
        ExperimentConfig c;
        c.label = j.value("label", std::string());
        if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
        c.eval_every = j.value("eval_every", c.eval_every);
        if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
        if (j.contains("strategy")) c.strategy = j["strategy"].get<fl::StrategyConfig>();
        const json data = j.value("data", json::object());
        require_known_keys(data, {"synthetic", "directory", "tabular"}, "data");
        if (data.size() > 1) throw ConfigError("data: give exactly one of synthetic, directory or tabular");
        if (data.contains("directory")) {
            c.data.kind = DataSource::Kind::directory;
            c.data.path = data["directory"].get<std::string>();
        } else if (data.contains("tabular")) {
            c.data.kind = DataSource::Kind::tabular;
            c.data.path = data["tabular"].at("path").get<std::string>();
            c.data.schema = data["tabular"].at("schema").get<data::TabularSchema>();
        } else {
            c.data.kind = DataSource::Kind::synthetic;
            const json spec = data.value("synthetic", json::object());
            c.data.spec = spec.get<data::FederationSpec>();
            c.data.spec_seed_given = spec.contains("seed");
        }
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("experiment config: ") + e.what());
    }
}

ExperimentConfig load_experiment(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config " + file.string());
    try {
        return experiment_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw ConfigError(file.string() + ": " + e.what());
    }
}

ExperimentConfig reference_experiment() {
    ExperimentConfig c;
    c.data.kind = DataSource::Kind::synthetic;
    c.data.spec = data::FederationSpec{};
    c.strategy = fl::StrategyConfig{};
    c.eval_every = 10;
    return c;
}

data::Federation load_data(const ExperimentConfig& c) {
    switch (c.data.kind) {
        case DataSource::Kind::synthetic: return data::synthesize(c.data.spec);
        case DataSource::Kind::directory: return data::load_federation(c.data.path);
        case DataSource::Kind::tabular: return data::ingest_tabular(c.data.path, c.data.schema);
    }
    throw ConfigError("unknown data source");
}

std::string federation_fingerprint(const ExperimentConfig& c) {
    switch (c.data.kind) {
        case DataSource::Kind::synthetic: {
            json spec = c.data.spec;
            spec.erase("seed");
            return "synthetic:" + spec.dump();
        }
        case DataSource::Kind::directory: {
            std::ifstream in(c.data.path / "manifest.json");
            json m = json::parse(in);
            json src = m.at("source");
            if (src.contains("spec")) src["spec"].erase("seed");
            if (src.contains("schema")) src["schema"].erase("seed");
            return "source:" + src.dump();
        }
        case DataSource::Kind::tabular: {
            json schema = c.data.schema;
            schema.erase("seed");
            return "tabular:" + std::filesystem::absolute(c.data.path).lexically_normal().string() + schema.dump();
        }
    }
    return {};
}

RunResult run_experiment(const ExperimentConfig& c, const data::Federation& fed, std::optional<RunResult> prior,
                         const EvalHook& on_eval) {
    RunResult r;
    if (prior) {
        r = std::move(*prior);
        r.aborted = false;
        r.abort_reason.clear();
    } else {
        r.state = fl::initialize(fed, c.strategy);
    }
    if (r.state.kind != c.strategy.kind) throw ConfigError("checkpoint strategy does not match the configuration");
    while (r.state.server.round < c.strategy.rounds) {
        fl::RoundReport rep;
        try {
            rep = fl::run_round(r.state, fed, c.strategy);
        } catch (const NumericalError& e) {
            r.aborted = true;
            r.abort_reason = e.what();
            break;
        }
        r.curves.append(rep);
        r.reports.push_back(std::move(rep));
        const int t = r.state.server.round;
        if (t % c.eval_every == 0 || t == c.strategy.rounds) {
            r.evals.push_back(metrics::evaluate(r.state, fed));
            if (on_eval) on_eval(r);
        }
    }
    r.final_eval = metrics::evaluate(r.state, fed);
    return r;
}

json round_report_json(const fl::RoundReport& r) {
    json out{{"round", r.round},         {"selected", r.selected}, {"losses", r.losses},
             {"mean_loss", r.mean_loss}, {"max_loss", r.max_loss}, {"loss_std", r.loss_std},
             {"total_loss", r.total_loss}};
    if (!r.lambda.empty()) out["lambda"] = r.lambda;
    if (r.q) out["q"] = *r.q;
    if (!r.warnings.empty()) out["warnings"] = r.warnings;
    return out;
}

fl::RoundReport round_report_from_json(const json& j) {
    fl::RoundReport r;
    r.round = j.at("round").get<int>();
    r.selected = j.at("selected").get<std::vector<int>>();
    r.losses = j.at("losses").get<std::vector<double>>();
    r.mean_loss = j.at("mean_loss").get<double>();
    r.max_loss = j.at("max_loss").get<double>();
    r.loss_std = j.at("loss_std").get<double>();
    r.total_loss = j.at("total_loss").get<double>();
    if (j.contains("lambda")) r.lambda = j["lambda"].get<std::vector<double>>();
    if (j.contains("q")) r.q = j["q"].get<double>();
    if (j.contains("warnings")) r.warnings = j["warnings"].get<std::vector<std::string>>();
    return r;
}

json checkpoint_json(const RunResult& run) {
    json reports = json::array();
    for (const auto& r : run.reports) reports.push_back(round_report_json(r));
    json evals = json::array();
    for (const auto& e : run.evals) evals.push_back(metrics::to_json(e));
    return {{"schema", "grpfed.run-checkpoint/1"},
            {"state", fl::checkpoint_to_json(run.state)},
            {"reports", reports},
            {"evals", evals}};
}

RunResult run_from_checkpoint(const json& j) {
    if (j.value("schema", std::string()) != "grpfed.run-checkpoint/1") throw DataError("not a run checkpoint");
    RunResult r;
    r.state = fl::checkpoint_from_json(j.at("state"));
    for (const auto& rep : j.at("reports")) {
        r.reports.push_back(round_report_from_json(rep));
        r.curves.append(r.reports.back());
    }
    for (const auto& e : j.at("evals")) r.evals.push_back(metrics::eval_report_from_json(e));
    return r;
}

}  // namespace grpfed

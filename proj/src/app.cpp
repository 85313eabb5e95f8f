#include "grpfed/app.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "grpfed/errors.hpp"

namespace grpfed::app {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& file, const std::string& text) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + file.string());
    out << text;
    if (!out) throw DataError("write failed for " + file.string());
}

void write_json(const fs::path& file, const json& j) { write_text(file, j.dump(2) + "\n"); }

json read_json(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw DataError("cannot open " + file.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(file.string() + ": " + e.what());
    }
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
}

std::string num(double v) { return json(v).dump(); }

std::string clients_csv(const metrics::EvalReport& r) {
    std::string out = "client,T_p,T_r\n";
    for (const auto& c : r.clients) {
        out += std::to_string(c.client_id) + ",";
        if (c.personalization) out += num(*c.personalization);
        out += "," + num(c.generalization) + "\n";
    }
    return out;
}

std::string eval_csv(const metrics::EvalReport& r) {
    return "round,T_g,T_p,T_r,T_l\n" + std::to_string(r.round) + "," + num(r.global_test) + "," +
           num(r.personalization) + "," + num(r.generalization) + "," + num(r.local_test) + "\n";
}

json scores_json(const metrics::EvalReport& r) {
    return {{"T_g", r.global_test}, {"T_p", r.personalization}, {"T_r", r.generalization}, {"T_l", r.local_test}};
}

json summary_json(const ExperimentConfig& c, const RunResult& run) {
    json s{{"schema", "grpfed.summary/1"},
           {"label", c.label},
           {"strategy", fl::to_string(c.strategy.kind)},
           {"status", run.aborted ? "aborted" : "completed"},
           {"rounds_completed", run.state.server.round},
           {"fingerprint", federation_fingerprint(c)},
           {"final", scores_json(run.final_eval)},
           {"config", to_json(c)}};
    if (run.aborted) s["abort_reason"] = run.abort_reason;
    if (!run.reports.empty()) {
        const auto& last = run.reports.back();
        s["final_mean_loss"] = last.mean_loss;
        s["final_max_loss"] = last.max_loss;
        if (!last.lambda.empty()) s["final_lambda"] = last.lambda;
        if (last.q) s["final_q"] = *last.q;
    }
    return s;
}

void write_run_files(const fs::path& dir, const ExperimentConfig& c, const RunResult& run) {
    std::string rounds;
    for (const auto& r : run.reports) rounds += round_report_json(r).dump() + "\n";
    write_text(dir / "rounds.jsonl", rounds);
    write_text(dir / "curves.csv", run.curves.to_csv());
    write_json(dir / "curves.json", run.curves.to_json());
    write_text(dir / "evals.csv", metrics::eval_history_csv(run.evals));
    write_json(dir / "eval.json", metrics::to_json(run.final_eval));
    write_text(dir / "eval.csv", eval_csv(run.final_eval));
    write_text(dir / "clients.csv", clients_csv(run.final_eval));
    write_json(dir / "summary.json", summary_json(c, run));
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::vector<Summary> summarize(const std::vector<std::pair<std::string, json>>& finals) {
    std::vector<std::string> order;
    std::map<std::string, std::array<std::vector<double>, 4>> groups;
    for (const auto& [label, f] : finals) {
        if (!groups.contains(label)) order.push_back(label);
        auto& g = groups[label];
        g[0].push_back(f.at("T_g").get<double>());
        g[1].push_back(f.at("T_l").get<double>());
        g[2].push_back(f.at("T_p").get<double>());
        g[3].push_back(f.at("T_r").get<double>());
    }
    std::vector<Summary> out;
    for (const auto& label : order) {
        const auto& g = groups[label];
        Summary s;
        s.label = label;
        s.runs = static_cast<int>(g[0].size());
        s.global_test_mean = mean_of(g[0]);
        s.global_test_std = data::population_std(g[0]);
        s.local_test_mean = mean_of(g[1]);
        s.local_test_std = data::population_std(g[1]);
        s.personalization_mean = mean_of(g[2]);
        s.personalization_std = data::population_std(g[2]);
        s.generalization_mean = mean_of(g[3]);
        s.generalization_std = data::population_std(g[3]);
        out.push_back(s);
    }
    return out;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

}  // namespace

void generate(const ExperimentConfig& resolved, const fs::path& out_dir) {
    const data::Federation fed = load_data(resolved);
    ensure_dir(out_dir);
    data::write_federation(fed, out_dir);
}

int train(const ExperimentConfig& resolved, const fs::path& out_dir, bool resume, std::ostream& log) {
    const data::Federation fed = load_data(resolved);
    ensure_dir(out_dir);
    const fs::path checkpoint = out_dir / "checkpoint.json";

    std::optional<RunResult> prior;
    if (resume && fs::exists(checkpoint)) {
        // Only the round budget may change between a checkpoint and its continuation.
        json saved = read_json(out_dir / "config.json");
        json now = to_json(resolved);
        saved["strategy"].erase("rounds");
        now["strategy"].erase("rounds");
        if (saved != now) throw ConfigError("resume: configuration differs from " + out_dir.string());
        try {
            prior = run_from_checkpoint(read_json(checkpoint));
        } catch (const json::exception& e) {
            throw DataError("checkpoint: " + std::string(e.what()));
        }
        log << "resuming " << resolved.label << " at round " << prior->state.server.round << "\n";
    }
    write_json(out_dir / "config.json", to_json(resolved));

    const auto on_eval = [&](const RunResult& run) {
        const auto& e = run.evals.back();
        log << resolved.label << " round " << e.round << ": T_g " << e.global_test << "  T_p " << e.personalization
            << "  T_r " << e.generalization << "  T_l " << e.local_test << "\n";
        write_json(checkpoint, checkpoint_json(run));
    };
    const RunResult run = run_experiment(resolved, fed, std::move(prior), on_eval);
    write_run_files(out_dir, resolved, run);
    if (run.aborted) {
        log << resolved.label << " aborted after round " << run.state.server.round << ": " << run.abort_reason << "\n";
        return kNumericalAbort;
    }
    return kOk;
}

metrics::EvalReport evaluate_run(const fs::path& run_dir) {
    const ExperimentConfig c = experiment_from_json(read_json(run_dir / "config.json")).resolved();
    const data::Federation fed = load_data(c);
    RunResult run;
    try {
        run = run_from_checkpoint(read_json(run_dir / "checkpoint.json"));
    } catch (const json::exception& e) {
        throw DataError("checkpoint: " + std::string(e.what()));
    }
    return metrics::evaluate(run.state, fed);
}

std::vector<Summary> compare_runs(const std::vector<fs::path>& run_dirs) {
    if (run_dirs.empty()) throw ConfigError("compare: no runs given");
    std::vector<std::pair<std::string, json>> finals;
    std::optional<std::string> fingerprint;
    for (const auto& dir : run_dirs) {
        const json s = read_json(dir / "summary.json");
        if (s.value("status", std::string()) != "completed") throw DataError(dir.string() + " is not a completed run");
        const std::string fp = s.at("fingerprint").get<std::string>();
        if (fingerprint && *fingerprint != fp) throw DataError("mismatched federations across runs: " + dir.string());
        fingerprint = fp;
        finals.emplace_back(s.at("label").get<std::string>(), s.at("final"));
    }
    return summarize(finals);
}

std::string comparison_csv(const std::vector<Summary>& rows, const std::string& key_column) {
    std::string out = key_column +
                      ",runs,T_g_mean,T_g_std,T_l_mean,T_l_std,T_p_mean,T_p_std,T_r_mean,T_r_std\n";
    for (const auto& s : rows) {
        out += s.label + "," + std::to_string(s.runs) + "," + num(s.global_test_mean) + "," +
               num(s.global_test_std) + "," + num(s.local_test_mean) + "," + num(s.local_test_std) + "," +
               num(s.personalization_mean) + "," + num(s.personalization_std) + "," +
               num(s.generalization_mean) + "," + num(s.generalization_std) + "\n";
    }
    return out;
}

void set_parameter(ExperimentConfig& c, const std::string& name, double value) {
    const auto as_int = [&]() {
        if (value != std::floor(value)) throw ConfigError(name + " must be an integer");
        return static_cast<int>(value);
    };
    auto& s = c.strategy;
    if (name == "beta") s.beta = value;
    else if (name == "q0") s.q0 = value;
    else if (name == "eta_q") s.eta_q = value;
    else if (name == "client_fraction") s.client_fraction = value;
    else if (name == "learning_rate") s.learning_rate = value;
    else if (name == "momentum") s.momentum = value;
    else if (name == "rounds") s.rounds = as_int();
    else if (name == "local_epochs") s.local_epochs = as_int();
    else if (name == "batch_size") s.batch_size = as_int();
    else if (name == "rho" || name == "tau" || name == "spread") {
        if (c.data.kind != DataSource::Kind::synthetic) throw ConfigError(name + " applies to synthetic data only");
        if (name == "rho") c.data.spec.rho = value;
        else if (name == "tau") c.data.spec.tau = value;
        else c.data.spec.spread = value;
    } else {
        throw ConfigError("unknown parameter '" + name + "'");
    }
}

std::vector<Summary> sweep(const ExperimentConfig& base, const std::string& param, const std::vector<double>& values,
                           const std::vector<std::uint64_t>& seeds, const fs::path& out_dir, std::ostream& log) {
    if (values.empty() || seeds.empty()) throw ConfigError("sweep needs at least one value and one seed");
    std::vector<std::pair<std::string, json>> finals;
    for (double v : values) {
        const std::string key = num(v);
        for (std::uint64_t seed : seeds) {
            ExperimentConfig c = base;
            set_parameter(c, param, v);
            c.seed = seed;
            c.label = base.label.empty() ? fl::to_string(base.strategy.kind) : base.label;
            c.label += " " + param + "=" + key;
            const ExperimentConfig r = c.resolved();
            const fs::path dir = out_dir / (param + "=" + key) / ("seed-" + std::to_string(seed));
            const int code = train(r, dir, false, log);
            if (code != kOk) throw NumericalError("sweep run " + dir.string() + " aborted");
            finals.emplace_back(key, read_json(dir / "summary.json").at("final"));
        }
    }
    auto rows = summarize(finals);
    ensure_dir(out_dir);
    write_text(out_dir / "sweep.csv", comparison_csv(rows, param));
    return rows;
}

namespace {

// Flags shared by commands that build an ExperimentConfig.
struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<std::string> label;
    std::optional<std::string> data_dir;
    // federation
    std::optional<int> clients, classes, features, base_n;
    std::optional<double> rho, tau, test_fraction, spread, center_scale;
    // strategy
    std::optional<std::string> strategy;
    std::optional<int> rounds, epochs, batch_size, eval_every, workers;
    std::optional<double> beta, q0, eta_q, fraction, lr, momentum;
    bool no_discriminator = false;

    void add_data_flags(CLI::App* cmd) {
        cmd->add_option("--config", config, "experiment config (JSON)");
        cmd->add_option("--data-dir", data_dir, "use a generated federation directory as data");
        cmd->add_option("--clients", clients, "number of clients");
        cmd->add_option("--classes", classes, "number of classes");
        cmd->add_option("--features", features, "feature dimension");
        cmd->add_option("--base-n", base_n, "examples held by the largest client");
        cmd->add_option("--rho", rho, "client-size decay");
        cmd->add_option("--tau", tau, "class-frequency decay");
        cmd->add_option("--test-fraction", test_fraction, "per-client test fraction");
        cmd->add_option("--spread", spread, "within-class standard deviation");
        cmd->add_option("--center-scale", center_scale, "standard deviation of class centres");
    }

    void add_strategy_flags(CLI::App* cmd) {
        cmd->add_option("--label", label, "run label used by compare");
        cmd->add_option("--strategy", strategy, "grp-fed, fedavg, qffl or local");
        cmd->add_option("--rounds", rounds, "communication rounds");
        cmd->add_option("--epochs", epochs, "local epochs per round");
        cmd->add_option("--batch-size", batch_size, "mini-batch size");
        cmd->add_option("--beta", beta, "local loss weight");
        cmd->add_option("--q0", q0, "initial aggregation power");
        cmd->add_option("--eta-q", eta_q, "aggregation power step");
        cmd->add_option("--fraction", fraction, "fraction of clients per round");
        cmd->add_option("--lr", lr, "learning rate");
        cmd->add_option("--momentum", momentum, "SGD momentum");
        cmd->add_option("--eval-every", eval_every, "rounds between evaluations");
        cmd->add_option("--workers", workers, "concurrent client updates");
        cmd->add_flag("--no-discriminator", no_discriminator, "disable the feature discriminator");
    }

    [[nodiscard]] ExperimentConfig build() const {
        ExperimentConfig c = config.empty() ? reference_experiment() : load_experiment(config);
        if (seed) c.seed = seed;
        if (label) c.label = *label;
        if (data_dir) {
            c.data.kind = DataSource::Kind::directory;
            c.data.path = *data_dir;
        }
        auto& sp = c.data.spec;
        const bool spec_flags = clients || classes || features || base_n || rho || tau || test_fraction || spread ||
                                center_scale;
        if (spec_flags && c.data.kind != DataSource::Kind::synthetic) {
            throw ConfigError("federation flags apply to synthetic data only");
        }
        if (clients) sp.num_clients = *clients;
        if (classes) sp.num_classes = *classes;
        if (features) sp.feature_dim = *features;
        if (base_n) sp.base_n = *base_n;
        if (rho) sp.rho = *rho;
        if (tau) sp.tau = *tau;
        if (test_fraction) sp.test_fraction = *test_fraction;
        if (spread) sp.spread = *spread;
        if (center_scale) sp.center_scale = *center_scale;

        auto& s = c.strategy;
        if (strategy) s.kind = fl::strategy_from_string(*strategy);
        if (rounds) s.rounds = *rounds;
        if (epochs) s.local_epochs = *epochs;
        if (batch_size) s.batch_size = *batch_size;
        if (beta) s.beta = *beta;
        if (q0) s.q0 = *q0;
        if (eta_q) s.eta_q = *eta_q;
        if (fraction) s.client_fraction = *fraction;
        if (lr) s.learning_rate = *lr;
        if (momentum) s.momentum = *momentum;
        if (workers) s.workers = *workers;
        if (no_discriminator) s.discriminator = false;
        if (eval_every) c.eval_every = *eval_every;
        return c;
    }
};

fs::path output_dir(const std::string& flag, const ExperimentConfig& c) {
    if (!flag.empty()) return flag;
    if (!c.output_dir.empty()) return c.output_dir;
    throw ConfigError("no output directory (use --out or output_dir in the config)");
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const std::string& what) {
    std::vector<T> out;
    for (const auto& item : split_list(text)) {
        try {
            std::size_t used = 0;
            if constexpr (std::is_same_v<T, double>) {
                out.push_back(std::stod(item, &used));
            } else {
                out.push_back(static_cast<T>(std::stoull(item, &used)));
            }
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::logic_error&) {
            throw ConfigError(what + ": cannot parse '" + item + "'");
        }
    }
    if (out.empty()) throw ConfigError(what + " is empty");
    return out;
}

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App cli{"Federated learning with adaptive aggregation and personalised local models"};
    cli.require_subcommand(1);

    Overrides gen;
    auto* generate_cmd = cli.add_subcommand("generate", "synthesize a federation and write it to a directory");
    gen.add_data_flags(generate_cmd);
    generate_cmd->add_option("--seed", gen.seed, "federation seed");
    generate_cmd->add_option("--out", gen.out, "output directory");

    Overrides tr;
    bool resume = false;
    auto* train_cmd = cli.add_subcommand("train", "run one federated training job");
    tr.add_data_flags(train_cmd);
    tr.add_strategy_flags(train_cmd);
    train_cmd->add_option("--seed", tr.seed, "run seed")->required();
    train_cmd->add_option("--out", tr.out, "run directory");
    train_cmd->add_flag("--resume", resume, "continue from the run directory's checkpoint");

    std::string eval_run, eval_out;
    auto* evaluate_cmd = cli.add_subcommand("evaluate", "recompute the evaluation report of a run");
    evaluate_cmd->add_option("--run", eval_run, "run directory")->required();
    evaluate_cmd->add_option("--out", eval_out, "write the report (JSON) here as well");

    std::vector<std::string> compare_inputs;
    std::string compare_out, compare_seeds;
    auto* compare_cmd = cli.add_subcommand("compare", "tabulate scores of several runs or configs");
    compare_cmd->add_option("inputs", compare_inputs, "run directories, or config files (with --seeds)")->required();
    compare_cmd->add_option("--seeds", compare_seeds, "comma-separated seeds for config inputs");
    compare_cmd->add_option("--out", compare_out, "write the table here; config runs go below its directory");

    Overrides sw;
    std::string sweep_param, sweep_values, sweep_seeds;
    auto* sweep_cmd = cli.add_subcommand("sweep", "train over a grid of one parameter and several seeds");
    sw.add_data_flags(sweep_cmd);
    sw.add_strategy_flags(sweep_cmd);
    sweep_cmd->add_option("--param", sweep_param, "parameter name (beta, q0, eta_q, ...)")->required();
    sweep_cmd->add_option("--values", sweep_values, "comma-separated values")->required();
    sweep_cmd->add_option("--seeds", sweep_seeds, "comma-separated seeds")->required();
    sweep_cmd->add_option("--out", sw.out, "sweep directory");

    try {
        cli.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = cli.exit(e, out, err);
        return code == 0 ? kOk : kConfigError;
    }

    if (*generate_cmd) {
        ExperimentConfig c = gen.build();
        if (!c.seed && c.data.spec_seed_given) c.seed = c.data.spec.seed;
        const ExperimentConfig r = c.resolved();
        const fs::path dir = output_dir(gen.out, r);
        generate(r, dir);
        out << "wrote federation to " << dir.string() << "\n";
        return kOk;
    }
    if (*train_cmd) {
        const ExperimentConfig r = tr.build().resolved();
        return train(r, output_dir(tr.out, r), resume, err);
    }
    if (*evaluate_cmd) {
        const auto report = evaluate_run(eval_run);
        const json j = metrics::to_json(report);
        if (!eval_out.empty()) write_json(eval_out, j);
        out << j.dump(2) << "\n";
        return kOk;
    }
    if (*compare_cmd) {
        std::vector<fs::path> runs;
        for (const auto& input : compare_inputs) {
            if (fs::is_directory(input)) {
                runs.emplace_back(input);
                continue;
            }
            if (compare_seeds.empty() || compare_out.empty()) {
                throw ConfigError("config inputs need --seeds and --out");
            }
            const ExperimentConfig base = load_experiment(input);
            for (std::uint64_t seed : parse_list<std::uint64_t>(compare_seeds, "--seeds")) {
                ExperimentConfig c = base;
                c.seed = seed;
                const ExperimentConfig r = c.resolved();
                const fs::path dir = fs::path(compare_out).parent_path() / "runs" / r.label / ("seed-" + std::to_string(seed));
                const int code = train(r, dir, false, err);
                if (code != kOk) return code;
                runs.push_back(dir);
            }
        }
        if (runs.size() < 2) throw ConfigError("compare needs at least two runs");
        const std::string table = comparison_csv(compare_runs(runs));
        if (!compare_out.empty()) {
            const fs::path parent = fs::path(compare_out).parent_path();
            if (!parent.empty()) ensure_dir(parent);
            write_text(compare_out, table);
        }
        out << table;
        return kOk;
    }
    if (*sweep_cmd) {
        ExperimentConfig base = sw.build();
        const fs::path dir = output_dir(sw.out, base);
        const auto rows = sweep(base, sweep_param, parse_list<double>(sweep_values, "--values"),
                                parse_list<std::uint64_t>(sweep_seeds, "--seeds"), dir, err);
        out << comparison_csv(rows, sweep_param);
        return kOk;
    }
    return kFailure;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    try {
        return dispatch(argc, argv, out, err);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << "\n";
        return kNumericalAbort;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kFailure;
    }
}

}  // namespace grpfed::app

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "grpfed/data.hpp"
#include "grpfed/fl.hpp"
#include "grpfed/metrics.hpp"
#include "json.hpp"

namespace grpfed {

struct DataSource {
    enum class Kind { synthetic, directory, tabular };
    Kind kind = Kind::synthetic;
    data::FederationSpec spec;
    bool spec_seed_given = false;  // otherwise the run seed is used
    std::filesystem::path path;    // directory or delimited file
    data::TabularSchema schema;
};

struct ExperimentConfig {
    std::string label;  // defaults to the strategy name
    DataSource data;
    fl::StrategyConfig strategy;
    int eval_every = 10;
    std::filesystem::path output_dir;
    std::optional<std::uint64_t> seed;

    // Fills derived fields (seeds, label, strategy reductions) and checks
    // invariants; the result is what gets echoed into run directories.
    [[nodiscard]] ExperimentConfig resolved() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment(const std::filesystem::path& file);

// The reference desk-scale setup: 10 clients, 8 classes, 16 features,
// base 600 examples, rho 0.7, tau 0.5, 100 rounds, half of the clients per
// round, GRP-FED with R = 5, batch 64, lr 5e-3, momentum 0.9, q0 10,
// eta_q 0.5, beta 0.5.
ExperimentConfig reference_experiment();

data::Federation load_data(const ExperimentConfig& resolved);

// Identifies the federation up to its sampling seed; runs are only
// comparable when fingerprints agree.
std::string federation_fingerprint(const ExperimentConfig& resolved);

struct RunResult {
    fl::FederatedState state;
    std::vector<fl::RoundReport> reports;
    metrics::CurveTable curves;
    std::vector<metrics::EvalReport> evals;  // at the evaluation cadence
    metrics::EvalReport final_eval;
    bool aborted = false;
    std::string abort_reason;
};

// Called after each cadence evaluation with the run so far (state,
// reports and evals up to and including the current round).
using EvalHook = std::function<void(const RunResult&)>;

// Runs the configured rounds. A numerical failure stops the run with the
// last good state kept (aborted = true) instead of throwing. When resuming,
// prior holds the reports and evaluations recorded before the checkpoint.
RunResult run_experiment(const ExperimentConfig& resolved, const data::Federation& fed,
                         std::optional<RunResult> prior = std::nullopt, const EvalHook& on_eval = {});

nlohmann::json round_report_json(const fl::RoundReport& r);
fl::RoundReport round_report_from_json(const nlohmann::json& j);

// State plus the history needed to continue curve and eval files.
nlohmann::json checkpoint_json(const RunResult& run);
RunResult run_from_checkpoint(const nlohmann::json& j);

}  // namespace grpfed

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "grpfed/experiment.hpp"

// Command implementations behind the grpfed executable.
namespace grpfed::app {

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kConfigError = 2,
    kDataError = 3,
    kNumericalAbort = 4,
};

// Writes manifest.json and federation.csv.
void generate(const ExperimentConfig& resolved, const std::filesystem::path& out_dir);

// Runs (or resumes from out_dir/checkpoint.json) and writes the run
// directory. Returns kNumericalAbort if training stopped on a non-finite
// value; the last good checkpoint is kept in that case.
int train(const ExperimentConfig& resolved, const std::filesystem::path& out_dir, bool resume, std::ostream& log);

// Recomputes the evaluation report of a finished run from its checkpoint.
metrics::EvalReport evaluate_run(const std::filesystem::path& run_dir);

struct Summary {
    std::string label;
    double global_test_mean = 0, global_test_std = 0;
    double local_test_mean = 0, local_test_std = 0;
    double personalization_mean = 0, personalization_std = 0;
    double generalization_mean = 0, generalization_std = 0;
    int runs = 0;
};

// Groups run directories by label (first-appearance order) and reports
// mean and population std of each score.
std::vector<Summary> compare_runs(const std::vector<std::filesystem::path>& run_dirs);

std::string comparison_csv(const std::vector<Summary>& rows, const std::string& key_column = "method");

// Applies one named override (beta, q0, eta_q, client_fraction, rounds, ...).
void set_parameter(ExperimentConfig& config, const std::string& name, double value);

// Runs base with every (value, seed) pair under out_dir/<param>=<value>/seed-<seed>
// and returns one summary per value.
std::vector<Summary> sweep(const ExperimentConfig& base, const std::string& param, const std::vector<double>& values,
                           const std::vector<std::uint64_t>& seeds, const std::filesystem::path& out_dir,
                           std::ostream& log);

// Full command line entry point; never throws.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace grpfed::app

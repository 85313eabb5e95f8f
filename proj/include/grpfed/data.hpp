#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace grpfed::data {

// Feature rows with labels and stable example ids (ids are unique within a
// federation and are what train/test disjointness is checked against).
struct LabeledSet {
    Eigen::MatrixXd x;
    std::vector<int> y;
    std::vector<std::int64_t> ids;

    [[nodiscard]] Eigen::Index size() const noexcept { return static_cast<Eigen::Index>(y.size()); }
    [[nodiscard]] bool empty() const noexcept { return y.empty(); }
};

LabeledSet concatenate(const std::vector<const LabeledSet*>& parts, Eigen::Index feature_dim);

std::vector<long> class_histogram(const LabeledSet& set, int num_classes);

struct ClientDataset {
    int client_id = 0;
    std::string name;
    LabeledSet train;
    LabeledSet test;
    std::vector<long> class_counts;  // of train
};

// Long-tailed synthetic federation. Client m holds round(base_n * rho^m)
// examples; inside a client, classes are ranked by a random permutation and
// rank k receives a share proportional to tau^k.
struct FederationSpec {
    int num_clients = 10;
    int num_classes = 8;
    int feature_dim = 16;
    int base_n = 600;
    double rho = 0.7;
    double tau = 0.5;
    double test_fraction = 0.2;
    double center_scale = 1.0;  // class centres ~ N(0, center_scale^2 I)
    double spread = 2.0;        // within-class std
    std::uint64_t seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const FederationSpec& s);
void from_json(const nlohmann::json& j, FederationSpec& s);

struct Federation {
    int num_classes = 0;
    int feature_dim = 0;
    std::vector<ClientDataset> clients;
    LabeledSet global_test;
    std::vector<std::string> label_names;          // index = encoded label
    std::vector<std::vector<int>> class_rankings;  // synthetic only: per-client class permutation
    nlohmann::json source;                         // how the federation was produced
};

std::vector<long> client_sizes(const FederationSpec& spec);

// tau^k normalised over k = 0..num_classes-1.
std::vector<double> class_shares(double tau, int num_classes);

// Largest-remainder apportionment of total over shares; ties in the
// remainder go to the lower index. Counts sum exactly to total.
std::vector<long> apportion(long total, const std::vector<double>& shares);

// Number of examples of a class moved to the test split: none for
// singletons, otherwise round(count * fraction) capped at count - 1.
long test_count(long count, double test_fraction);

Federation synthesize(const FederationSpec& spec);

struct TabularSchema {
    std::vector<std::string> feature_columns;
    std::string label_column;
    std::string client_column;
    char delimiter = ',';
    double test_fraction = 0.2;
    std::uint64_t seed = 0;
    // Optional closed label vocabulary; when non-empty it also fixes the
    // encoding order, otherwise labels are encoded in first-appearance order.
    std::vector<std::string> labels;
};

void to_json(nlohmann::json& j, const TabularSchema& s);
void from_json(const nlohmann::json& j, TabularSchema& s);

Federation ingest_tabular(const std::filesystem::path& path, const TabularSchema& schema);

struct ImbalanceReport {
    std::vector<long> client_sizes;
    std::vector<std::vector<long>> client_histograms;
    std::vector<long> global_histogram;
    double client_size_std = 0.0;  // population std
    double class_count_std = 0.0;  // population std of global per-class counts
};

ImbalanceReport stats(const Federation& fed);

double population_std(const std::vector<double>& values);

nlohmann::json manifest(const Federation& fed);

// manifest.json + federation.csv under dir; load_federation reads them back
// bit-exactly.
void write_federation(const Federation& fed, const std::filesystem::path& dir);
Federation load_federation(const std::filesystem::path& dir);

}  // namespace grpfed::data

#include "grpfed/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "grpfed/config_keys.hpp"
#include "grpfed/errors.hpp"

namespace grpfed::data {

namespace {

using nlohmann::json;

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return std::mt19937_64(seq);
}

LabeledSet take_rows(const LabeledSet& all, const std::vector<Eigen::Index>& rows) {
    LabeledSet out;
    out.x = all.x(rows, Eigen::all);
    out.y.reserve(rows.size());
    out.ids.reserve(rows.size());
    for (auto r : rows) {
        out.y.push_back(all.y[static_cast<std::size_t>(r)]);
        out.ids.push_back(all.ids[static_cast<std::size_t>(r)]);
    }
    return out;
}

// Stratified split; the relative order of rows is preserved in both parts.
std::pair<LabeledSet, LabeledSet> split_stratified(const LabeledSet& all, int num_classes, double test_fraction,
                                                   std::mt19937_64& rng) {
    std::vector<std::vector<Eigen::Index>> by_class(static_cast<std::size_t>(num_classes));
    for (Eigen::Index i = 0; i < all.size(); ++i) by_class[static_cast<std::size_t>(all.y[i])].push_back(i);
    std::vector<char> is_test(static_cast<std::size_t>(all.size()), 0);
    for (auto& rows : by_class) {
        const long n_test = test_count(static_cast<long>(rows.size()), test_fraction);
        if (n_test == 0) continue;
        std::shuffle(rows.begin(), rows.end(), rng);
        for (long k = 0; k < n_test; ++k) is_test[static_cast<std::size_t>(rows[static_cast<std::size_t>(k)])] = 1;
    }
    std::vector<Eigen::Index> train_rows, test_rows;
    for (Eigen::Index i = 0; i < all.size(); ++i) (is_test[static_cast<std::size_t>(i)] ? test_rows : train_rows).push_back(i);
    return {take_rows(all, train_rows), take_rows(all, test_rows)};
}

void finish_federation(Federation& fed) {
    std::vector<const LabeledSet*> tests;
    for (auto& c : fed.clients) {
        c.class_counts = class_histogram(c.train, fed.num_classes);
        tests.push_back(&c.test);
    }
    fed.global_test = concatenate(tests, fed.feature_dim);
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

bool parse_double(std::string_view s, double& out) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    if (s.empty()) return false;
    if (s.front() == '+') s.remove_prefix(1);
    auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size() && std::isfinite(out);
}

std::vector<std::string> split_line(const std::string& line, char delim) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(line);
    while (std::getline(ss, cur, delim)) out.push_back(cur);
    if (!line.empty() && line.back() == delim) out.emplace_back();
    return out;
}

std::string trim(std::string s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
    std::size_t k = 0;
    while (k < s.size() && (s[k] == ' ' || s[k] == '\t')) ++k;
    return s.substr(k);
}

}  // namespace

LabeledSet concatenate(const std::vector<const LabeledSet*>& parts, Eigen::Index feature_dim) {
    Eigen::Index n = 0;
    for (const auto* p : parts) n += p->size();
    LabeledSet out;
    out.x.resize(n, feature_dim);
    Eigen::Index row = 0;
    for (const auto* p : parts) {
        if (p->size() == 0) continue;
        out.x.middleRows(row, p->size()) = p->x;
        row += p->size();
        out.y.insert(out.y.end(), p->y.begin(), p->y.end());
        out.ids.insert(out.ids.end(), p->ids.begin(), p->ids.end());
    }
    return out;
}

std::vector<long> class_histogram(const LabeledSet& set, int num_classes) {
    std::vector<long> h(static_cast<std::size_t>(num_classes), 0);
    for (int y : set.y) ++h[static_cast<std::size_t>(y)];
    return h;
}

void FederationSpec::validate() const {
    if (num_clients < 2) throw ConfigError("federation needs at least 2 clients");
    if (num_classes < 1) throw ConfigError("federation needs at least 1 class");
    if (feature_dim < 1) throw ConfigError("feature dimension must be positive");
    if (base_n < 1) throw ConfigError("base_n must be positive");
    if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("rho must lie in (0, 1]");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in (0, 1]");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction must lie in (0, 1)");
    if (!(spread > 0.0) || !(center_scale >= 0.0)) throw ConfigError("spread must be > 0 and center_scale >= 0");
    const auto smallest = std::llround(base_n * std::pow(rho, num_clients - 1));
    if (smallest < num_classes) {
        throw ConfigError("smallest client would hold " + std::to_string(smallest) + " examples, fewer than " +
                          std::to_string(num_classes) + " classes");
    }
}

void to_json(json& j, const FederationSpec& s) {
    j = json{{"num_clients", s.num_clients}, {"num_classes", s.num_classes}, {"feature_dim", s.feature_dim},
             {"base_n", s.base_n},           {"rho", s.rho},                 {"tau", s.tau},
             {"test_fraction", s.test_fraction}, {"center_scale", s.center_scale}, {"spread", s.spread},
             {"seed", s.seed}};
}

void from_json(const json& j, FederationSpec& s) {
    require_known_keys(j,
                       {"num_clients", "num_classes", "feature_dim", "base_n", "rho", "tau", "test_fraction",
                        "center_scale", "spread", "seed"},
                       "synthetic");
    FederationSpec d;
    s.num_clients = j.value("num_clients", d.num_clients);
    s.num_classes = j.value("num_classes", d.num_classes);
    s.feature_dim = j.value("feature_dim", d.feature_dim);
    s.base_n = j.value("base_n", d.base_n);
    s.rho = j.value("rho", d.rho);
    s.tau = j.value("tau", d.tau);
    s.test_fraction = j.value("test_fraction", d.test_fraction);
    s.center_scale = j.value("center_scale", d.center_scale);
    s.spread = j.value("spread", d.spread);
    s.seed = j.value("seed", d.seed);
}

std::vector<long> client_sizes(const FederationSpec& spec) {
    std::vector<long> sizes;
    for (int m = 0; m < spec.num_clients; ++m) {
        sizes.push_back(static_cast<long>(std::llround(spec.base_n * std::pow(spec.rho, m))));
    }
    return sizes;
}

std::vector<double> class_shares(double tau, int num_classes) {
    std::vector<double> w(static_cast<std::size_t>(num_classes));
    double sum = 0.0;
    for (int k = 0; k < num_classes; ++k) {
        w[static_cast<std::size_t>(k)] = std::pow(tau, k);
        sum += w[static_cast<std::size_t>(k)];
    }
    for (auto& v : w) v /= sum;
    return w;
}

std::vector<long> apportion(long total, const std::vector<double>& shares) {
    std::vector<long> counts(shares.size());
    std::vector<double> rem(shares.size());
    long assigned = 0;
    for (std::size_t k = 0; k < shares.size(); ++k) {
        const double exact = static_cast<double>(total) * shares[k];
        counts[k] = static_cast<long>(std::floor(exact));
        rem[k] = exact - static_cast<double>(counts[k]);
        assigned += counts[k];
    }
    std::vector<std::size_t> order(shares.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
    for (long k = 0; assigned < total; ++k, ++assigned) ++counts[order[static_cast<std::size_t>(k) % order.size()]];
    return counts;
}

long test_count(long count, double test_fraction) {
    if (count < 2) return 0;
    return std::min(count - 1, static_cast<long>(std::llround(static_cast<double>(count) * test_fraction)));
}

Federation synthesize(const FederationSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    Eigen::MatrixXd centers(spec.num_classes, spec.feature_dim);
    for (int c = 0; c < spec.num_classes; ++c) {
        for (int j = 0; j < spec.feature_dim; ++j) centers(c, j) = spec.center_scale * normal(rng);
    }

    Federation fed;
    fed.num_classes = spec.num_classes;
    fed.feature_dim = spec.feature_dim;
    for (int c = 0; c < spec.num_classes; ++c) fed.label_names.push_back(std::to_string(c));
    fed.source = json{{"kind", "synthetic"}, {"spec", spec}};

    const auto sizes = client_sizes(spec);
    const auto shares = class_shares(spec.tau, spec.num_classes);
    std::int64_t next_id = 0;
    for (int m = 0; m < spec.num_clients; ++m) {
        std::vector<int> ranking(static_cast<std::size_t>(spec.num_classes));
        std::iota(ranking.begin(), ranking.end(), 0);
        std::shuffle(ranking.begin(), ranking.end(), rng);
        const auto counts = apportion(sizes[static_cast<std::size_t>(m)], shares);

        LabeledSet all;
        all.x.resize(sizes[static_cast<std::size_t>(m)], spec.feature_dim);
        Eigen::Index row = 0;
        for (int k = 0; k < spec.num_classes; ++k) {
            const int cls = ranking[static_cast<std::size_t>(k)];
            for (long e = 0; e < counts[static_cast<std::size_t>(k)]; ++e, ++row) {
                for (int j = 0; j < spec.feature_dim; ++j) all.x(row, j) = centers(cls, j) + spec.spread * normal(rng);
                all.y.push_back(cls);
                all.ids.push_back(next_id++);
            }
        }
        auto [train, test] = split_stratified(all, spec.num_classes, spec.test_fraction, rng);
        ClientDataset client;
        client.client_id = m;
        client.name = "client_" + std::to_string(m);
        client.train = std::move(train);
        client.test = std::move(test);
        fed.clients.push_back(std::move(client));
        fed.class_rankings.push_back(std::move(ranking));
    }
    finish_federation(fed);
    return fed;
}

void to_json(json& j, const TabularSchema& s) {
    j = json{{"feature_columns", s.feature_columns}, {"label_column", s.label_column},
             {"client_column", s.client_column},     {"delimiter", std::string(1, s.delimiter)},
             {"test_fraction", s.test_fraction},     {"seed", s.seed},
             {"labels", s.labels}};
}

void from_json(const json& j, TabularSchema& s) {
    require_known_keys(j,
                       {"feature_columns", "label_column", "client_column", "delimiter", "test_fraction", "seed",
                        "labels"},
                       "tabular schema");
    s.feature_columns = j.at("feature_columns").get<std::vector<std::string>>();
    s.label_column = j.at("label_column").get<std::string>();
    s.client_column = j.at("client_column").get<std::string>();
    const auto delim = j.value("delimiter", std::string(","));
    if (delim.size() != 1) throw ConfigError("delimiter must be a single character");
    s.delimiter = delim[0];
    s.test_fraction = j.value("test_fraction", 0.2);
    s.seed = j.value("seed", std::uint64_t{0});
    s.labels = j.value("labels", std::vector<std::string>{});
}

Federation ingest_tabular(const std::filesystem::path& path, const TabularSchema& schema) {
    if (schema.feature_columns.empty()) throw ConfigError("tabular schema lists no feature columns");
    if (!(schema.test_fraction > 0.0 && schema.test_fraction < 1.0)) {
        throw ConfigError("test_fraction must lie in (0, 1)");
    }
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw DataError(path.string() + ": missing header row");
    std::vector<std::string> header;
    for (auto& h : split_line(trim(line), schema.delimiter)) header.push_back(trim(h));
    auto column = [&](const std::string& name) -> std::size_t {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw ConfigError(path.string() + ": no column named '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    };
    std::vector<std::size_t> feature_cols;
    for (const auto& f : schema.feature_columns) feature_cols.push_back(column(f));
    const std::size_t label_col = column(schema.label_column);
    const std::size_t client_col = column(schema.client_column);

    std::map<std::string, int> label_index;
    std::vector<std::string> label_names = schema.labels;
    for (std::size_t k = 0; k < label_names.size(); ++k) label_index[label_names[k]] = static_cast<int>(k);
    const bool closed_vocabulary = !schema.labels.empty();

    std::map<std::string, int> client_index;
    std::vector<std::string> client_names;
    std::vector<std::vector<double>> rows_x;
    std::vector<std::vector<int>> client_rows;
    std::vector<int> rows_y;

    const auto d = schema.feature_columns.size();
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty()) continue;
        const auto fields = split_line(line, schema.delimiter);
        if (fields.size() != header.size()) {
            throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                            " fields, found " + std::to_string(fields.size()));
        }
        std::vector<double> x(d);
        for (std::size_t k = 0; k < d; ++k) {
            const auto& cell = fields[feature_cols[k]];
            if (trim(cell).empty()) {
                throw DataError("line " + std::to_string(line_no) + ", column '" + schema.feature_columns[k] +
                                "': missing value");
            }
            if (!parse_double(cell, x[k])) {
                throw DataError("line " + std::to_string(line_no) + ", column '" + schema.feature_columns[k] +
                                "': not a number '" + cell + "'");
            }
        }
        const auto label = trim(fields[label_col]);
        if (label.empty()) {
            throw DataError("line " + std::to_string(line_no) + ", column '" + schema.label_column + "': missing value");
        }
        auto lit = label_index.find(label);
        if (lit == label_index.end()) {
            if (closed_vocabulary) {
                throw DataError("line " + std::to_string(line_no) + ": unknown label '" + label + "'");
            }
            lit = label_index.emplace(label, static_cast<int>(label_names.size())).first;
            label_names.push_back(label);
        }
        const auto client = trim(fields[client_col]);
        if (client.empty()) {
            throw DataError("line " + std::to_string(line_no) + ", column '" + schema.client_column +
                            "': empty client id");
        }
        auto cit = client_index.find(client);
        if (cit == client_index.end()) {
            cit = client_index.emplace(client, static_cast<int>(client_names.size())).first;
            client_names.push_back(client);
            client_rows.emplace_back();
        }
        client_rows[static_cast<std::size_t>(cit->second)].push_back(static_cast<int>(rows_y.size()));
        rows_x.push_back(std::move(x));
        rows_y.push_back(lit->second);
    }
    if (rows_y.empty()) throw DataError(path.string() + ": no data rows");

    Federation fed;
    fed.num_classes = static_cast<int>(label_names.size());
    fed.feature_dim = static_cast<int>(d);
    fed.label_names = label_names;
    fed.source = json{{"kind", "tabular"}, {"path", path.string()}, {"schema", schema}};
    for (std::size_t m = 0; m < client_rows.size(); ++m) {
        const auto& rows = client_rows[m];
        if (rows.empty()) throw DataError("client '" + client_names[m] + "' has no rows");
        LabeledSet all;
        all.x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const auto src = static_cast<std::size_t>(rows[r]);
            for (std::size_t k = 0; k < d; ++k) all.x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = rows_x[src][k];
            all.y.push_back(rows_y[src]);
            all.ids.push_back(static_cast<std::int64_t>(src));
        }
        auto rng = make_rng(schema.seed, m);
        auto [train, test] = split_stratified(all, fed.num_classes, schema.test_fraction, rng);
        ClientDataset client;
        client.client_id = static_cast<int>(m);
        client.name = client_names[m];
        client.train = std::move(train);
        client.test = std::move(test);
        fed.clients.push_back(std::move(client));
    }
    finish_federation(fed);
    return fed;
}

double population_std(const std::vector<double>& values) {
    if (values.empty()) return 0.0;
    const double n = static_cast<double>(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / n);
}

ImbalanceReport stats(const Federation& fed) {
    if (fed.clients.empty()) throw DataError("stats on an empty federation");
    ImbalanceReport r;
    r.global_histogram.assign(static_cast<std::size_t>(fed.num_classes), 0);
    std::vector<double> sizes;
    for (const auto& c : fed.clients) {
        auto h = class_histogram(c.train, fed.num_classes);
        const auto ht = class_histogram(c.test, fed.num_classes);
        for (std::size_t k = 0; k < h.size(); ++k) {
            h[k] += ht[k];
            r.global_histogram[k] += h[k];
        }
        r.client_sizes.push_back(static_cast<long>(c.train.size() + c.test.size()));
        sizes.push_back(static_cast<double>(r.client_sizes.back()));
        r.client_histograms.push_back(std::move(h));
    }
    std::vector<double> class_counts(r.global_histogram.begin(), r.global_histogram.end());
    r.client_size_std = population_std(sizes);
    r.class_count_std = population_std(class_counts);
    return r;
}

json manifest(const Federation& fed) {
    const auto report = stats(fed);
    json clients = json::array();
    for (std::size_t m = 0; m < fed.clients.size(); ++m) {
        const auto& c = fed.clients[m];
        json entry{{"id", c.client_id},
                   {"name", c.name},
                   {"size", report.client_sizes[m]},
                   {"train_size", c.train.size()},
                   {"test_size", c.test.size()},
                   {"class_histogram", report.client_histograms[m]}};
        if (m < fed.class_rankings.size()) entry["class_ranking"] = fed.class_rankings[m];
        clients.push_back(std::move(entry));
    }
    json out{{"schema", "grpfed.manifest/1"},
             {"source", fed.source},
             {"num_clients", fed.clients.size()},
             {"num_classes", fed.num_classes},
             {"feature_dim", fed.feature_dim},
             {"label_encoding", fed.label_names},
             {"clients", clients},
             {"global_histogram", report.global_histogram},
             {"global_test_size", fed.global_test.size()},
             {"client_size_std", report.client_size_std},
             {"class_count_std", report.class_count_std}};
    if (fed.source.contains("spec")) out["seed"] = fed.source["spec"]["seed"];
    if (fed.source.contains("schema")) out["seed"] = fed.source["schema"]["seed"];
    return out;
}

void write_federation(const Federation& fed, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "manifest.json");
        out << manifest(fed).dump(2) << '\n';
        if (!out) throw DataError("failed writing " + (dir / "manifest.json").string());
    }
    std::ofstream out(dir / "federation.csv");
    out << "client,split,id,label";
    for (int j = 0; j < fed.feature_dim; ++j) out << ",x" << j;
    out << '\n';
    auto emit = [&](int client, const char* split, const LabeledSet& set) {
        for (Eigen::Index i = 0; i < set.size(); ++i) {
            out << client << ',' << split << ',' << set.ids[static_cast<std::size_t>(i)] << ','
                << set.y[static_cast<std::size_t>(i)];
            for (Eigen::Index j = 0; j < set.x.cols(); ++j) out << ',' << format_double(set.x(i, j));
            out << '\n';
        }
    };
    for (const auto& c : fed.clients) {
        emit(c.client_id, "train", c.train);
        emit(c.client_id, "test", c.test);
    }
    if (!out) throw DataError("failed writing " + (dir / "federation.csv").string());
}

Federation load_federation(const std::filesystem::path& dir) {
    std::ifstream min(dir / "manifest.json");
    if (!min) throw DataError("no manifest.json in " + dir.string());
    json m;
    try {
        m = json::parse(min);
    } catch (const json::exception& e) {
        throw DataError("manifest.json: " + std::string(e.what()));
    }
    Federation fed;
    fed.num_classes = m.at("num_classes").get<int>();
    fed.feature_dim = m.at("feature_dim").get<int>();
    fed.label_names = m.at("label_encoding").get<std::vector<std::string>>();
    fed.source = m.at("source");
    const auto& clients = m.at("clients");
    std::vector<std::vector<std::vector<double>>> xs(clients.size() * 2);
    std::vector<std::vector<int>> ys(clients.size() * 2);
    std::vector<std::vector<std::int64_t>> ids(clients.size() * 2);
    for (const auto& c : clients) {
        ClientDataset cd;
        cd.client_id = c.at("id").get<int>();
        cd.name = c.at("name").get<std::string>();
        fed.clients.push_back(std::move(cd));
        if (c.contains("class_ranking")) fed.class_rankings.push_back(c["class_ranking"].get<std::vector<int>>());
    }

    std::ifstream in(dir / "federation.csv");
    if (!in) throw DataError("no federation.csv in " + dir.string());
    std::string line;
    std::getline(in, line);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto f = split_line(trim(line), ',');
        if (f.size() != static_cast<std::size_t>(4 + fed.feature_dim)) {
            throw DataError("federation.csv line " + std::to_string(line_no) + ": wrong field count");
        }
        double client_v = 0, id_v = 0, label_v = 0;
        if (!parse_double(f[0], client_v) || !parse_double(f[2], id_v) || !parse_double(f[3], label_v)) {
            throw DataError("federation.csv line " + std::to_string(line_no) + ": bad integer field");
        }
        const auto client = static_cast<std::size_t>(client_v);
        if (client >= clients.size()) throw DataError("federation.csv line " + std::to_string(line_no) + ": unknown client");
        const std::size_t slot = client * 2 + (f[1] == "test" ? 1 : 0);
        std::vector<double> x(static_cast<std::size_t>(fed.feature_dim));
        for (int j = 0; j < fed.feature_dim; ++j) {
            if (!parse_double(f[static_cast<std::size_t>(4 + j)], x[static_cast<std::size_t>(j)])) {
                throw DataError("federation.csv line " + std::to_string(line_no) + ": bad feature value");
            }
        }
        xs[slot].push_back(std::move(x));
        ys[slot].push_back(static_cast<int>(label_v));
        ids[slot].push_back(static_cast<std::int64_t>(id_v));
    }
    auto build = [&](std::size_t slot) {
        LabeledSet s;
        s.x.resize(static_cast<Eigen::Index>(xs[slot].size()), fed.feature_dim);
        for (std::size_t i = 0; i < xs[slot].size(); ++i) {
            for (int j = 0; j < fed.feature_dim; ++j) s.x(static_cast<Eigen::Index>(i), j) = xs[slot][i][static_cast<std::size_t>(j)];
        }
        s.y = ys[slot];
        s.ids = ids[slot];
        return s;
    };
    for (std::size_t c = 0; c < fed.clients.size(); ++c) {
        fed.clients[c].train = build(c * 2);
        fed.clients[c].test = build(c * 2 + 1);
        if (fed.clients[c].train.empty()) throw DataError("client " + fed.clients[c].name + " has no training rows");
    }
    finish_federation(fed);
    return fed;
}

}  // namespace grpfed::data

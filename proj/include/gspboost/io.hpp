#pragma once

// File formats and run reports.
//
//   panel CSV     location,period,y,<x1>,<x2>,...   one row per (location, period)
//   neighbor CSV  from,to,weight
//   centroid CSV  location,cx,cy
//
// Locations and periods are numbered in order of first appearance.
// Reports are JSON (nlohmann, insertion-ordered); tables are CSV.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "gspboost.hpp"

namespace gspboost {

inline constexpr const char* kToolVersion = "0.1.0";

using Json = nlohmann::ordered_json;

namespace io {

// ---------------------------------------------------------------------------
// CSV primitives

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

/// Splits one line on commas. Double-quoted fields may contain commas; a
/// doubled quote inside a quoted field is a literal quote.
inline std::vector<std::string> split_csv_line(std::string_view line, const std::string& file, std::size_t row) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false, was_quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"' && trim(cur).empty()) {
            quoted = was_quoted = true;
            cur.clear();
        } else if (c == ',') {
            out.emplace_back(was_quoted ? cur : std::string(trim(cur)));
            cur.clear();
            was_quoted = false;
        } else {
            cur.push_back(c);
        }
    }
    if (quoted) throw ParseError(file, row, "unterminated quoted field");
    out.emplace_back(was_quoted ? cur : std::string(trim(cur)));
    return out;
}

inline double parse_double(const std::string& field, const std::string& file, std::size_t row,
                           const std::string& column) {
    double v = 0.0;
    const char* b = field.data();
    const char* e = b + field.size();
    if (!field.empty() && *b == '+') ++b;
    const auto [ptr, ec] = std::from_chars(b, e, v);
    if (field.empty() || ec != std::errc() || ptr != e)
        throw ParseError(file, row, "column '" + column + "': '" + field + "' is not a number");
    if (!std::isfinite(v)) throw ParseError(file, row, "column '" + column + "': non-finite value");
    return v;
}

struct CsvTable {
    std::string file;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;  ///< 1-based file line of each row
};

/// Reads a CSV with a header line. Blank lines are skipped. Every data row
/// must have as many fields as the header.
inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    CsvTable t;
    t.file = path;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
        if (trim(line).empty()) continue;
        auto fields = split_csv_line(line, path, lineno);
        if (t.header.empty()) {
            t.header = std::move(fields);
            continue;
        }
        if (fields.size() != t.header.size())
            throw ParseError(path, lineno,
                             "expected " + std::to_string(t.header.size()) + " fields, found " +
                                 std::to_string(fields.size()));
        t.rows.push_back(std::move(fields));
        t.line_numbers.push_back(lineno);
    }
    if (in.bad()) throw IoError("read failure on '" + path + "'");
    if (t.header.empty()) throw ParseError(path, 1, "missing header line");
    return t;
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string quote_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
        if (c == '"') q.push_back('"');
        q.push_back(c);
    }
    q.push_back('"');
    return q;
}

class CsvWriter {
public:
    explicit CsvWriter(const std::string& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw IoError("cannot write '" + path + "'");
    }
    CsvWriter& row(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) out_ << ',';
            out_ << quote_field(fields[i]);
        }
        out_ << '\n';
        if (!out_) throw IoError("write failure on '" + path_ + "'");
        return *this;
    }

private:
    std::string path_;
    std::ofstream out_;
};

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << text;
    if (!out) throw IoError("write failure on '" + path + "'");
}

inline std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------
// Panel and weights

inline void expect_header_prefix(const CsvTable& t, const std::vector<std::string>& want) {
    if (t.header.size() < want.size())
        throw ParseError(t.file, 1, "header needs at least " + std::to_string(want.size()) + " columns");
    for (std::size_t i = 0; i < want.size(); ++i)
        if (t.header[i] != want[i])
            throw ParseError(t.file, 1, "header column " + std::to_string(i + 1) + " must be '" + want[i] +
                                            "', found '" + t.header[i] + "'");
}

/// Long-format panel. The panel must be balanced: every location observed
/// exactly once in every period.
inline PanelDataset read_panel_csv(const std::string& path, std::optional<Eigen::MatrixX2d> centroids = std::nullopt) {
    const CsvTable t = read_csv(path);
    expect_header_prefix(t, {"location", "period", "y"});
    std::vector<std::string> xnames(t.header.begin() + 3, t.header.end());
    for (std::size_t i = 0; i < xnames.size(); ++i) {
        if (xnames[i].empty()) throw ParseError(path, 1, "empty regressor name in column " + std::to_string(i + 4));
        for (std::size_t j = 0; j < i; ++j)
            if (xnames[i] == xnames[j]) throw ParseError(path, 1, "duplicate regressor name '" + xnames[i] + "'");
    }
    if (t.rows.empty()) throw ParseError(path, 2, "no data rows");

    std::vector<std::string> locs, pers;
    std::unordered_map<std::string, Index> loc_idx, per_idx;
    std::vector<std::pair<Index, Index>> key(t.rows.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& f = t.rows[r];
        if (f[0].empty()) throw ParseError(path, t.line_numbers[r], "empty location id");
        if (f[1].empty()) throw ParseError(path, t.line_numbers[r], "empty period id");
        auto li = loc_idx.try_emplace(f[0], static_cast<Index>(locs.size()));
        if (li.second) locs.push_back(f[0]);
        auto pi = per_idx.try_emplace(f[1], static_cast<Index>(pers.size()));
        if (pi.second) pers.push_back(f[1]);
        key[r] = {li.first->second, pi.first->second};
    }
    const Index n = static_cast<Index>(locs.size()), tt = static_cast<Index>(pers.size());
    const Index p = static_cast<Index>(xnames.size());
    Vector y(n * tt);
    Matrix x(n * tt, p);
    std::vector<std::size_t> seen(static_cast<std::size_t>(n * tt), 0);
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const Index row = key[r].first + n * key[r].second;
        auto& s = seen[static_cast<std::size_t>(row)];
        if (s)
            throw DegeneratePanel("unbalanced panel: location '" + locs[key[r].first] + "' period '" +
                                  pers[key[r].second] + "' appears on lines " + std::to_string(s) + " and " +
                                  std::to_string(t.line_numbers[r]));
        s = t.line_numbers[r];
        const auto& f = t.rows[r];
        y[row] = parse_double(f[2], path, t.line_numbers[r], "y");
        for (Index j = 0; j < p; ++j)
            x(row, j) = parse_double(f[static_cast<std::size_t>(3 + j)], path, t.line_numbers[r],
                                     xnames[static_cast<std::size_t>(j)]);
    }
    for (Index row = 0; row < n * tt; ++row)
        if (!seen[static_cast<std::size_t>(row)])
            throw DegeneratePanel("unbalanced panel: location '" + locs[row % n] + "' has no row for period '" +
                                  pers[row / n] + "'");
    return PanelDataset(n, tt, std::move(y), std::move(x), std::move(xnames), std::move(locs), std::move(pers),
                        std::move(centroids));
}

inline void write_panel_csv(const std::string& path, const PanelDataset& d) {
    CsvWriter w(path);
    std::vector<std::string> h{"location", "period", "y"};
    h.insert(h.end(), d.regressor_names().begin(), d.regressor_names().end());
    w.row(h);
    const Index n = d.n_locations();
    for (Index t = 0; t < d.n_periods(); ++t)
        for (Index i = 0; i < n; ++i) {
            std::vector<std::string> f{d.location_ids()[i], d.period_ids()[t], format_double(d.response()[i + n * t])};
            for (Index j = 0; j < d.regressors().cols(); ++j) f.push_back(format_double(d.regressors()(i + n * t, j)));
            w.row(f);
        }
}

enum class WeightFormat { NeighborList, Centroids };

inline WeightFormat sniff_weight_format(const std::string& path) {
    const CsvTable t = read_csv(path);
    if (t.header == std::vector<std::string>{"from", "to", "weight"}) return WeightFormat::NeighborList;
    if (t.header == std::vector<std::string>{"location", "cx", "cy"}) return WeightFormat::Centroids;
    throw ParseError(path, 1, "weights header must be 'from,to,weight' or 'location,cx,cy'");
}

inline std::unordered_map<std::string, Index> index_of(const std::vector<std::string>& ids) {
    std::unordered_map<std::string, Index> m;
    for (std::size_t i = 0; i < ids.size(); ++i) m.emplace(ids[i], static_cast<Index>(i));
    return m;
}

/// Centroids reordered to match `location_ids`.
inline Eigen::MatrixX2d read_centroids_csv(const std::string& path, const std::vector<std::string>& location_ids) {
    const CsvTable t = read_csv(path);
    if (t.header != std::vector<std::string>{"location", "cx", "cy"})
        throw ParseError(path, 1, "centroid header must be 'location,cx,cy'");
    const auto idx = index_of(location_ids);
    Eigen::MatrixX2d c(static_cast<Index>(location_ids.size()), 2);
    std::vector<bool> got(location_ids.size(), false);
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& f = t.rows[r];
        const auto it = idx.find(f[0]);
        if (it == idx.end())
            throw AlignmentError(path + ":" + std::to_string(t.line_numbers[r]) + ": location '" + f[0] +
                                 "' is not in the panel");
        if (got[static_cast<std::size_t>(it->second)])
            throw ParseError(path, t.line_numbers[r], "duplicate centroid for '" + f[0] + "'");
        got[static_cast<std::size_t>(it->second)] = true;
        c(it->second, 0) = parse_double(f[1], path, t.line_numbers[r], "cx");
        c(it->second, 1) = parse_double(f[2], path, t.line_numbers[r], "cy");
    }
    for (std::size_t i = 0; i < got.size(); ++i)
        if (!got[i]) throw AlignmentError("no centroid for location '" + location_ids[i] + "' in " + path);
    return c;
}

/// Neighbor list; pairs not listed are zero. Rows are row-normalized when
/// `normalize` is set.
inline SpatialWeights read_neighbor_csv(const std::string& path, const std::vector<std::string>& location_ids,
                                        bool normalize = true) {
    const CsvTable t = read_csv(path);
    if (t.header != std::vector<std::string>{"from", "to", "weight"})
        throw ParseError(path, 1, "neighbor header must be 'from,to,weight'");
    const auto idx = index_of(location_ids);
    const Index n = static_cast<Index>(location_ids.size());
    Matrix w = Matrix::Zero(n, n);
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> set = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n, n, false);
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& f = t.rows[r];
        const std::size_t line = t.line_numbers[r];
        const auto a = idx.find(f[0]);
        const auto b = idx.find(f[1]);
        if (a == idx.end() || b == idx.end())
            throw AlignmentError(path + ":" + std::to_string(line) + ": location '" +
                                 (a == idx.end() ? f[0] : f[1]) + "' is not in the panel");
        if (set(a->second, b->second)) throw ParseError(path, line, "duplicate pair " + f[0] + " -> " + f[1]);
        set(a->second, b->second) = true;
        w(a->second, b->second) = parse_double(f[2], path, line, "weight");
    }
    SpatialWeights raw(std::move(w), false, location_ids);
    return normalize ? row_normalize(raw) : raw;
}

struct WeightsInput {
    SpatialWeights weights;
    std::optional<Eigen::MatrixX2d> centroids;
};

/// Loads either weight format. Centroid files yield k-NN weights and keep
/// the centroids for spatial cross-validation.
inline WeightsInput read_weights(const std::string& path, const std::vector<std::string>& location_ids, Index knn,
                                 bool normalize = true) {
    if (sniff_weight_format(path) == WeightFormat::NeighborList)
        return {read_neighbor_csv(path, location_ids, normalize), std::nullopt};
    auto c = read_centroids_csv(path, location_ids);
    return {build_knn_weights(c, knn, location_ids), std::move(c)};
}

inline void write_centroids_csv(const std::string& path, const Eigen::MatrixX2d& c, const std::vector<std::string>& ids) {
    CsvWriter w(path);
    w.row({"location", "cx", "cy"});
    for (Index i = 0; i < c.rows(); ++i) w.row({ids[static_cast<std::size_t>(i)], format_double(c(i, 0)), format_double(c(i, 1))});
}

inline void write_neighbor_csv(const std::string& path, const SpatialWeights& sw) {
    CsvWriter w(path);
    w.row({"from", "to", "weight"});
    const auto& m = sw.matrix();
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j)
            if (m(i, j) != 0.0) w.row({sw.location_ids()[i], sw.location_ids()[j], format_double(m(i, j))});
}

}  // namespace io

// ---------------------------------------------------------------------------
// JSON conversions

inline Json to_json(const VarianceComponents& vc) {
    Json j;
    j["family"] = to_string(vc.family);
    j["effects"] = to_string(vc.effects);
    j["rho1"] = vc.rho1 ? Json(*vc.rho1) : Json(nullptr);
    j["rho2"] = vc.rho2;
    j["sigma_mu2"] = vc.sigma_mu2 ? Json(*vc.sigma_mu2) : Json(nullptr);
    j["sigma_eps2"] = vc.sigma_eps2;
    j["rho1_at_boundary"] = vc.rho1_at_boundary;
    j["rho2_at_boundary"] = vc.rho2_at_boundary;
    j["sigma_mu2_clamped"] = vc.sigma_mu2_clamped;
    j["eps_residual_norm"] = vc.eps_residual_norm;
    j["mu_residual_norm"] = vc.mu_residual_norm;
    j["initial_estimator"] = vc.initial_estimator;
    j["warnings"] = vc.warnings;
    return j;
}

inline VarianceComponents variance_components_from_json(const Json& j) {
    VarianceComponents vc;
    vc.family = parse_family(j.at("family").get<std::string>());
    vc.effects = parse_effects(j.at("effects").get<std::string>());
    if (!j.at("rho1").is_null()) vc.rho1 = j.at("rho1").get<double>();
    vc.rho2 = j.at("rho2").get<double>();
    if (!j.at("sigma_mu2").is_null()) vc.sigma_mu2 = j.at("sigma_mu2").get<double>();
    vc.sigma_eps2 = j.at("sigma_eps2").get<double>();
    vc.rho1_at_boundary = j.at("rho1_at_boundary").get<bool>();
    vc.rho2_at_boundary = j.at("rho2_at_boundary").get<bool>();
    vc.sigma_mu2_clamped = j.at("sigma_mu2_clamped").get<bool>();
    vc.eps_residual_norm = j.at("eps_residual_norm").get<double>();
    vc.mu_residual_norm = j.at("mu_residual_norm").get<double>();
    vc.initial_estimator = j.at("initial_estimator").get<std::string>();
    vc.warnings = j.at("warnings").get<std::vector<std::string>>();
    return vc;
}

struct CoefficientRow {
    std::string name;
    std::string method;  ///< LTB, DES or FGLS
    double value = 0.0;
    bool selected = false;

    bool operator==(const CoefficientRow&) const = default;
};

/// Everything a `fit`, `cv` or `transform` run produced. `parameters` echoes
/// the command line so a report identifies its own inputs; `timing` is the
/// only field that differs between identical runs.
struct RunReport {
    std::string command;
    std::string tool_version = kToolVersion;
    std::uint64_t seed = 0;
    Json parameters = Json::object();
    std::optional<VarianceComponents> variance_components;
    int m_opt = 0;
    std::vector<double> cv_risk;
    std::vector<double> risk_path;
    std::vector<std::string> selection_path;
    std::vector<CoefficientRow> coefficients;
    std::vector<std::string> retained;
    std::vector<std::string> warnings;
    Json timing = Json::object();
};

inline Json to_json(const RunReport& r) {
    Json j;
    j["command"] = r.command;
    j["tool_version"] = r.tool_version;
    j["seed"] = r.seed;
    j["parameters"] = r.parameters;
    j["variance_components"] = r.variance_components ? to_json(*r.variance_components) : Json(nullptr);
    j["m_opt"] = r.m_opt;
    j["cv_risk"] = r.cv_risk;
    j["risk_path"] = r.risk_path;
    j["selection_path"] = r.selection_path;
    Json coefs = Json::array();
    for (const auto& c : r.coefficients)
        coefs.push_back({{"name", c.name}, {"method", c.method}, {"value", c.value}, {"selected", c.selected}});
    j["coefficients"] = coefs;
    j["retained"] = r.retained;
    j["warnings"] = r.warnings;
    j["timing"] = r.timing;
    return j;
}

inline RunReport run_report_from_json(const Json& j) {
    RunReport r;
    r.command = j.at("command").get<std::string>();
    r.tool_version = j.at("tool_version").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.parameters = j.at("parameters");
    if (!j.at("variance_components").is_null())
        r.variance_components = variance_components_from_json(j.at("variance_components"));
    r.m_opt = j.at("m_opt").get<int>();
    r.cv_risk = j.at("cv_risk").get<std::vector<double>>();
    r.risk_path = j.at("risk_path").get<std::vector<double>>();
    r.selection_path = j.at("selection_path").get<std::vector<std::string>>();
    for (const auto& c : j.at("coefficients"))
        r.coefficients.push_back({c.at("name").get<std::string>(), c.at("method").get<std::string>(),
                                  c.at("value").get<double>(), c.at("selected").get<bool>()});
    r.retained = j.at("retained").get<std::vector<std::string>>();
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    r.timing = j.at("timing");
    return r;
}

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

/// Report text with the timing block removed, for reproducibility checks.
inline std::string dump_without_timing(Json j) {
    j.erase("timing");
    return dump(j);
}

inline Json to_json(const DgpConfig& c) {
    Json delta = Json::object();
    for (const auto& [k, v] : c.true_delta) delta[k] = v;
    return {{"n", c.n},           {"t", c.t},
            {"k", c.k},           {"rho1", c.rho1},
            {"rho2", c.rho2},     {"sigma_mu2", c.sigma_mu2},
            {"sigma_eps2", c.sigma_eps2}, {"knn_k", c.knn_k},
            {"seed", c.seed},     {"n_replications", c.n_replications},
            {"true_delta", delta}};
}

inline Json to_json(const SimulationMetrics& m, const ExperimentOptions& opt) {
    Json j;
    j["tool_version"] = kToolVersion;
    j["config"] = to_json(m.config);
    j["spec"] = {{"family", to_string(m.spec.family)},
                 {"effects", to_string(m.spec.effects)},
                 {"include_intercept", m.spec.include_intercept},
                 {"include_spatial_lags", m.spec.include_spatial_lags}};
    j["options"] = {{"learning_rate", opt.boost.learning_rate},
                    {"mstop_budget", opt.boost.m_stop},
                    {"folds", opt.folds},
                    {"tau", opt.tau},
                    {"mse", opt.mse == MseConvention::Sum ? "sum" : "mean"}};
    Json methods = Json::array();
    for (const auto& mm : m.methods) {
        Json e{{"method", to_string(mm.method)}, {"available", mm.available}};
        if (mm.available) {
            e["replications"] = mm.n_ok;
            e["tpr"] = mm.tpr;
            e["tnr"] = mm.tnr;
            e["mse"] = mm.mse;
        } else {
            e["reason"] = mm.unavailable_reason;
        }
        methods.push_back(e);
    }
    j["methods"] = methods;
    Json reps = Json::array();
    for (const auto& r : m.replications) {
        Json e{{"replication", r.replication}};
        if (!r.failure.empty()) {
            e["failure"] = r.failure;
        } else {
            e["m_opt"] = r.m_opt;
            e["variance_components"] = to_json(r.variance_components);
            Json se = Json::object();
            for (const auto& [meth, v] : r.squared_error) se[to_string(meth)] = v;
            e["squared_error"] = se;
        }
        reps.push_back(e);
    }
    j["replications"] = reps;
    j["hard_failures"] = m.hard_failures();
    j["timing"] = Json::object();
    return j;
}

}  // namespace gspboost

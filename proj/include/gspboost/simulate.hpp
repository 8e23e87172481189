#pragma once

// Monte Carlo harness: the GSPECM data-generating process, selection and
// accuracy metrics, and the replicated estimator comparison.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <exception>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "cv.hpp"
#include "kron.hpp"
#include "panel.hpp"
#include "pipeline.hpp"

namespace gspboost {

using CoefficientMap = std::map<std::string, double>;

/// Coefficients of the benchmark DGP:
///   y = 1 + 3.5 x1 - 2.5 x2 - 4 W x1 + 3 W x2 + v
inline CoefficientMap benchmark_delta() {
    return {{kInterceptName, 1.0}, {"x1", 3.5}, {"x2", -2.5}, {lag_name("x1"), -4.0}, {lag_name("x2"), 3.0}};
}

struct DgpConfig {
    Index n = 100;
    Index t = 5;
    Index k = 40;  ///< candidate columns, half raw regressors and half their spatial lags
    CoefficientMap true_delta = benchmark_delta();
    double rho1 = 0.0;
    double rho2 = 0.0;
    double sigma_mu2 = 10.0;
    double sigma_eps2 = 10.0;
    Index knn_k = 10;
    std::uint64_t seed = 1;
    int n_replications = 100;

    Index n_raw() const { return k / 2; }

    std::vector<std::string> candidate_names() const {
        std::vector<std::string> names;
        for (Index p = 1; p <= n_raw(); ++p) names.push_back("x" + std::to_string(p));
        for (Index p = 1; p <= n_raw(); ++p) names.push_back(lag_name("x" + std::to_string(p)));
        return names;
    }

    void validate() const {
        if (n < 2 || t < 1) throw InvalidParameter("DGP needs N >= 2 and T >= 1");
        if (k < 2 || k % 2 != 0) throw InvalidParameter("K must be a positive even number (regressors plus lags)");
        if (!(std::abs(rho1) < 1.0 && std::abs(rho2) < 1.0)) throw InvalidParameter("DGP needs |rho| < 1");
        if (!(sigma_eps2 > 0.0) || !(sigma_mu2 >= 0.0)) throw InvalidParameter("DGP variances out of range");
        if (knn_k < 1 || knn_k >= n) throw InvalidParameter("knn k must satisfy 1 <= k < N");
        if (n_replications < 1) throw InvalidParameter("need at least one replication");
        const auto names = candidate_names();
        for (const auto& [name, value] : true_delta) {
            if (name == kInterceptName) continue;
            if (std::find(names.begin(), names.end(), name) == names.end())
                throw InvalidParameter("informative column '" + name + "' is not among the candidates");
        }
    }
};

struct SimulatedPanel {
    PanelDataset data;
    SpatialWeights w;
    CoefficientMap true_delta;
    Vector mu;  ///< location effects
    Vector u1;  ///< A^{-1} mu
    Vector eps; ///< idiosyncratic innovations, NT
    Vector u2;  ///< (I_T (x) B^{-1}) eps
};

/// Seeded uniform centroids on the unit square, shared by all replications.
inline Eigen::MatrixX2d simulation_centroids(const DgpConfig& cfg) {
    std::mt19937_64 rng(stream_key(cfg.seed, 0x63656e74ULL));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Eigen::MatrixX2d c(cfg.n, 2);
    for (Index i = 0; i < cfg.n; ++i) {
        c(i, 0) = unit(rng);
        c(i, 1) = unit(rng);
    }
    return c;
}

/// One replication of the DGP. The random stream is keyed by (seed, replication)
/// so replications can be generated independently and in any order.
inline SimulatedPanel generate_panel(const DgpConfig& cfg, int replication) {
    cfg.validate();
    const Index n = cfg.n, t = cfg.t, p = cfg.n_raw();
    const Eigen::MatrixX2d centroids = simulation_centroids(cfg);
    SpatialWeights w = build_knn_weights(centroids, cfg.knn_k);

    std::mt19937_64 rng(stream_key(cfg.seed, 0x7265706cULL, static_cast<std::uint64_t>(replication)));
    std::uniform_real_distribution<double> zeta_dist(-7.5, 7.5);
    std::uniform_real_distribution<double> kappa_dist(-5.0, 5.0);
    std::normal_distribution<double> mu_dist(0.0, std::sqrt(cfg.sigma_mu2));
    std::normal_distribution<double> eps_dist(0.0, std::sqrt(cfg.sigma_eps2));

    Matrix x(n * t, p);
    for (Index j = 0; j < p; ++j) {
        Vector zeta(n);
        for (Index i = 0; i < n; ++i) zeta[i] = zeta_dist(rng);
        for (Index tt = 0; tt < t; ++tt)
            for (Index i = 0; i < n; ++i) x(i + n * tt, j) = zeta[i] + kappa_dist(rng);
    }
    Vector mu(n);
    for (Index i = 0; i < n; ++i) mu[i] = mu_dist(rng);
    Vector eps(n * t);
    for (Index r = 0; r < n * t; ++r) eps[r] = eps_dist(rng);

    const SpatialFilter a(cfg.rho1, w);
    const SpatialFilter b(cfg.rho2, w);
    Vector u1 = a.solve(mu);
    Vector u2 = b.solve(eps);

    const auto names = cfg.candidate_names();
    const Matrix lags = spatial_lag(x, w.matrix());
    Vector y = u2;
    for (Index tt = 0; tt < t; ++tt) y.segment(n * tt, n) += u1;
    for (const auto& [name, value] : cfg.true_delta) {
        if (name == kInterceptName) {
            y.array() += value;
            continue;
        }
        const auto pos = static_cast<Index>(std::find(names.begin(), names.end(), name) - names.begin());
        if (pos < p)
            y += value * x.col(pos);
        else
            y += value * lags.col(pos - p);
    }

    std::vector<std::string> raw_names(names.begin(), names.begin() + p);
    PanelDataset data(n, t, std::move(y), std::move(x), std::move(raw_names), {}, {}, centroids);
    return {std::move(data), std::move(w), cfg.true_delta, std::move(mu), std::move(u1), std::move(eps), std::move(u2)};
}

// ---------------------------------------------------------------------------
// Metrics

struct SelectionRates {
    double tpr = 1.0;
    double tnr = 1.0;
};

/// A column counts as selected iff its coefficient is nonzero. The intercept
/// is left out of both rates.
inline SelectionRates evaluate_selection(const Vector& coefficients, const std::vector<std::string>& names,
                                         const CoefficientMap& true_delta) {
    if (static_cast<Index>(names.size()) != coefficients.size()) throw AlignmentError("coefficient/name count mismatch");
    for (const auto& [name, value] : true_delta) {
        if (name == kInterceptName) continue;
        if (std::find(names.begin(), names.end(), name) == names.end())
            throw AlignmentError("true coefficient '" + name + "' has no estimate");
    }
    int tp = 0, pos = 0, tn = 0, neg = 0;
    for (std::size_t j = 0; j < names.size(); ++j) {
        if (names[j] == kInterceptName) continue;
        const auto it = true_delta.find(names[j]);
        const bool informative = it != true_delta.end() && it->second != 0.0;
        const bool selected = coefficients[static_cast<Index>(j)] != 0.0;
        if (informative) {
            ++pos;
            tp += selected;
        } else {
            ++neg;
            tn += !selected;
        }
    }
    SelectionRates r;
    r.tpr = pos ? static_cast<double>(tp) / pos : 1.0;
    r.tnr = neg ? static_cast<double>(tn) / neg : 1.0;
    return r;
}

/// Sum: squared Euclidean error of the coefficient vector per replication.
/// Mean: that sum divided by the number of candidate coefficients.
enum class MseConvention { Sum, Mean };

inline double squared_error(const Vector& coefficients, const std::vector<std::string>& names,
                            const CoefficientMap& true_delta, MseConvention conv = MseConvention::Sum) {
    if (static_cast<Index>(names.size()) != coefficients.size()) throw AlignmentError("coefficient/name count mismatch");
    double sse = 0.0;
    int count = 0;
    for (std::size_t j = 0; j < names.size(); ++j) {
        if (names[j] == kInterceptName) continue;
        const auto it = true_delta.find(names[j]);
        const double truth = it == true_delta.end() ? 0.0 : it->second;
        const double e = coefficients[static_cast<Index>(j)] - truth;
        sse += e * e;
        ++count;
    }
    return conv == MseConvention::Sum || count == 0 ? sse : sse / count;
}

inline double evaluate_mse(const std::vector<Vector>& fits, const std::vector<std::string>& names,
                           const CoefficientMap& true_delta, MseConvention conv = MseConvention::Sum) {
    if (fits.empty()) throw InvalidParameter("MSE needs at least one replication");
    double total = 0.0;
    for (const auto& f : fits) total += squared_error(f, names, true_delta, conv);
    return total / static_cast<double>(fits.size());
}

// ---------------------------------------------------------------------------
// Experiment

enum class Method { FGLS, LTB, DES };

inline const char* to_string(Method m) {
    switch (m) {
        case Method::FGLS: return "FGLS";
        case Method::LTB: return "LTB";
        case Method::DES: return "DES";
    }
    return "?";
}

inline Method parse_method(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (s == "fgls" || s == "gmm") return Method::FGLS;
    if (s == "ltb") return Method::LTB;
    if (s == "des") return Method::DES;
    throw InvalidParameter("unknown method '" + s + "'");
}

struct ExperimentOptions {
    BoostConfig boost;  ///< m_stop is the CV budget
    int folds = 5;
    double tau = 0.01;
    int threads = 1;
    MseConvention mse = MseConvention::Sum;
};

struct MethodMetrics {
    Method method = Method::LTB;
    bool available = true;
    std::string unavailable_reason;
    int n_ok = 0;
    double tpr = 0.0;
    double tnr = 0.0;
    double mse = 0.0;
};

struct ReplicationRecord {
    int replication = 0;
    VarianceComponents variance_components;
    int m_opt = 0;
    std::map<Method, Vector> coefficients;
    std::map<Method, SelectionRates> rates;
    std::map<Method, double> squared_error;
    std::string failure;  ///< non-empty for a hard failure
};

struct SimulationMetrics {
    DgpConfig config;
    ModelSpec spec;
    std::vector<std::string> coefficient_names;
    std::vector<MethodMetrics> methods;
    std::vector<ReplicationRecord> replications;

    const MethodMetrics& at(Method m) const {
        for (const auto& mm : methods)
            if (mm.method == m) return mm;
        throw InvalidParameter(std::string("method ") + to_string(m) + " was not run");
    }
    int hard_failures() const {
        return static_cast<int>(std::count_if(replications.begin(), replications.end(),
                                              [](const ReplicationRecord& r) { return !r.failure.empty(); }));
    }
};

inline ReplicationRecord run_replication(const DgpConfig& cfg, const std::set<Method>& methods, const ModelSpec& spec,
                                         const ExperimentOptions& opt, int replication, bool fgls_feasible) {
    ReplicationRecord rec;
    rec.replication = replication;
    const auto sim = generate_panel(cfg, replication);

    FitOptions fo;
    fo.spec = spec;
    fo.boost = opt.boost;
    fo.cv = FoldKind::SpatialClusters;
    fo.folds = opt.folds;
    fo.seed = stream_key(cfg.seed, 0x666f6c64ULL, static_cast<std::uint64_t>(replication));
    fo.deselect = methods.count(Method::DES) > 0;
    fo.tau = opt.tau;
    fo.baseline = fgls_feasible && methods.count(Method::FGLS) > 0;

    const auto fit = fit_model(sim.data, sim.w, fo);
    rec.variance_components = fit.selection.variance_components;
    rec.m_opt = fit.selection.m_opt;
    const auto& names = fit.names();
    auto record = [&](Method m, const Vector& coef) {
        rec.coefficients[m] = coef;
        rec.rates[m] = evaluate_selection(coef, names, sim.true_delta);
        rec.squared_error[m] = squared_error(coef, names, sim.true_delta, opt.mse);
    };
    if (methods.count(Method::LTB)) record(Method::LTB, fit.ltb.coefficients);
    if (fit.des) record(Method::DES, fit.des->coefficients(static_cast<Index>(names.size())));
    if (fit.fgls) record(Method::FGLS, *fit.fgls);
    return rec;
}

/// Runs every replication (in parallel when threads > 1) and aggregates
/// per-method TPR, TNR and MSE in replication order.
inline SimulationMetrics run_experiment(const DgpConfig& cfg, const std::set<Method>& methods, ModelSpec spec,
                                        const ExperimentOptions& opt = {}) {
    cfg.validate();
    if (methods.empty()) throw InvalidParameter("no methods requested");
    if (spec.effects == Effects::Fixed) spec.include_intercept = false;

    SimulationMetrics out;
    out.config = cfg;
    out.spec = spec;
    const Index k_design = cfg.k + (spec.include_intercept ? 1 : 0) - (spec.include_spatial_lags ? 0 : cfg.k / 2);
    const bool fgls_feasible = k_design < cfg.n * cfg.t;

    out.replications.resize(static_cast<std::size_t>(cfg.n_replications));
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int r = next++; r < cfg.n_replications; r = next++) {
            auto& slot = out.replications[static_cast<std::size_t>(r)];
            try {
                slot = run_replication(cfg, methods, spec, opt, r, fgls_feasible);
            } catch (const std::exception& e) {
                slot = ReplicationRecord{};
                slot.replication = r;
                slot.failure = e.what();
            }
        }
    };
    const int threads = std::max(1, std::min(opt.threads, cfg.n_replications));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    const auto candidates = cfg.candidate_names();
    if (spec.include_intercept) out.coefficient_names.emplace_back(kInterceptName);
    const auto n_names = spec.include_spatial_lags ? candidates.size() : static_cast<std::size_t>(cfg.n_raw());
    out.coefficient_names.insert(out.coefficient_names.end(), candidates.begin(),
                                 candidates.begin() + static_cast<std::ptrdiff_t>(n_names));

    for (Method m : {Method::FGLS, Method::LTB, Method::DES}) {
        if (!methods.count(m)) continue;
        MethodMetrics mm;
        mm.method = m;
        if (m == Method::FGLS && !fgls_feasible) {
            mm.available = false;
            mm.unavailable_reason = "K >= NT: normal equations are singular";
            out.methods.push_back(mm);
            continue;
        }
        for (const auto& rec : out.replications) {
            const auto it = rec.rates.find(m);
            if (it == rec.rates.end()) continue;
            ++mm.n_ok;
            mm.tpr += it->second.tpr;
            mm.tnr += it->second.tnr;
            mm.mse += rec.squared_error.at(m);
        }
        if (mm.n_ok == 0) {
            mm.available = false;
            mm.unavailable_reason = "no replication produced an estimate";
        } else {
            mm.tpr /= mm.n_ok;
            mm.tnr /= mm.n_ok;
            mm.mse /= mm.n_ok;
        }
        out.methods.push_back(mm);
    }
    return out;
}

}  // namespace gspboost

// gspboost command-line driver: fit, cv, transform, simulate.
//
// Exit codes: 0 success, 2 validation error, 3 estimation failure, 4 I/O error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <gspboost/gspboost.hpp>
#include <gspboost/io.hpp>

namespace fs = std::filesystem;
using namespace gspboost;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitEstimation = 3;
constexpr int kExitIo = 4;

int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::Validation: return kExitValidation;
        case ErrorKind::Estimation: return kExitEstimation;
        case ErrorKind::Io: return kExitIo;
    }
    return kExitEstimation;
}

struct ModelFlags {
    std::string panel;
    std::string weights;
    std::string centroids;
    int knn = 10;
    bool raw_weights = false;
    std::string family = "gspecm";
    std::string effects = "random";
    bool no_lags = false;
    bool no_intercept = false;
    bool standardize = false;
    double learning_rate = 0.1;
    int mstop = 1000;
    int folds = 5;
    std::string cv = "spatial";
    std::uint64_t seed = 1;
    double tau = 0.01;
    bool no_deselect = false;
    bool baseline = false;
    std::string out = "gspboost-out";
};

void add_input_flags(CLI::App* app, ModelFlags& f) {
    app->add_option("--panel", f.panel, "Panel CSV: location,period,y,<x1>,...")->required();
    app->add_option("--weights", f.weights,
                    "Weights CSV: neighbor list 'from,to,weight' or centroids 'location,cx,cy'")
        ->required();
    app->add_option("--centroids", f.centroids,
                    "Centroid CSV used for spatial folds when --weights is a neighbor list");
    app->add_option("--knn", f.knn, "Neighbors per location when --weights holds centroids")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    app->add_flag("--raw-weights", f.raw_weights, "Use neighbor-list weights as given (no row normalization)");
    app->add_option("--family", f.family, "Error model: ans, kkp or gspecm")
        ->capture_default_str()
        ->check(CLI::IsMember({"ans", "kkp", "gspecm"}, CLI::ignore_case));
    app->add_option("--effects", f.effects, "Location effects: random or fixed")
        ->capture_default_str()
        ->check(CLI::IsMember({"random", "fixed"}, CLI::ignore_case));
    app->add_flag("--no-lags", f.no_lags, "Leave spatial lags WX out of the design");
    app->add_flag("--no-intercept", f.no_intercept, "Leave the intercept column out of the design");
    app->add_flag("--standardize", f.standardize, "Center and scale each raw regressor before augmentation");
    app->add_option("--seed", f.seed, "Seed for fold construction")->capture_default_str();
    app->add_option("--out", f.out, "Output directory")->capture_default_str();
}

void add_boost_flags(CLI::App* app, ModelFlags& f) {
    app->add_option("--learning-rate", f.learning_rate, "Boosting step length s")->capture_default_str();
    app->add_option("--mstop-budget", f.mstop, "Largest number of boosting iterations examined by CV")
        ->capture_default_str();
    app->add_option("--folds", f.folds, "Number of spatial folds")->capture_default_str();
    app->add_option("--cv", f.cv, "Fold scheme: spatial (k-means on centroids) or time (leave one period out)")
        ->capture_default_str()
        ->check(CLI::IsMember({"spatial", "time"}, CLI::ignore_case));
}

Json echo(const ModelFlags& f, const std::string& command) {
    Json j;
    j["panel"] = f.panel;
    j["weights"] = f.weights;
    j["centroids"] = f.centroids;
    j["knn"] = f.knn;
    j["raw_weights"] = f.raw_weights;
    j["family"] = f.family;
    j["effects"] = f.effects;
    j["spatial_lags"] = !f.no_lags;
    j["intercept"] = !f.no_intercept;
    j["standardize"] = f.standardize;
    if (command != "transform") {
        j["learning_rate"] = f.learning_rate;
        j["mstop_budget"] = f.mstop;
        j["folds"] = f.folds;
        j["cv"] = f.cv;
    }
    if (command == "fit") {
        j["tau"] = f.tau;
        j["deselect"] = !f.no_deselect;
        j["baseline"] = f.baseline;
    }
    return j;
}

struct Inputs {
    PanelDataset data;
    SpatialWeights w;
};

Inputs load(const ModelFlags& f) {
    PanelDataset raw = io::read_panel_csv(f.panel);
    auto wi = io::read_weights(f.weights, raw.location_ids(), f.knn, !f.raw_weights);
    std::optional<Eigen::MatrixX2d> cent = wi.centroids;
    if (!f.centroids.empty()) cent = io::read_centroids_csv(f.centroids, raw.location_ids());
    if (f.standardize) raw = standardize_regressors(raw);
    PanelDataset data(raw.n_locations(), raw.n_periods(), raw.response(), raw.regressors(), raw.regressor_names(),
                      raw.location_ids(), raw.period_ids(), cent);
    return {std::move(data), std::move(wi.weights)};
}

ModelSpec model_spec(const ModelFlags& f) {
    ModelSpec s;
    s.family = parse_family(f.family);
    s.effects = parse_effects(f.effects);
    s.include_spatial_lags = !f.no_lags;
    s.include_intercept = !f.no_intercept;
    return s;
}

BoostConfig boost_config(const ModelFlags& f) {
    BoostConfig c;
    c.learning_rate = f.learning_rate;
    c.m_stop = f.mstop;
    c.validate();
    return c;
}

FoldKind fold_kind(const ModelFlags& f) { return f.cv == "time" ? FoldKind::LeaveTimeOut : FoldKind::SpatialClusters; }

void prepare_out(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
}

std::string path_in(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void print_warnings(const std::vector<std::string>& w) {
    for (const auto& m : w) std::cerr << "warning: " << m << "\n";
}

void write_risk_curve(const std::string& path, const std::vector<double>& risk) {
    io::CsvWriter w(path);
    w.row({"m", "cv_risk"});
    for (std::size_t m = 0; m < risk.size(); ++m) w.row({std::to_string(m), io::format_double(risk[m])});
}

// ---------------------------------------------------------------------------

int cmd_fit(const ModelFlags& f) {
    const auto t0 = std::chrono::steady_clock::now();
    const Inputs in = load(f);
    FitOptions opt;
    opt.spec = model_spec(f);
    opt.boost = boost_config(f);
    opt.cv = fold_kind(f);
    opt.folds = f.folds;
    opt.seed = f.seed;
    opt.deselect = !f.no_deselect;
    opt.tau = f.tau;
    opt.baseline = f.baseline;
    const FitResult res = fit_model(in.data, in.w, opt);
    const auto& names = res.names();

    RunReport rep;
    rep.command = "fit";
    rep.seed = f.seed;
    rep.parameters = echo(f, "fit");
    rep.variance_components = res.selection.variance_components;
    rep.m_opt = res.selection.m_opt;
    rep.cv_risk = res.selection.cv_risk_curve;
    rep.risk_path = res.ltb.risk_path;
    for (Index j : res.ltb.selection_path) rep.selection_path.push_back(names[static_cast<std::size_t>(j)]);
    const Index k = static_cast<Index>(names.size());
    auto add = [&](const char* method, const Vector& c) {
        for (Index j = 0; j < k; ++j)
            rep.coefficients.push_back({names[static_cast<std::size_t>(j)], method, c[j], c[j] != 0.0});
    };
    add("LTB", res.ltb.coefficients);
    if (res.des) {
        add("DES", res.des->coefficients(k));
        rep.retained = res.des->retained_names;
    }
    if (res.fgls) add("FGLS", *res.fgls);
    rep.warnings = res.warnings;
    if (f.baseline && !res.fgls) rep.warnings.push_back("FGLS baseline unavailable: " + res.fgls_unavailable);

    prepare_out(f.out);
    {
        io::CsvWriter w(path_in(f.out, "coefficients.csv"));
        std::vector<std::string> h{"name", "LTB"};
        if (res.des) h.emplace_back("DES");
        if (f.baseline) h.emplace_back("FGLS");
        w.row(h);
        for (Index j = 0; j < k; ++j) {
            std::vector<std::string> row{names[static_cast<std::size_t>(j)], io::format_double(res.ltb.coefficients[j])};
            if (res.des) row.push_back(io::format_double(res.des->coefficients(k)[j]));
            if (f.baseline) row.push_back(res.fgls ? io::format_double((*res.fgls)[j]) : "NA");
            w.row(row);
        }
    }
    write_risk_curve(path_in(f.out, "cv_risk.csv"), rep.cv_risk);
    {
        io::CsvWriter w(path_in(f.out, "risk_path.csv"));
        w.row({"m", "risk", "selected"});
        for (std::size_t m = 0; m < rep.risk_path.size(); ++m)
            w.row({std::to_string(m), io::format_double(rep.risk_path[m]), m == 0 ? "" : rep.selection_path[m - 1]});
    }
    rep.timing["seconds"] = seconds_since(t0);
    io::write_text(path_in(f.out, "report.json"), dump(to_json(rep)));

    print_warnings(rep.warnings);
    const auto& vc = res.selection.variance_components;
    auto num = [](const std::optional<double>& v) { return v ? io::format_double(*v) : std::string("NA"); };
    std::printf("m_opt %d\nrho1 %s\nrho2 %s\nsigma_mu2 %s\nsigma_eps2 %s\n", rep.m_opt, num(vc.rho1).c_str(),
                num(vc.rho2).c_str(), num(vc.sigma_mu2).c_str(), num(vc.sigma_eps2).c_str());
    std::printf("selected (LTB): %d of %d columns", static_cast<int>((res.ltb.coefficients.array() != 0.0).count()),
                static_cast<int>(k));
    if (res.des) std::printf("; retained (DES): %d", static_cast<int>(res.des->retained.size()));
    std::printf("\nwrote %s\n", f.out.c_str());
    return 0;
}

int cmd_cv(const ModelFlags& f) {
    const auto t0 = std::chrono::steady_clock::now();
    const Inputs in = load(f);
    const ModelSpec spec = model_spec(f);
    const BoostConfig cfg = boost_config(f);
    const FoldPlan plan = make_fold_plan(in.data, fold_kind(f), f.folds, f.seed);
    GmmOptions gmm;
    gmm.boost = cfg;
    gmm.folds = f.folds;
    gmm.seed = f.seed;
    gmm.plan = plan;
    const auto design = augment_design(in.data, in.w, spec);
    const auto vc = estimate_variance_components(in.data, design, in.w, spec, gmm);
    const auto td = transform(in.data, design, in.w, vc, spec.effects);
    const auto curve = cv_risk_curve(td.response_star, td.design_star, plan, cfg);

    RunReport rep;
    rep.command = "cv";
    rep.seed = f.seed;
    rep.parameters = echo(f, "cv");
    rep.variance_components = vc;
    rep.m_opt = curve.m_opt;
    rep.cv_risk = curve.risk;
    rep.warnings = vc.warnings;
    rep.warnings.insert(rep.warnings.end(), curve.warnings.begin(), curve.warnings.end());

    prepare_out(f.out);
    {
        io::CsvWriter w(path_in(f.out, "cv_risk.csv"));
        std::vector<std::string> h{"m", "cv_risk"};
        for (std::size_t k = 0; k < curve.fold_risk.size(); ++k) h.push_back("fold" + std::to_string(k + 1));
        w.row(h);
        for (std::size_t m = 0; m < curve.risk.size(); ++m) {
            std::vector<std::string> row{std::to_string(m), io::format_double(curve.risk[m])};
            for (const auto& fr : curve.fold_risk) row.push_back(io::format_double(fr[m]));
            w.row(row);
        }
    }
    {
        io::CsvWriter w(path_in(f.out, "folds.csv"));
        w.row({"location", "fold"});
        for (Index i = 0; i < in.data.n_locations(); ++i)
            w.row({in.data.location_ids()[i], std::to_string(plan.assignment[static_cast<std::size_t>(i)] + 1)});
    }
    rep.timing["seconds"] = seconds_since(t0);
    io::write_text(path_in(f.out, "report.json"), dump(to_json(rep)));
    print_warnings(rep.warnings);
    std::printf("m_opt %d  cv_risk %.6g\nwrote %s\n", curve.m_opt, curve.risk[static_cast<std::size_t>(curve.m_opt)],
                f.out.c_str());
    return 0;
}

int cmd_transform(const ModelFlags& f) {
    const auto t0 = std::chrono::steady_clock::now();
    const Inputs in = load(f);
    const ModelSpec spec = model_spec(f);
    GmmOptions gmm;
    gmm.seed = f.seed;
    const auto design = augment_design(in.data, in.w, spec);
    const auto vc = estimate_variance_components(in.data, design, in.w, spec, gmm);
    const auto td = transform(in.data, design, in.w, vc, spec.effects);

    prepare_out(f.out);
    {
        io::CsvWriter w(path_in(f.out, "transformed.csv"));
        std::vector<std::string> h{"location", "period", "y_star"};
        h.insert(h.end(), td.coefficient_names.begin(), td.coefficient_names.end());
        w.row(h);
        const Index n = td.n_locations;
        for (Index r = 0; r < td.n_obs(); ++r) {
            std::vector<std::string> row{in.data.location_ids()[r % n], in.data.period_ids()[r / n],
                                         io::format_double(td.response_star[r])};
            for (Index j = 0; j < td.n_columns(); ++j) row.push_back(io::format_double(td.design_star(r, j)));
            w.row(row);
        }
    }
    RunReport rep;
    rep.command = "transform";
    rep.seed = f.seed;
    rep.parameters = echo(f, "transform");
    rep.parameters["operator_fingerprint"] = td.provenance.operator_fingerprint;
    rep.variance_components = vc;
    rep.warnings = vc.warnings;
    rep.timing["seconds"] = seconds_since(t0);
    io::write_text(path_in(f.out, "report.json"), dump(to_json(rep)));
    print_warnings(rep.warnings);
    std::printf("transformed %lld rows x %lld columns\nwrote %s\n", static_cast<long long>(td.n_obs()),
                static_cast<long long>(td.n_columns()), f.out.c_str());
    return 0;
}

struct SimFlags {
    DgpConfig dgp;
    std::string effects = "random";
    std::string family = "gspecm";
    std::string methods = "fgls,ltb,des";
    ExperimentOptions exp;
    std::string mse = "sum";
    std::string out = "gspboost-sim";
    bool export_panel = false;
};

int cmd_simulate(SimFlags f) {
    const auto t0 = std::chrono::steady_clock::now();
    std::set<Method> methods;
    std::stringstream ss(f.methods);
    for (std::string tok; std::getline(ss, tok, ',');)
        if (!tok.empty()) methods.insert(parse_method(tok));
    ModelSpec spec;
    spec.family = parse_family(f.family);
    spec.effects = parse_effects(f.effects);
    f.exp.mse = f.mse == "mean" ? MseConvention::Mean : MseConvention::Sum;
    f.exp.boost.validate();

    prepare_out(f.out);
    if (f.export_panel) {
        const auto sim = generate_panel(f.dgp, 0);
        io::write_panel_csv(path_in(f.out, "panel.csv"), sim.data);
        io::write_centroids_csv(path_in(f.out, "centroids.csv"), *sim.data.centroids(), sim.data.location_ids());
    }
    const auto metrics = run_experiment(f.dgp, methods, spec, f.exp);

    Json j = to_json(metrics, f.exp);
    j["timing"]["seconds"] = seconds_since(t0);
    j["timing"]["threads"] = f.exp.threads;
    io::write_text(path_in(f.out, "metrics.json"), dump(j));
    {
        io::CsvWriter w(path_in(f.out, "metrics.csv"));
        w.row({"method", "available", "replications", "tpr", "tnr", "mse"});
        for (const auto& mm : metrics.methods) {
            if (mm.available)
                w.row({to_string(mm.method), "true", std::to_string(mm.n_ok), io::format_double(mm.tpr),
                       io::format_double(mm.tnr), io::format_double(mm.mse)});
            else
                w.row({to_string(mm.method), "false", "0", "--", "--", "--"});
        }
    }
    std::printf("%-5s %8s %8s %10s\n", "", "TPR", "TNR", "MSE");
    for (const auto& mm : metrics.methods) {
        if (mm.available)
            std::printf("%-5s %8.3f %8.3f %10.4f\n", to_string(mm.method), mm.tpr, mm.tnr, mm.mse);
        else
            std::printf("%-5s %8s %8s %10s  (%s)\n", to_string(mm.method), "--", "--", "--",
                        mm.unavailable_reason.c_str());
    }
    std::printf("wrote %s\n", f.out.c_str());
    const int failures = metrics.hard_failures();
    if (failures > 0) {
        for (const auto& r : metrics.replications)
            if (!r.failure.empty()) std::cerr << "replication " << r.replication << ": " << r.failure << "\n";
        std::cerr << failures << " replication(s) failed\n";
        return kExitEstimation;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Feasible L2-boosting for spatial panel error-components models"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    ModelFlags fit_f, cv_f, tr_f;
    auto* fit = app.add_subcommand("fit", "Estimate variance components, cross-validate and boost");
    add_input_flags(fit, fit_f);
    add_boost_flags(fit, fit_f);
    fit->add_option("--tau", fit_f.tau, "Deselection threshold")->capture_default_str();
    fit->add_flag("--no-deselect", fit_f.no_deselect, "Skip post-hoc deselection");
    fit->add_flag("--baseline", fit_f.baseline, "Add the feasible GLS baseline when K < NT");

    auto* cv = app.add_subcommand("cv", "Cross-validated risk curve on the transformed data");
    add_input_flags(cv, cv_f);
    add_boost_flags(cv, cv_f);

    auto* tr = app.add_subcommand("transform", "Write the transformed response and design");
    add_input_flags(tr, tr_f);

    SimFlags sim_f;
    auto* sim = app.add_subcommand("simulate", "Monte Carlo comparison of FGLS, LTB and DES");
    sim->add_option("--n", sim_f.dgp.n, "Locations")->capture_default_str();
    sim->add_option("--t", sim_f.dgp.t, "Periods")->capture_default_str();
    sim->add_option("--k", sim_f.dgp.k, "Candidate columns (half regressors, half their lags)")->capture_default_str();
    sim->add_option("--rho1", sim_f.dgp.rho1, "Spatial parameter of the location effects")->capture_default_str();
    sim->add_option("--rho2", sim_f.dgp.rho2, "Spatial parameter of the idiosyncratic errors")->capture_default_str();
    sim->add_option("--sigma-mu2", sim_f.dgp.sigma_mu2, "Variance of the location effects")->capture_default_str();
    sim->add_option("--sigma-eps2", sim_f.dgp.sigma_eps2, "Variance of the innovations")->capture_default_str();
    sim->add_option("--knn", sim_f.dgp.knn_k, "Neighbors per location")->capture_default_str();
    sim->add_option("--nsim", sim_f.dgp.n_replications, "Replications")->capture_default_str();
    sim->add_option("--seed", sim_f.dgp.seed, "Master seed")->capture_default_str();
    sim->add_option("--effects", sim_f.effects, "random or fixed")
        ->capture_default_str()
        ->check(CLI::IsMember({"random", "fixed"}, CLI::ignore_case));
    sim->add_option("--family", sim_f.family, "ans, kkp or gspecm")
        ->capture_default_str()
        ->check(CLI::IsMember({"ans", "kkp", "gspecm"}, CLI::ignore_case));
    sim->add_option("--methods", sim_f.methods, "Comma-separated subset of fgls,ltb,des")->capture_default_str();
    sim->add_option("--learning-rate", sim_f.exp.boost.learning_rate, "Boosting step length s")->capture_default_str();
    sim->add_option("--mstop-budget", sim_f.exp.boost.m_stop, "CV iteration budget")->capture_default_str();
    sim->add_option("--folds", sim_f.exp.folds, "Spatial folds")->capture_default_str();
    sim->add_option("--tau", sim_f.exp.tau, "Deselection threshold")->capture_default_str();
    sim->add_option("--mse", sim_f.mse, "sum: squared error summed over coefficients; mean: divided by K")
        ->capture_default_str()
        ->check(CLI::IsMember({"sum", "mean"}));
    sim->add_option("--threads", sim_f.exp.threads, "Worker threads for replications")
        ->envname("GSPBOOST_THREADS")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    sim->add_flag("--export-panel", sim_f.export_panel,
                  "Also write replication 0 as panel.csv and centroids.csv");
    sim->add_option("--out", sim_f.out, "Output directory")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitValidation;
    }

    try {
        if (*fit) return cmd_fit(fit_f);
        if (*cv) return cmd_cv(cv_f);
        if (*tr) return cmd_transform(tr_f);
        if (*sim) return cmd_simulate(sim_f);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitEstimation;
    }
    return 0;
}

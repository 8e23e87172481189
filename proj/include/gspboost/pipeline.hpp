#pragma once

// End-to-end estimation: variance components -> transform -> CV for m_opt
// -> boosting -> optional deselection and FGLS baseline.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "boost.hpp"
#include "cv.hpp"
#include "modelselect.hpp"

namespace gspboost {

struct FitOptions {
    ModelSpec spec;
    BoostConfig boost;  ///< m_stop is the CV budget
    FoldKind cv = FoldKind::SpatialClusters;
    int folds = 5;
    std::uint64_t seed = 1;
    bool deselect = true;
    double tau = 0.01;
    bool baseline = false;
};

struct FitResult {
    ModelSelection selection;
    BoostFit ltb;
    std::optional<DeselectionResult> des;
    std::optional<Vector> fgls;
    std::string fgls_unavailable;  ///< reason when the baseline could not be computed
    FoldPlan plan;
    std::vector<std::string> warnings;

    const std::vector<std::string>& names() const { return selection.transformed.coefficient_names; }
};

inline FoldPlan make_fold_plan(const PanelDataset& data, FoldKind kind, int folds, std::uint64_t seed) {
    if (kind == FoldKind::LeaveTimeOut) return make_time_folds(data.n_locations(), data.n_periods());
    if (!data.centroids()) throw InvalidParameter("spatial cross-validation needs location centroids");
    return make_spatial_folds(*data.centroids(), folds, seed, data.n_periods());
}

inline FitResult fit_model(const PanelDataset& data, const SpatialWeights& w, const FitOptions& opt) {
    opt.boost.validate();
    const auto design = augment_design(data, w, opt.spec);
    FitResult res;
    res.plan = make_fold_plan(data, opt.cv, opt.folds, opt.seed);

    GmmOptions gmm;
    gmm.boost = opt.boost;
    gmm.folds = opt.folds;
    gmm.seed = opt.seed;
    gmm.plan = res.plan;

    res.selection = select_m_opt(data, design, w, opt.spec, opt.boost, res.plan, gmm);
    res.warnings = res.selection.warnings;
    const auto& td = res.selection.transformed;

    if (res.selection.m_opt > 0) {
        BoostConfig cfg = opt.boost;
        cfg.m_stop = res.selection.m_opt;
        res.ltb = boost(td, cfg);
    } else {
        res.ltb.coefficients = Vector::Zero(td.n_columns());
        res.ltb.risk_path = {td.response_star.squaredNorm() / static_cast<double>(td.n_obs())};
        res.warnings.emplace_back("cross-validation selected m_opt = 0; the boosted model is empty");
    }
    for (const auto& m : res.ltb.warnings) res.warnings.push_back(m);

    if (opt.deselect) {
        res.des = deselect(td, opt.boost, res.ltb, opt.tau);
        for (const auto& m : res.des->warnings) res.warnings.push_back("deselection: " + m);
    }
    if (opt.baseline) {
        try {
            res.fgls = fgls_baseline(td);
        } catch (const RankError& e) {
            res.fgls_unavailable = e.what();
        }
    }
    return res;
}

}  // namespace gspboost

#pragma once

#include <string>
#include <vector>

#include "cv.hpp"
#include "gmm.hpp"
#include "transform.hpp"

namespace gspboost {

struct ModelSelection {
    int m_opt = 0;
    std::vector<double> cv_risk_curve;
    VarianceComponents variance_components;
    TransformedData transformed;
    std::vector<std::string> warnings;
};

/// Estimates variance components and transforms once on the full data, then
/// cross-validates boosting over the transformed rows. m_opt is the smallest
/// minimizer of the fold-averaged held-out risk.
inline ModelSelection select_m_opt(const PanelDataset& data, const AugmentedDesign& design, const SpatialWeights& w,
                                   const ModelSpec& spec, const BoostConfig& cfg, const FoldPlan& plan,
                                   const GmmOptions& gmm = {}) {
    if (static_cast<Index>(plan.assignment.size()) != data.n_obs())
        throw ShapeError("fold plan does not match the panel size");
    ModelSelection out;
    out.variance_components = estimate_variance_components(data, design, w, spec, gmm);
    out.transformed = transform(data, design, w, out.variance_components, spec.effects);
    auto curve = cv_risk_curve(out.transformed.response_star, out.transformed.design_star, plan, cfg);
    out.m_opt = curve.m_opt;
    out.cv_risk_curve = std::move(curve.risk);
    out.warnings = out.variance_components.warnings;
    for (auto& m : curve.warnings) out.warnings.push_back(std::move(m));
    return out;
}

}  // namespace gspboost

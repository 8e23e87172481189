#pragma once

// Cochrane-Orcutt type spatial transformation of (y, Z).
//   random effects: y* = Omega^{-1/2} y,  Z* = Omega^{-1/2} Z
//   fixed effects:  y* = (E_T (x) B) y,   Z* = (E_T (x) B) Z
// After the transform the GLS loss is the plain L2 loss on (y*, Z*).

#include <string>
#include <vector>

#include "kron.hpp"
#include "panel.hpp"

namespace gspboost {

struct TransformProvenance {
    Effects effects = Effects::Random;
    VarianceComponents variance_components;
    std::string operator_fingerprint;
};

struct TransformedData {
    Vector response_star;
    Matrix design_star;
    std::vector<std::string> coefficient_names;
    std::vector<ColumnRole> column_roles;
    Index n_locations = 0;
    Index n_periods = 0;
    TransformProvenance provenance;

    Index n_obs() const { return response_star.size(); }
    Index n_columns() const { return design_star.cols(); }
};

namespace detail {

inline void check_dims(const PanelDataset& data, const AugmentedDesign& design, const ConcentrationOperator& op) {
    if (design.columns().rows() != data.n_obs()) throw ShapeError("design rows do not match panel size");
    if (op.n_locations() != data.n_locations() || op.n_periods() != data.n_periods())
        throw ShapeError("operator built for N=" + std::to_string(op.n_locations()) +
                         ", T=" + std::to_string(op.n_periods()) + " but panel has N=" +
                         std::to_string(data.n_locations()) + ", T=" + std::to_string(data.n_periods()));
}

inline TransformedData apply_operator(const PanelDataset& data, const AugmentedDesign& design,
                                      const ConcentrationOperator& op, Effects effects) {
    TransformedData td;
    td.response_star = op.apply(data.response());
    td.design_star = op.apply(design.columns());
    td.coefficient_names = design.coefficient_names();
    td.column_roles = design.column_roles();
    td.n_locations = data.n_locations();
    td.n_periods = data.n_periods();
    td.provenance = {effects, op.variance_components(), op.fingerprint()};
    if (!td.response_star.allFinite() || !td.design_star.allFinite())
        throw Error(ErrorKind::Estimation, "transformed data contains non-finite values");
    return td;
}

}  // namespace detail

inline TransformedData transform_random(const PanelDataset& data, const AugmentedDesign& design,
                                        const ConcentrationOperator& op) {
    if (op.mode() != ConcentrationMode::RandomOmegaInvHalf)
        throw InvalidParameter("transform_random needs an Omega^{-1/2} operator");
    detail::check_dims(data, design, op);
    return detail::apply_operator(data, design, op, Effects::Random);
}

inline TransformedData transform_fixed(const PanelDataset& data, const AugmentedDesign& design,
                                       const ConcentrationOperator& op) {
    if (op.mode() != ConcentrationMode::FixedEB) throw InvalidParameter("transform_fixed needs an E_T (x) B operator");
    detail::check_dims(data, design, op);
    const auto bad = time_invariant_columns(design.columns(), data.n_locations());
    if (!bad.empty()) {
        std::string list;
        for (Index j : bad) list += (list.empty() ? "" : ", ") + design.coefficient_names()[static_cast<std::size_t>(j)];
        throw FixedEffectsInfeasible("time-invariant columns: " + list);
    }
    return detail::apply_operator(data, design, op, Effects::Fixed);
}

/// Builds the operator matching `effects` and applies it.
inline TransformedData transform(const PanelDataset& data, const AugmentedDesign& design, const SpatialWeights& w,
                                 const VarianceComponents& vc, Effects effects) {
    if (effects == Effects::Random)
        return transform_random(data, design, build_omega_inv_sqrt(vc, w, data.n_periods()));
    return transform_fixed(data, design, build_fixed_transform(vc, w, data.n_periods()));
}

}  // namespace gspboost

#pragma once

// Moment estimators for (rho2, sigma_eps2) and (rho1, sigma_mu2).
//
// Both systems have the form  G [rho, rho^2, sigma^2]' - g = xi(rho, sigma^2)
// and are solved by box-constrained nonlinear least squares on ||xi||^2.
// The eps system weights quadratic forms with Q = E_T (x) I_N and
// 1/(N(T-1)); the mu system with S = (Jbar_T - E_T/(T-1)) (x) I_N and 1/(NT).

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "boost.hpp"
#include "cv.hpp"
#include "error.hpp"
#include "kron.hpp"
#include "panel.hpp"
#include "variance.hpp"

namespace gspboost {

struct ResidualTriple {
    Vector v;         ///< y - Z delta_tilde
    Vector v_bar;     ///< (I_T (x) W) v
    Vector v_barbar;  ///< (I_T (x) W)^2 v
};

inline ResidualTriple make_residual_triple(Vector v, const SpatialWeights& w) {
    ResidualTriple r;
    r.v_bar = spatial_lag(v, w.matrix());
    r.v_barbar = spatial_lag(r.v_bar, w.matrix());
    r.v = std::move(v);
    if (!r.v.allFinite() || !r.v_bar.allFinite() || !r.v_barbar.allFinite())
        throw Error(ErrorKind::Estimation, "initial residuals are not finite");
    return r;
}

struct GmmOptions {
    /// Switch from OLS to boosting for the initial fit when K >= ratio * NT.
    double high_dim_ratio = 0.8;
    BoostConfig boost;
    int folds = 5;
    std::uint64_t seed = 1;
    /// Overrides automatic fold construction for the boosting branch.
    std::optional<FoldPlan> plan;
};

struct InitialFit {
    ResidualTriple residuals;
    Vector delta;
    std::string method;  ///< "ols" or "boosting"
    int m_opt = 0;
    std::vector<std::string> warnings;
};

/// Folds used when no explicit plan is supplied: spatial clusters when
/// centroids are available, otherwise one fold per period.
inline FoldPlan default_fold_plan(const PanelDataset& data, int folds, std::uint64_t seed) {
    if (data.centroids()) return make_spatial_folds(*data.centroids(), folds, seed, data.n_periods());
    return make_time_folds(data.n_locations(), data.n_periods());
}

/// Consistent first-stage fit ignoring the error structure.
inline InitialFit initial_fit(const PanelDataset& data, const AugmentedDesign& design, const SpatialWeights& w,
                              const GmmOptions& opt = {}) {
    const Matrix& z = design.columns();
    const Vector& y = data.response();
    InitialFit out;
    const double nt = static_cast<double>(data.n_obs());
    bool use_boost = static_cast<double>(z.cols()) >= opt.high_dim_ratio * nt;
    if (!use_boost) {
        Eigen::ColPivHouseholderQR<Matrix> qr(z);
        if (qr.rank() < z.cols()) {
            out.warnings.push_back("design is rank deficient (rank " + std::to_string(qr.rank()) + " < " +
                                   std::to_string(z.cols()) + "); using boosting for the initial fit");
            use_boost = true;
        } else {
            out.delta = qr.solve(y);
            out.method = "ols";
        }
    }
    if (use_boost) {
        const FoldPlan plan = opt.plan ? *opt.plan : default_fold_plan(data, opt.folds, opt.seed);
        const auto curve = cv_risk_curve(y, z, plan, opt.boost);
        for (const auto& wmsg : curve.warnings) out.warnings.push_back(wmsg);
        BoostConfig cfg = opt.boost;
        out.m_opt = curve.m_opt;
        if (curve.m_opt == 0) {
            out.delta = Vector::Zero(z.cols());
        } else {
            cfg.m_stop = curve.m_opt;
            out.delta = boost(y, z, cfg).coefficients;
        }
        out.method = "boosting";
    }
    out.residuals = make_residual_triple(y - z * out.delta, w);
    return out;
}

inline ResidualTriple initial_residuals(const PanelDataset& data, const AugmentedDesign& design,
                                        const SpatialWeights& w, const GmmOptions& opt = {}) {
    return initial_fit(data, design, w, opt).residuals;
}

// ---------------------------------------------------------------------------

enum class MomentKind { Eps, Mu };

struct MomentSystem {
    Eigen::Matrix3d G;
    Eigen::Vector3d g;
    MomentKind which = MomentKind::Eps;
    double trace_term = 0.0;

    Eigen::Vector3d residual(double rho, double sigma2) const {
        return G * Eigen::Vector3d(rho, rho * rho, sigma2) - g;
    }
    double objective(double rho, double sigma2) const { return residual(rho, sigma2).squaredNorm(); }
};

namespace detail {

inline MomentSystem build_moment_system(const ResidualTriple& r, const TimeProjector& p, const SpatialWeights& w,
                                        double scale, MomentKind which) {
    const Index nt = p.n_locations() * p.n_periods();
    if (r.v.size() != nt || r.v_bar.size() != nt || r.v_barbar.size() != nt)
        throw ShapeError("residual vectors do not match the projector dimensions");
    if (w.n_locations() != p.n_locations()) throw ShapeError("weights and projector disagree on N");
    const Vector pv = p.apply(r.v);
    const Vector pvb = p.apply(r.v_bar);
    const Vector pvbb = p.apply(r.v_barbar);

    const double vb_v = r.v_bar.dot(pv);
    const double vb_vb = r.v_bar.dot(pvb);
    const double vbb_vb = r.v_barbar.dot(pvb);
    const double vbb_vbb = r.v_barbar.dot(pvbb);
    const double vbb_v = r.v_barbar.dot(pv);
    const double v_v = r.v.dot(pv);

    MomentSystem ms;
    ms.which = which;
    ms.trace_term = w.trace_wtw_over_n();
    ms.G << 2.0 * scale * vb_v, -scale * vb_vb, 1.0,
            2.0 * scale * vbb_vb, -scale * vbb_vbb, ms.trace_term,
            scale * (vbb_v + vb_vb), -scale * vbb_vb, 0.0;
    ms.g << scale * v_v, scale * vb_vb, scale * vb_v;
    return ms;
}

}  // namespace detail

inline MomentSystem build_moment_system_eps(const ResidualTriple& r, const TimeProjector& q, const SpatialWeights& w) {
    if (q.kind() != ProjectorKind::WithinQ) throw InvalidParameter("eps moments need the within projector Q");
    if (q.n_periods() < 2) throw DegeneratePanel("T = 1 leaves no within variation");
    const double scale = 1.0 / static_cast<double>(q.n_locations() * (q.n_periods() - 1));
    return detail::build_moment_system(r, q, w, scale, MomentKind::Eps);
}

inline MomentSystem build_moment_system_mu(const ResidualTriple& r, const TimeProjector& s, const SpatialWeights& w) {
    if (s.kind() != ProjectorKind::SMatrix) throw InvalidParameter("mu moments need the S projector");
    if (s.n_periods() < 2) throw DegeneratePanel("T = 1 leaves no within variation");
    const double scale = 1.0 / static_cast<double>(s.n_locations() * s.n_periods());
    return detail::build_moment_system(r, s, w, scale, MomentKind::Mu);
}

// ---------------------------------------------------------------------------
// Nonlinear least squares

struct NlsOptions {
    double rho_bound = 0.999;
    double gradient_tol = 1e-10;
    int max_iter = 200;
    std::array<double, 5> rho_starts{-0.8, -0.4, 0.0, 0.4, 0.8};
};

struct NlsResult {
    double rho = 0.0;
    double sigma2 = 0.0;
    double objective = 0.0;
    double residual_norm = 0.0;
    bool converged = false;
    bool rho_at_boundary = false;
    bool sigma2_clamped = false;
    int start_index = 0;
    std::vector<double> start_objectives;  ///< objective at each initial point
    std::vector<std::string> warnings;
};

namespace detail {

struct LocalSolve {
    double rho, sigma2, objective;
    bool converged;
};

/// Objective with sigma2 profiled out: for fixed rho the optimal sigma2 is
/// the clamped linear least-squares solution, so f(rho) is piecewise quartic
/// with a continuous derivative. Returns f, f', f'' and the sigma2 used.
struct Profile {
    double f, d1, d2, sigma2;
};

inline Profile profile(const MomentSystem& ms, double rho) {
    const Eigen::Vector3d c = ms.G.col(2);
    const double cc = c.squaredNorm();
    const Eigen::Vector3d a = ms.G.col(0) * rho + ms.G.col(1) * (rho * rho) - ms.g;
    const Eigen::Vector3d a1 = ms.G.col(0) + 2.0 * rho * ms.G.col(1);
    const Eigen::Vector3d a2 = 2.0 * ms.G.col(1);
    const double ca = c.dot(a);
    Profile p{a.squaredNorm(), 2.0 * a.dot(a1), 2.0 * (a1.squaredNorm() + a.dot(a2)), 0.0};
    if (-ca > 0.0) {
        const double ca1 = c.dot(a1);
        p.sigma2 = -ca / cc;
        p.f -= ca * ca / cc;
        p.d1 -= 2.0 * ca * ca1 / cc;
        p.d2 -= 2.0 * (ca1 * ca1 + ca * c.dot(a2)) / cc;
    }
    p.f = std::max(p.f, 0.0);
    return p;
}

/// Safeguarded projected Newton on the profiled objective, started at rho.
/// Converged means the projected derivative fell below the tolerance, or no
/// shorter step along the descent direction lowers f any further.
inline LocalSolve local_solve(const MomentSystem& ms, double rho, const NlsOptions& opt) {
    const double lo = -opt.rho_bound, hi = opt.rho_bound;
    rho = std::clamp(rho, lo, hi);
    Profile p = profile(ms, rho);
    for (int it = 0; it < opt.max_iter; ++it) {
        const bool pinned = (rho <= lo && p.d1 > 0.0) || (rho >= hi && p.d1 < 0.0);
        if (pinned || std::abs(p.d1) < opt.gradient_tol || p.f == 0.0) return {rho, p.sigma2, p.f, true};
        double step = p.d2 > 0.0 ? -p.d1 / p.d2 : (p.d1 > 0.0 ? -0.5 : 0.5);
        bool moved = false;
        for (int h = 0; h < 80; ++h, step *= 0.5) {
            const double rn = std::clamp(rho + step, lo, hi);
            if (rn == rho) break;
            const Profile pn = profile(ms, rn);
            if (pn.f < p.f) {
                rho = rn;
                p = pn;
                moved = true;
                break;
            }
        }
        if (!moved) return {rho, p.sigma2, p.f, true};
    }
    return {rho, p.sigma2, p.f, false};
}

}  // namespace detail

/// argmin over rho in [-0.999, 0.999], sigma2 >= 0 of ||G [rho, rho^2, sigma2]' - g||^2,
/// multi-started over rho with sigma2 profiled out.
inline NlsResult solve_moment_system(const MomentSystem& ms, const NlsOptions& opt = {}) {
    NlsResult best;
    best.objective = std::numeric_limits<double>::infinity();
    bool any_converged = false;
    NlsResult fallback;
    fallback.objective = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < opt.rho_starts.size(); ++s) {
        const double rho0 = opt.rho_starts[s];
        best.start_objectives.push_back(detail::profile(ms, rho0).f);
        const auto local = detail::local_solve(ms, rho0, opt);
        auto& target = local.converged ? best : fallback;
        if (local.objective < target.objective) {
            target.rho = local.rho;
            target.sigma2 = local.sigma2;
            target.objective = local.objective;
            target.start_index = static_cast<int>(s);
        }
        any_converged = any_converged || local.converged;
    }
    if (!any_converged)
        throw EstimationFailure("nonlinear least squares did not converge from any start", fallback.rho,
                                fallback.sigma2, std::sqrt(fallback.objective));
    best.converged = true;
    best.residual_norm = std::sqrt(best.objective);
    best.rho_at_boundary = std::abs(best.rho) >= opt.rho_bound - 1e-9;
    best.sigma2_clamped = best.sigma2 <= 0.0;
    if (best.rho_at_boundary) best.warnings.push_back("spatial parameter estimate sits on the |rho| = 0.999 boundary");
    if (best.sigma2_clamped) best.warnings.push_back("variance estimate clamped at zero");
    return best;
}

/// sigma2 for a fixed rho: linear least squares in sigma2, clamped at zero.
inline NlsResult solve_moment_system_fixed_rho(const MomentSystem& ms, double rho) {
    const Eigen::Vector3d target = ms.g - ms.G.col(0) * rho - ms.G.col(1) * rho * rho;
    const Eigen::Vector3d c = ms.G.col(2);
    NlsResult res;
    res.rho = rho;
    res.sigma2 = std::max(0.0, c.dot(target) / c.squaredNorm());
    res.objective = ms.objective(rho, res.sigma2);
    res.residual_norm = std::sqrt(res.objective);
    res.converged = true;
    res.sigma2_clamped = res.sigma2 <= 0.0;
    res.start_objectives.push_back(res.objective);
    if (res.sigma2_clamped) res.warnings.push_back("variance estimate clamped at zero");
    return res;
}

/// Initial fit -> moment systems -> NLS, with the family restrictions:
/// ANS fixes rho1 = 0, KKP sets rho1 = rho2, both then solve sigma_mu2 alone;
/// fixed effects skip the mu system.
inline VarianceComponents estimate_variance_components(const PanelDataset& data, const AugmentedDesign& design,
                                                       const SpatialWeights& w, const ModelSpec& spec,
                                                       const GmmOptions& opt = {}) {
    if (data.n_periods() < 2) throw DegeneratePanel("T = 1 leaves no within variation");
    if (w.n_locations() != data.n_locations()) throw ShapeError("weights and panel disagree on N");
    auto first = initial_fit(data, design, w, opt);

    VarianceComponents vc;
    vc.family = spec.family;
    vc.effects = spec.effects;
    vc.initial_estimator = first.method;
    vc.warnings = first.warnings;

    const TimeProjector q(ProjectorKind::WithinQ, data.n_locations(), data.n_periods());
    const auto eps = solve_moment_system(build_moment_system_eps(first.residuals, q, w));
    if (!(eps.sigma2 > 0.0))
        throw EstimationFailure("sigma_eps2 estimate is not positive", eps.rho, eps.sigma2, eps.residual_norm);
    vc.rho2 = eps.rho;
    vc.sigma_eps2 = eps.sigma2;
    vc.rho2_at_boundary = eps.rho_at_boundary;
    vc.eps_residual_norm = eps.residual_norm;
    for (const auto& m : eps.warnings) vc.warnings.push_back("eps system: " + m);

    if (spec.effects == Effects::Fixed) return vc;

    const TimeProjector s(ProjectorKind::SMatrix, data.n_locations(), data.n_periods());
    const auto ms_mu = build_moment_system_mu(first.residuals, s, w);
    NlsResult mu;
    switch (spec.family) {
        case Family::ANS: mu = solve_moment_system_fixed_rho(ms_mu, 0.0); break;
        case Family::KKP: mu = solve_moment_system_fixed_rho(ms_mu, vc.rho2); break;
        case Family::GSPECM: mu = solve_moment_system(ms_mu); break;
    }
    vc.rho1 = spec.family == Family::ANS ? 0.0 : (spec.family == Family::KKP ? vc.rho2 : mu.rho);
    vc.sigma_mu2 = mu.sigma2;
    vc.rho1_at_boundary = spec.family == Family::GSPECM ? mu.rho_at_boundary : vc.rho2_at_boundary;
    vc.sigma_mu2_clamped = mu.sigma2_clamped;
    vc.mu_residual_norm = mu.residual_norm;
    for (const auto& m : mu.warnings) vc.warnings.push_back("mu system: " + m);
    return vc;
}

}  // namespace gspboost

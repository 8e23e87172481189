#pragma once

// Component-wise L2-boosting with univariate linear base-learners,
// attributable-risk deselection, and the feasible GLS baseline.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "transform.hpp"

namespace gspboost {

struct BoostConfig {
    double learning_rate = 0.1;
    int m_stop = 1000;
    bool track_risk = true;

    void validate() const {
        if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw InvalidParameter("learning rate must lie in (0, 1]");
        if (m_stop < 1) throw InvalidParameter("m_stop must be at least 1");
    }
};

struct BoostFit {
    Vector coefficients;               ///< length K, transformed scale
    std::vector<Index> selection_path; ///< j* per iteration
    std::vector<double> step_path;     ///< s * delta_hat_{j*} per iteration
    std::vector<double> risk_path;     ///< r[0..m_used], empty when risk tracking is off
    int m_used = 0;
    double offset = 0.0;
    std::vector<std::string> warnings;

    /// Replays selection/step paths up to iteration m into a coefficient vector.
    Vector coefficients_at(int m) const {
        Vector c = Vector::Zero(coefficients.size());
        for (int i = 0; i < m && i < static_cast<int>(selection_path.size()); ++i)
            c[selection_path[static_cast<std::size_t>(i)]] += step_path[static_cast<std::size_t>(i)];
        return c;
    }
};

/// Called after every iteration with (m, j*, s * delta_hat).
using BoostObserver = std::function<void(int, Index, double)>;

/// Core boosting loop on an arbitrary (y, Z) pair. Empirical risk is
/// ||y - eta||^2 / n, tracked through the exact per-step decrement
/// (2s - s^2) (z_j'd)^2 / (z_j'z_j) / n, which is never negative.
inline BoostFit boost(const Vector& y, const Matrix& z, const BoostConfig& cfg,
                      const std::optional<std::vector<Index>>& active_columns = std::nullopt,
                      const BoostObserver& observer = {}) {
    cfg.validate();
    const Index n = z.rows();
    const Index k = z.cols();
    if (y.size() != n) throw ShapeError("response length does not match design rows");
    if (n == 0) throw ShapeError("no observations");

    BoostFit fit;
    fit.coefficients = Vector::Zero(k);

    std::vector<Index> candidates;
    if (active_columns) {
        candidates = *active_columns;
        std::sort(candidates.begin(), candidates.end());
        candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
        for (Index j : candidates)
            if (j < 0 || j >= k) throw InvalidParameter("active column index out of range");
    } else {
        candidates.resize(static_cast<std::size_t>(k));
        for (Index j = 0; j < k; ++j) candidates[static_cast<std::size_t>(j)] = j;
    }
    if (candidates.empty()) throw NoLearnerError("no active columns");

    std::vector<Index> cols;
    cols.reserve(candidates.size());
    for (Index j : candidates) {
        const double nrm = z.col(j).squaredNorm();
        if (nrm > 0.0 && std::isfinite(nrm)) {
            cols.push_back(j);
        } else {
            fit.warnings.push_back("column " + std::to_string(j) + " has zero norm and is never selectable");
        }
    }
    if (cols.empty()) throw NoLearnerError("every active column has zero norm");

    const bool all = static_cast<Index>(cols.size()) == k;
    Matrix sub;
    if (!all) {
        sub.resize(n, static_cast<Index>(cols.size()));
        for (std::size_t c = 0; c < cols.size(); ++c) sub.col(static_cast<Index>(c)) = z.col(cols[c]);
    }
    const Matrix& zz = all ? z : sub;
    const Vector norms = zz.colwise().squaredNorm().transpose();

    Vector d = y;  // offset eta^[0] = 0
    const double inv_n = 1.0 / static_cast<double>(n);
    const double shrink = cfg.learning_rate * (2.0 - cfg.learning_rate);
    double risk = d.squaredNorm() * inv_n;
    if (cfg.track_risk) {
        fit.risk_path.reserve(static_cast<std::size_t>(cfg.m_stop) + 1);
        fit.risk_path.push_back(risk);
    }
    fit.selection_path.reserve(static_cast<std::size_t>(cfg.m_stop));
    fit.step_path.reserve(static_cast<std::size_t>(cfg.m_stop));

    Vector cross(zz.cols());
    for (int m = 1; m <= cfg.m_stop; ++m) {
        cross.noalias() = zz.transpose() * d;
        // argmin RSS_j = ||d||^2 - (z_j'd)^2 / z_j'z_j, ties to the lowest index
        Index best = 0;
        double best_gain = -1.0;
        for (Index c = 0; c < zz.cols(); ++c) {
            const double gain = cross[c] * cross[c] / norms[c];
            if (gain > best_gain) {
                best_gain = gain;
                best = c;
            }
        }
        const double step = cfg.learning_rate * cross[best] / norms[best];
        d.noalias() -= step * zz.col(best);
        const Index j = cols[static_cast<std::size_t>(best)];
        fit.coefficients[j] += step;
        fit.selection_path.push_back(j);
        fit.step_path.push_back(step);
        if (cfg.track_risk) {
            risk = std::max(0.0, risk - shrink * best_gain * inv_n);
            fit.risk_path.push_back(risk);
        }
        if (observer) observer(m, j, step);
    }
    fit.m_used = cfg.m_stop;
    return fit;
}

inline BoostFit boost(const TransformedData& td, const BoostConfig& cfg,
                      const std::optional<std::vector<Index>>& active_columns = std::nullopt) {
    return boost(td.response_star, td.design_star, cfg, active_columns);
}

/// Fit truncated at iteration m (m <= fit.m_used), without rerunning.
inline BoostFit truncate(const BoostFit& fit, int m) {
    if (m < 0 || m > fit.m_used) throw InvalidParameter("truncation point outside the fitted path");
    BoostFit out;
    out.selection_path.assign(fit.selection_path.begin(), fit.selection_path.begin() + m);
    out.step_path.assign(fit.step_path.begin(), fit.step_path.begin() + m);
    if (!fit.risk_path.empty()) out.risk_path.assign(fit.risk_path.begin(), fit.risk_path.begin() + m + 1);
    out.m_used = m;
    out.offset = fit.offset;
    out.warnings = fit.warnings;
    out.coefficients = fit.coefficients_at(m);
    return out;
}

// ---------------------------------------------------------------------------
// Deselection

struct DeselectionResult {
    Vector attributable;                ///< R_j per column
    std::vector<Index> retained;        ///< column indices, ascending
    std::vector<std::string> retained_names;
    std::optional<BoostFit> refit;      ///< empty when nothing was retained
    double tau = 0.0;
    double total_reduction = 0.0;
    std::vector<std::string> warnings;

    /// Coefficients of the refit (zeros for the empty model).
    Vector coefficients(Index k) const { return refit ? refit->coefficients : Vector::Zero(k); }
};

/// R_j = sum over iterations m <= m_opt with j*^[m] = j of (r[m-1] - r[m]).
inline Vector attributable_risk(const BoostFit& fit, Index n_columns) {
    if (fit.risk_path.size() != static_cast<std::size_t>(fit.m_used) + 1)
        throw InvalidParameter("deselection needs a fit with a tracked risk path");
    Vector r = Vector::Zero(n_columns);
    for (int m = 1; m <= fit.m_used; ++m)
        r[fit.selection_path[static_cast<std::size_t>(m - 1)]] +=
            fit.risk_path[static_cast<std::size_t>(m - 1)] - fit.risk_path[static_cast<std::size_t>(m)];
    return r;
}

/// Drops columns with R_j < tau (r[0] - r[m_opt]) and reruns boosting for
/// m_opt iterations on the survivors. `fit_at_m_opt` must be stopped at m_opt.
inline DeselectionResult deselect(const Vector& y, const Matrix& z, const std::vector<std::string>& names,
                                  const BoostConfig& cfg, const BoostFit& fit_at_m_opt, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw InvalidParameter("tau must lie in (0, 1)");
    DeselectionResult res;
    res.tau = tau;
    res.attributable = attributable_risk(fit_at_m_opt, z.cols());
    const int m_opt = fit_at_m_opt.m_used;
    res.total_reduction = fit_at_m_opt.risk_path.front() - fit_at_m_opt.risk_path.back();
    if (!(res.total_reduction > 0.0) || m_opt == 0) {
        res.warnings.emplace_back("total risk reduction is zero; deselection leaves an empty model");
        return res;
    }
    const double cut = tau * res.total_reduction;
    for (Index j = 0; j < z.cols(); ++j) {
        if (res.attributable[j] >= cut && res.attributable[j] > 0.0) {
            res.retained.push_back(j);
            res.retained_names.push_back(names[static_cast<std::size_t>(j)]);
        }
    }
    if (res.retained.empty()) {
        res.warnings.emplace_back("every column fell below the deselection threshold");
        return res;
    }
    BoostConfig refit_cfg = cfg;
    refit_cfg.m_stop = m_opt;
    refit_cfg.track_risk = true;
    res.refit = boost(y, z, refit_cfg, res.retained);
    return res;
}

inline DeselectionResult deselect(const TransformedData& td, const BoostConfig& cfg, const BoostFit& fit_at_m_opt,
                                  double tau) {
    return deselect(td.response_star, td.design_star, td.coefficient_names, cfg, fit_at_m_opt, tau);
}

// ---------------------------------------------------------------------------
// Feasible GLS: OLS on the transformed data.

inline Vector fgls_baseline(const Vector& y, const Matrix& z) {
    if (z.cols() >= z.rows())
        throw RankError("K = " + std::to_string(z.cols()) + " >= NT = " + std::to_string(z.rows()) +
                        "; normal equations are singular");
    Eigen::ColPivHouseholderQR<Matrix> qr(z);
    if (qr.rank() < z.cols())
        throw RankError("transformed design has rank " + std::to_string(qr.rank()) + " < K = " +
                        std::to_string(z.cols()));
    return qr.solve(y);
}

inline Vector fgls_baseline(const TransformedData& td) { return fgls_baseline(td.response_star, td.design_star); }

}  // namespace gspboost

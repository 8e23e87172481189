#pragma once

// Spatial panel data containers, spatial weight matrices and the augmented
// design Z = [1, X, (I_T (x) W) X].
//
// Every NT-long vector in this library is stacked time-major: entry i + N*t
// holds location i in period t, so a vector can be viewed as an N x T
// column-major matrix whose column t is the cross-section of period t.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"

namespace gspboost {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// N x T view of a time-major NT vector.
inline Eigen::Map<const Matrix> as_panel(const Vector& v, Index n) {
    return {v.data(), n, v.size() / n};
}
inline Eigen::Map<Matrix> as_panel(Vector& v, Index n) { return {v.data(), n, v.size() / n}; }

inline std::vector<std::string> default_labels(Index n, const std::string& prefix) {
    std::vector<std::string> out;
    out.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i + 1));
    return out;
}

// ---------------------------------------------------------------------------
// SpatialWeights

class SpatialWeights {
public:
    /// Validates: square, finite, non-negative, zero diagonal. When
    /// `row_normalized` is claimed, rows with neighbors must sum to one.
    SpatialWeights(Matrix weights, bool row_normalized, std::vector<std::string> location_ids = {})
        : weights_(std::move(weights)), row_normalized_(row_normalized), ids_(std::move(location_ids)) {
        if (weights_.rows() != weights_.cols() || weights_.rows() == 0)
            throw ShapeError("weight matrix must be square and non-empty");
        if (ids_.empty()) ids_ = default_labels(weights_.rows(), "loc");
        if (static_cast<Index>(ids_.size()) != weights_.rows())
            throw ShapeError("location id count does not match weight matrix size");
        if (!weights_.allFinite()) throw InvalidParameter("weight matrix has non-finite entries");
        if ((weights_.array() < 0.0).any()) throw InvalidParameter("weight matrix has negative entries");
        for (Index i = 0; i < weights_.rows(); ++i)
            if (weights_(i, i) != 0.0)
                throw InvalidParameter("weight matrix has a self-loop at location '" + ids_[i] + "'");
        if (row_normalized_) {
            for (Index i = 0; i < weights_.rows(); ++i) {
                const double s = weights_.row(i).sum();
                if (s != 0.0 && std::abs(s - 1.0) > 1e-12)
                    throw InvalidParameter("row '" + ids_[i] + "' does not sum to one");
            }
        }
    }

    Index n_locations() const noexcept { return weights_.rows(); }
    const Matrix& matrix() const noexcept { return weights_; }
    bool row_normalized() const noexcept { return row_normalized_; }
    const std::vector<std::string>& location_ids() const noexcept { return ids_; }

    /// tr(W'W) / N, the constant appearing in both moment systems.
    double trace_wtw_over_n() const { return weights_.squaredNorm() / static_cast<double>(n_locations()); }

private:
    Matrix weights_;
    bool row_normalized_;
    std::vector<std::string> ids_;
};

/// Scales every row to sum to one. Throws IsolatedUnit for an all-zero row.
inline SpatialWeights row_normalize(const SpatialWeights& w) {
    Matrix m = w.matrix();
    for (Index i = 0; i < m.rows(); ++i) {
        const double s = m.row(i).sum();
        if (s <= 0.0) throw IsolatedUnit(w.location_ids()[i]);
        m.row(i) /= s;
    }
    return SpatialWeights(std::move(m), true, w.location_ids());
}

/// k-nearest-neighbour weights on planar centroids, row-normalized.
/// Distance ties are broken toward the lower location index.
inline SpatialWeights build_knn_weights(const Eigen::MatrixX2d& centroids, Index k,
                                        std::vector<std::string> location_ids = {}) {
    const Index n = centroids.rows();
    if (k < 1 || k >= n) throw InvalidParameter("knn k must satisfy 1 <= k < N");
    if (!centroids.allFinite()) throw InvalidParameter("centroids must be finite");

    Matrix w = Matrix::Zero(n, n);
    std::vector<std::pair<double, Index>> dist;
    dist.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        dist.clear();
        for (Index j = 0; j < n; ++j) {
            if (j == i) continue;
            const double d2 = (centroids.row(i) - centroids.row(j)).squaredNorm();
            if (d2 == 0.0)
                throw DegenerateGeometry("locations " + std::to_string(i + 1) + " and " + std::to_string(j + 1) +
                                         " share a centroid");
            dist.emplace_back(d2, j);
        }
        std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
        for (Index r = 0; r < k; ++r) w(i, dist[static_cast<std::size_t>(r)].second) = 1.0;
    }
    return row_normalize(SpatialWeights(std::move(w), false, std::move(location_ids)));
}

// ---------------------------------------------------------------------------
// PanelDataset

class PanelDataset {
public:
    PanelDataset(Index n_locations, Index n_periods, Vector response, Matrix regressors,
                 std::vector<std::string> regressor_names, std::vector<std::string> location_ids = {},
                 std::vector<std::string> period_ids = {},
                 std::optional<Eigen::MatrixX2d> centroids = std::nullopt)
        : n_(n_locations), t_(n_periods), y_(std::move(response)), x_(std::move(regressors)),
          names_(std::move(regressor_names)), locations_(std::move(location_ids)),
          periods_(std::move(period_ids)), centroids_(std::move(centroids)) {
        if (n_ < 1 || t_ < 1) throw ShapeError("panel needs at least one location and one period");
        if (y_.size() != n_ * t_) throw ShapeError("response length must equal N*T");
        if (x_.rows() != n_ * t_) throw ShapeError("regressor rows must equal N*T");
        if (names_.empty()) names_ = default_labels(x_.cols(), "x");
        if (static_cast<Index>(names_.size()) != x_.cols()) throw ShapeError("regressor name count mismatch");
        if (locations_.empty()) locations_ = default_labels(n_, "loc");
        if (periods_.empty()) periods_ = default_labels(t_, "t");
        if (static_cast<Index>(locations_.size()) != n_ || static_cast<Index>(periods_.size()) != t_)
            throw ShapeError("location/period label count mismatch");
        if (!x_.allFinite()) throw InvalidParameter("regressors contain non-finite entries");
        if (!y_.allFinite()) throw InvalidParameter("response contains non-finite entries");
        if (centroids_ && centroids_->rows() != n_) throw ShapeError("centroid count must equal N");
    }

    Index n_locations() const noexcept { return n_; }
    Index n_periods() const noexcept { return t_; }
    Index n_obs() const noexcept { return n_ * t_; }
    const Vector& response() const noexcept { return y_; }
    const Matrix& regressors() const noexcept { return x_; }
    const std::vector<std::string>& regressor_names() const noexcept { return names_; }
    const std::vector<std::string>& location_ids() const noexcept { return locations_; }
    const std::vector<std::string>& period_ids() const noexcept { return periods_; }
    const std::optional<Eigen::MatrixX2d>& centroids() const noexcept { return centroids_; }

    static Index row(Index location, Index period, Index n) { return location + n * period; }

private:
    Index n_;
    Index t_;
    Vector y_;
    Matrix x_;
    std::vector<std::string> names_;
    std::vector<std::string> locations_;
    std::vector<std::string> periods_;
    std::optional<Eigen::MatrixX2d> centroids_;
};

/// Centers and scales every raw regressor column to unit standard deviation.
/// Constant columns are only centered.
inline PanelDataset standardize_regressors(const PanelDataset& data) {
    Matrix x = data.regressors();
    for (Index j = 0; j < x.cols(); ++j) {
        const double mean = x.col(j).mean();
        x.col(j).array() -= mean;
        const double sd = std::sqrt(x.col(j).squaredNorm() / static_cast<double>(x.rows()));
        if (sd > 0.0) x.col(j) /= sd;
    }
    return PanelDataset(data.n_locations(), data.n_periods(), data.response(), std::move(x), data.regressor_names(),
                        data.location_ids(), data.period_ids(), data.centroids());
}

// ---------------------------------------------------------------------------
// ModelSpec

enum class Family { ANS, KKP, GSPECM };
enum class Effects { Random, Fixed };

struct ModelSpec {
    Family family = Family::GSPECM;
    Effects effects = Effects::Random;
    bool include_spatial_lags = true;
    bool include_intercept = true;
};

inline const char* to_string(Family f) {
    switch (f) {
        case Family::ANS: return "ans";
        case Family::KKP: return "kkp";
        case Family::GSPECM: return "gspecm";
    }
    return "?";
}
inline const char* to_string(Effects e) { return e == Effects::Random ? "random" : "fixed"; }

inline Family parse_family(const std::string& s) {
    if (s == "ans" || s == "ANS") return Family::ANS;
    if (s == "kkp" || s == "KKP") return Family::KKP;
    if (s == "gspecm" || s == "GSPECM") return Family::GSPECM;
    throw InvalidParameter("unknown model family '" + s + "'");
}
inline Effects parse_effects(const std::string& s) {
    if (s == "random") return Effects::Random;
    if (s == "fixed") return Effects::Fixed;
    throw InvalidParameter("unknown effects mode '" + s + "'");
}

/// Columns (of an NT x K matrix) that do not vary over time at any location.
inline std::vector<Index> time_invariant_columns(const Matrix& m, Index n, double tol = 1e-12) {
    std::vector<Index> out;
    const Index t = m.rows() / n;
    for (Index j = 0; j < m.cols(); ++j) {
        Eigen::Map<const Matrix> block(m.col(j).data(), n, t);
        const Vector mean = block.rowwise().mean();
        const double scale = std::max(1.0, block.cwiseAbs().maxCoeff());
        if (((block.colwise() - mean).cwiseAbs().maxCoeff()) <= tol * scale) out.push_back(j);
    }
    return out;
}

// ---------------------------------------------------------------------------
// AugmentedDesign

enum class ColumnRole { Intercept, Regressor, SpatialLag };

inline const char* to_string(ColumnRole r) {
    switch (r) {
        case ColumnRole::Intercept: return "intercept";
        case ColumnRole::Regressor: return "regressor";
        case ColumnRole::SpatialLag: return "spatial_lag";
    }
    return "?";
}

inline constexpr const char* kInterceptName = "(Intercept)";
inline std::string lag_name(const std::string& x) { return "W_" + x; }

class AugmentedDesign {
public:
    AugmentedDesign(Matrix columns, std::vector<ColumnRole> roles, std::vector<std::string> names)
        : z_(std::move(columns)), roles_(std::move(roles)), names_(std::move(names)) {
        if (static_cast<Index>(roles_.size()) != z_.cols() || static_cast<Index>(names_.size()) != z_.cols())
            throw ShapeError("design column metadata mismatch");
    }

    const Matrix& columns() const noexcept { return z_; }
    Index n_columns() const noexcept { return z_.cols(); }
    const std::vector<ColumnRole>& column_roles() const noexcept { return roles_; }
    const std::vector<std::string>& coefficient_names() const noexcept { return names_; }

    std::optional<Index> find(const std::string& name) const {
        auto it = std::find(names_.begin(), names_.end(), name);
        if (it == names_.end()) return std::nullopt;
        return static_cast<Index>(it - names_.begin());
    }

private:
    Matrix z_;
    std::vector<ColumnRole> roles_;
    std::vector<std::string> names_;
};

/// (I_T (x) W) applied to every column of an NT x P matrix, period by period.
inline Matrix spatial_lag(const Matrix& x, const Matrix& w) {
    const Index n = w.rows();
    if (x.rows() % n != 0) throw ShapeError("row count is not a multiple of N");
    const Index blocks = (x.rows() / n) * x.cols();
    Matrix out(x.rows(), x.cols());
    Eigen::Map<const Matrix> in_view(x.data(), n, blocks);
    Eigen::Map<Matrix> out_view(out.data(), n, blocks);
    out_view.noalias() = w * in_view;
    return out;
}

inline Vector spatial_lag(const Vector& v, const Matrix& w) {
    const Index n = w.rows();
    if (v.size() % n != 0) throw ShapeError("vector length is not a multiple of N");
    Vector out(v.size());
    Eigen::Map<Matrix>(out.data(), n, v.size() / n).noalias() =
        w * Eigen::Map<const Matrix>(v.data(), n, v.size() / n);
    return out;
}

inline AugmentedDesign augment_design(const PanelDataset& data, const SpatialWeights& w, const ModelSpec& spec) {
    if (w.n_locations() != data.n_locations())
        throw ShapeError("weight matrix has " + std::to_string(w.n_locations()) + " locations, panel has " +
                         std::to_string(data.n_locations()));
    const Matrix& x = data.regressors();
    const auto& xnames = data.regressor_names();

    if (spec.effects == Effects::Fixed) {
        if (spec.include_intercept)
            throw FixedEffectsInfeasible("the intercept is time-invariant and is absorbed by the within transform");
        const auto bad = time_invariant_columns(x, data.n_locations());
        if (!bad.empty()) {
            std::string list;
            for (Index j : bad) list += (list.empty() ? "" : ", ") + xnames[static_cast<std::size_t>(j)];
            throw FixedEffectsInfeasible("time-invariant columns: " + list);
        }
    }

    const Index p = x.cols();
    const Index k = (spec.include_intercept ? 1 : 0) + p + (spec.include_spatial_lags ? p : 0);
    Matrix z(data.n_obs(), k);
    std::vector<ColumnRole> roles;
    std::vector<std::string> names;
    roles.reserve(static_cast<std::size_t>(k));
    names.reserve(static_cast<std::size_t>(k));

    Index c = 0;
    if (spec.include_intercept) {
        z.col(c++).setOnes();
        roles.push_back(ColumnRole::Intercept);
        names.emplace_back(kInterceptName);
    }
    z.middleCols(c, p) = x;
    c += p;
    for (const auto& nm : xnames) {
        roles.push_back(ColumnRole::Regressor);
        names.push_back(nm);
    }
    if (spec.include_spatial_lags) {
        z.middleCols(c, p) = spatial_lag(x, w.matrix());
        for (const auto& nm : xnames) {
            roles.push_back(ColumnRole::SpatialLag);
            names.push_back(lag_name(nm));
        }
    }
    return AugmentedDesign(std::move(z), std::move(roles), std::move(names));
}

}  // namespace gspboost

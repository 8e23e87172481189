#pragma once

// Fold construction for spatial (k-means on centroids) and leave-time-out
// cross-validation, and the fold-averaged held-out risk curve of boosting.

#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "boost.hpp"
#include "error.hpp"
#include "panel.hpp"

namespace gspboost {

/// splitmix64 finalizer, used to derive independent seeds from keys.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t stream_key(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return mix_seed(mix_seed(mix_seed(seed) ^ a) ^ b);
}

enum class FoldKind { SpatialClusters, LeaveTimeOut };

struct FoldPlan {
    FoldKind kind = FoldKind::SpatialClusters;
    int n_folds = 0;
    std::vector<int> assignment;  ///< per observation (time-major), values in [0, n_folds)

    std::vector<Index> rows_in(int fold) const {
        std::vector<Index> out;
        for (std::size_t i = 0; i < assignment.size(); ++i)
            if (assignment[i] == fold) out.push_back(static_cast<Index>(i));
        return out;
    }
    std::vector<Index> rows_outside(int fold) const {
        std::vector<Index> out;
        for (std::size_t i = 0; i < assignment.size(); ++i)
            if (assignment[i] != fold) out.push_back(static_cast<Index>(i));
        return out;
    }
};

struct KMeansResult {
    std::vector<int> labels;
    double within_ss = std::numeric_limits<double>::infinity();
};

/// Lloyd's algorithm with k-means++ seeding; best of `restarts` runs.
/// Runs that end with an empty cluster are discarded.
inline KMeansResult kmeans(const Eigen::MatrixX2d& pts, int k, std::uint64_t seed, int restarts = 50,
                           int max_iter = 200) {
    const Index n = pts.rows();
    if (k < 1 || k > n) throw InvalidParameter("k-means needs 1 <= k <= N");
    KMeansResult best;
    int failures = 0;
    for (int r = 0; r < restarts; ++r) {
        std::mt19937_64 rng(stream_key(seed, 0x6b6d65616e73ULL, static_cast<std::uint64_t>(r)));
        Eigen::MatrixX2d centers(k, 2);
        std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
        std::uniform_int_distribution<Index> first(0, n - 1);
        centers.row(0) = pts.row(first(rng));
        for (int c = 1; c < k; ++c) {
            double total = 0.0;
            for (Index i = 0; i < n; ++i) {
                d2[static_cast<std::size_t>(i)] =
                    std::min(d2[static_cast<std::size_t>(i)], (pts.row(i) - centers.row(c - 1)).squaredNorm());
                total += d2[static_cast<std::size_t>(i)];
            }
            Index pick = 0;
            if (total > 0.0) {
                std::discrete_distribution<Index> dd(d2.begin(), d2.end());
                pick = dd(rng);
            }
            centers.row(c) = pts.row(pick);
        }

        std::vector<int> labels(static_cast<std::size_t>(n), -1);
        bool empty_cluster = false;
        for (int it = 0; it < max_iter; ++it) {
            bool changed = false;
            for (Index i = 0; i < n; ++i) {
                int arg = 0;
                double bd = std::numeric_limits<double>::infinity();
                for (int c = 0; c < k; ++c) {
                    const double dd = (pts.row(i) - centers.row(c)).squaredNorm();
                    if (dd < bd) {
                        bd = dd;
                        arg = c;
                    }
                }
                if (labels[static_cast<std::size_t>(i)] != arg) {
                    labels[static_cast<std::size_t>(i)] = arg;
                    changed = true;
                }
            }
            Eigen::MatrixX2d sums = Eigen::MatrixX2d::Zero(k, 2);
            std::vector<int> counts(static_cast<std::size_t>(k), 0);
            for (Index i = 0; i < n; ++i) {
                sums.row(labels[static_cast<std::size_t>(i)]) += pts.row(i);
                ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
            }
            empty_cluster = false;
            for (int c = 0; c < k; ++c) {
                if (counts[static_cast<std::size_t>(c)] == 0) {
                    empty_cluster = true;
                    continue;
                }
                centers.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
            }
            if (!changed || empty_cluster) break;
        }
        if (empty_cluster) {
            ++failures;
            continue;
        }
        double wss = 0.0;
        for (Index i = 0; i < n; ++i) wss += (pts.row(i) - centers.row(labels[static_cast<std::size_t>(i)])).squaredNorm();
        if (wss < best.within_ss) {
            best.within_ss = wss;
            best.labels = labels;
        }
    }
    if (best.labels.empty())
        throw Error(ErrorKind::Estimation, "k-means produced an empty cluster in all " + std::to_string(failures) +
                                               " restarts");
    // Relabel clusters by first appearance so fold ids do not depend on seeding order.
    std::vector<int> remap(static_cast<std::size_t>(k), -1);
    int next = 0;
    for (auto& l : best.labels) {
        if (remap[static_cast<std::size_t>(l)] < 0) remap[static_cast<std::size_t>(l)] = next++;
        l = remap[static_cast<std::size_t>(l)];
    }
    return best;
}

/// Location-level folds from k-means on centroids, extended to all periods.
inline FoldPlan make_spatial_folds(const Eigen::MatrixX2d& centroids, int k, std::uint64_t seed, Index n_periods) {
    const Index n = centroids.rows();
    if (k < 2 || k > n) throw InvalidParameter("spatial CV needs 2 <= folds <= N");
    if (n_periods < 1) throw ShapeError("T must be positive");
    const auto km = kmeans(centroids, k, seed);
    FoldPlan plan;
    plan.kind = FoldKind::SpatialClusters;
    plan.n_folds = k;
    plan.assignment.resize(static_cast<std::size_t>(n * n_periods));
    for (Index t = 0; t < n_periods; ++t)
        for (Index i = 0; i < n; ++i)
            plan.assignment[static_cast<std::size_t>(i + n * t)] = km.labels[static_cast<std::size_t>(i)];
    return plan;
}

/// One fold per period.
inline FoldPlan make_time_folds(Index n_locations, Index n_periods) {
    if (n_periods < 2) throw InvalidParameter("leave-time-out CV needs T >= 2");
    FoldPlan plan;
    plan.kind = FoldKind::LeaveTimeOut;
    plan.n_folds = static_cast<int>(n_periods);
    plan.assignment.resize(static_cast<std::size_t>(n_locations * n_periods));
    for (Index t = 0; t < n_periods; ++t)
        for (Index i = 0; i < n_locations; ++i) plan.assignment[static_cast<std::size_t>(i + n_locations * t)] = static_cast<int>(t);
    return plan;
}

struct CvCurve {
    std::vector<double> risk;                     ///< fold-averaged held-out risk, m = 0..m_stop
    std::vector<std::vector<double>> fold_risk;   ///< per fold
    int m_opt = 0;
    std::vector<std::string> warnings;
};

/// argmin of a curve, lowest index on ties.
inline int argmin_curve(const std::vector<double>& curve) {
    int best = 0;
    for (std::size_t m = 1; m < curve.size(); ++m)
        if (curve[m] < curve[static_cast<std::size_t>(best)]) best = static_cast<int>(m);
    return best;
}

inline Matrix take_rows(const Matrix& m, const std::vector<Index>& rows) {
    Matrix out(static_cast<Index>(rows.size()), m.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = m.row(rows[r]);
    return out;
}
inline Vector take_rows(const Vector& v, const std::vector<Index>& rows) {
    Vector out(static_cast<Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) out[static_cast<Index>(r)] = v[rows[r]];
    return out;
}

/// Boosts on the training rows of every fold for cfg.m_stop iterations and
/// records the held-out mean squared error after each iteration.
inline CvCurve cv_risk_curve(const Vector& y, const Matrix& z, const FoldPlan& plan, const BoostConfig& cfg,
                             const std::optional<std::vector<Index>>& active_columns = std::nullopt) {
    cfg.validate();
    if (static_cast<Index>(plan.assignment.size()) != y.size()) throw ShapeError("fold plan does not cover the data");
    CvCurve out;
    out.risk.assign(static_cast<std::size_t>(cfg.m_stop) + 1, 0.0);
    for (int f = 0; f < plan.n_folds; ++f) {
        const auto test_rows = plan.rows_in(f);
        const auto train_rows = plan.rows_outside(f);
        if (test_rows.empty() || train_rows.empty())
            throw InvalidParameter("fold " + std::to_string(f) + " has no test or no training rows");
        const Matrix z_train = take_rows(z, train_rows);
        const Vector y_train = take_rows(y, train_rows);
        const Matrix z_test = take_rows(z, test_rows);
        Vector resid = take_rows(y, test_rows);
        const double inv = 1.0 / static_cast<double>(test_rows.size());

        std::vector<double> curve;
        curve.reserve(static_cast<std::size_t>(cfg.m_stop) + 1);
        curve.push_back(resid.squaredNorm() * inv);
        BoostConfig fold_cfg = cfg;
        fold_cfg.track_risk = false;
        auto fit = boost(y_train, z_train, fold_cfg, active_columns, [&](int, Index j, double step) {
            resid.noalias() -= step * z_test.col(j);
            curve.push_back(resid.squaredNorm() * inv);
        });
        for (const auto& w : fit.warnings) out.warnings.push_back("fold " + std::to_string(f) + ": " + w);
        out.fold_risk.push_back(std::move(curve));
    }
    for (const auto& c : out.fold_risk)
        for (std::size_t m = 0; m < c.size(); ++m) out.risk[m] += c[m];
    for (auto& r : out.risk) r /= static_cast<double>(plan.n_folds);
    out.m_opt = argmin_curve(out.risk);
    return out;
}

}  // namespace gspboost

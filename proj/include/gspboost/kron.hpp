#pragma once

// Kronecker-structured operators acting on time-major NT vectors.
//
// Nothing here forms an NT x NT matrix. Every operator is of the form
//   Jbar_T (x) M_J  +  E_T (x) M_E
// with N x N blocks, so applying it to an N x T panel view Y is
//   M_J * ybar * 1'  +  M_E * (Y - ybar * 1'),
// where ybar is the per-location time mean.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "error.hpp"
#include "panel.hpp"
#include "variance.hpp"

namespace gspboost {

enum class ProjectorKind {
    WithinQ,        ///< Q = E_T (x) I_N
    AveragingJbar,  ///< Jbar_T (x) I_N
    SMatrix,        ///< S = (Jbar_T - E_T / (T - 1)) (x) I_N
};

class TimeProjector {
public:
    TimeProjector(ProjectorKind kind, Index n_locations, Index n_periods)
        : kind_(kind), n_(n_locations), t_(n_periods) {
        if (n_ < 1 || t_ < 1) throw ShapeError("projector needs N >= 1 and T >= 1");
        if (kind_ == ProjectorKind::SMatrix && t_ < 2) throw DegeneratePanel("S requires T >= 2");
    }

    ProjectorKind kind() const noexcept { return kind_; }
    Index n_locations() const noexcept { return n_; }
    Index n_periods() const noexcept { return t_; }

    /// Weights (a, b) such that the projector is a*Jbar + b*E.
    std::pair<double, double> coefficients() const {
        switch (kind_) {
            case ProjectorKind::WithinQ: return {0.0, 1.0};
            case ProjectorKind::AveragingJbar: return {1.0, 0.0};
            case ProjectorKind::SMatrix: return {1.0, -1.0 / static_cast<double>(t_ - 1)};
        }
        return {0.0, 0.0};
    }

    Vector apply(const Vector& v) const {
        if (v.size() != n_ * t_) throw ShapeError("projector expects a vector of length N*T");
        const auto [a, b] = coefficients();
        Vector out(v.size());
        Eigen::Map<const Matrix> in(v.data(), n_, t_);
        Eigen::Map<Matrix> res(out.data(), n_, t_);
        const Vector mean = in.rowwise().mean();
        res = b * (in.colwise() - mean);
        res.colwise() += a * mean;
        return out;
    }

    /// u' P v without materializing P v.
    double quadratic(const Vector& u, const Vector& v) const { return u.dot(apply(v)); }

private:
    ProjectorKind kind_;
    Index n_;
    Index t_;
};

/// I_N - rho W together with an LU factorization for solves.
class SpatialFilter {
public:
    SpatialFilter(double rho, const SpatialWeights& w) : rho_(rho), w_(w.matrix()) {
        if (!(std::abs(rho) < 1.0)) throw InvalidParameter("spatial parameter must satisfy |rho| < 1");
        matrix_ = Matrix::Identity(w.n_locations(), w.n_locations()) - rho * w.matrix();
        lu_.compute(matrix_);
        const double rc = lu_.rcond();
        if (!(rc > 1e-13)) throw SingularFilter("I - rho W has reciprocal condition " + std::to_string(rc));
    }

    double rho() const noexcept { return rho_; }
    const Matrix& matrix() const noexcept { return matrix_; }

    /// (I_T (x) (I - rho W)) v for an NT vector (or N vector when T = 1).
    Vector apply(const Vector& v) const { return v - rho_ * spatial_lag(v, w_); }

    /// (I_T (x) (I - rho W))^{-1} v.
    Vector solve(const Vector& v) const {
        const Index n = matrix_.rows();
        if (v.size() % n != 0) throw ShapeError("vector length is not a multiple of N");
        Vector out(v.size());
        Eigen::Map<Matrix>(out.data(), n, v.size() / n) = lu_.solve(Eigen::Map<const Matrix>(v.data(), n, v.size() / n));
        return out;
    }

    Matrix inverse() const { return lu_.inverse(); }

private:
    double rho_;
    Matrix w_;
    Matrix matrix_;
    Eigen::PartialPivLU<Matrix> lu_;
};

enum class ConcentrationMode { RandomOmegaInvHalf, FixedEB };

class ConcentrationOperator {
public:
    ConcentrationOperator(ConcentrationMode mode, Matrix block_j, Matrix block_e, Index n_periods,
                          VarianceComponents vc)
        : mode_(mode), block_j_(std::move(block_j)), block_e_(std::move(block_e)), t_(n_periods), vc_(std::move(vc)) {}

    ConcentrationMode mode() const noexcept { return mode_; }
    const Matrix& block_j() const noexcept { return block_j_; }
    const Matrix& block_e() const noexcept { return block_e_; }
    Index n_locations() const noexcept { return block_e_.rows(); }
    Index n_periods() const noexcept { return t_; }
    const VarianceComponents& variance_components() const noexcept { return vc_; }

    Vector apply(const Vector& v) const {
        Matrix m = v;
        return apply(m).col(0);
    }

    /// Applies the operator to every column of an NT x K matrix.
    Matrix apply(const Matrix& z) const {
        const Index n = n_locations();
        if (z.rows() != n * t_) throw ShapeError("operator expects N*T rows");
        const Index k = z.cols();
        // Per-location time means of every column: N x K.
        Matrix means = Matrix::Zero(n, k);
        for (Index j = 0; j < k; ++j)
            means.col(j) = Eigen::Map<const Matrix>(z.col(j).data(), n, t_).rowwise().mean();

        Matrix dev(z.rows(), k);
        for (Index j = 0; j < k; ++j) {
            Eigen::Map<const Matrix> in(z.col(j).data(), n, t_);
            Eigen::Map<Matrix>(dev.col(j).data(), n, t_) = in.colwise() - means.col(j);
        }
        Matrix out(z.rows(), k);
        Eigen::Map<Matrix>(out.data(), n, t_ * k).noalias() =
            block_e_ * Eigen::Map<const Matrix>(dev.data(), n, t_ * k);
        if (mode_ == ConcentrationMode::RandomOmegaInvHalf) {
            const Matrix between = block_j_ * means;
            for (Index j = 0; j < k; ++j)
                Eigen::Map<Matrix>(out.col(j).data(), n, t_).colwise() += between.col(j);
        }
        return out;
    }

    /// Short digest of the operator, stored alongside transformed data.
    std::string fingerprint() const {
        std::uint64_t h = 1469598103934665603ULL;
        auto mix = [&h](const Matrix& m) {
            for (Index i = 0; i < m.size(); ++i) {
                std::uint64_t bits;
                const double d = m.data()[i];
                std::memcpy(&bits, &d, sizeof bits);
                h = (h ^ bits) * 1099511628211ULL;
            }
        };
        mix(block_j_);
        mix(block_e_);
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
        return buf;
    }

private:
    ConcentrationMode mode_;
    Matrix block_j_;
    Matrix block_e_;
    Index t_;
    VarianceComponents vc_;
};

namespace detail {

/// Symmetric power of an SPD block via eigendecomposition; refuses blocks whose
/// smallest eigenvalue is below 1e-10 of the largest.
inline Matrix sym_pow(const Matrix& m, double power, const char* what) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(m);
    if (es.info() != Eigen::Success) throw ConditioningError(std::string(what) + ": eigensolver failed", 0.0);
    const Vector& ev = es.eigenvalues();
    const double lo = ev.minCoeff();
    const double hi = ev.maxCoeff();
    if (!(hi > 0.0) || lo < 1e-10 * hi) throw ConditioningError(what, lo);
    return es.eigenvectors() * ev.array().pow(power).matrix().asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

/// Omega^{-1/2} = Jbar_T (x) M1^{1/2} + E_T (x) M2^{1/2} with
///   M1 = [T s_mu (A'A)^{-1} + s_eps (B'B)^{-1}]^{-1},   M2 = B'B / s_eps.
inline ConcentrationOperator build_omega_inv_sqrt(const VarianceComponents& vc, const SpatialWeights& w,
                                                  Index n_periods) {
    if (!vc.rho1 || !vc.sigma_mu2) throw InvalidParameter("random effects need rho1 and sigma_mu2");
    if (!(vc.sigma_eps2 > 0.0)) throw InvalidParameter("sigma_eps2 must be positive");
    if (!(*vc.sigma_mu2 >= 0.0)) throw InvalidParameter("sigma_mu2 must be non-negative");
    if (n_periods < 1) throw ShapeError("T must be positive");

    const SpatialFilter a(*vc.rho1, w);
    const SpatialFilter b(vc.rho2, w);
    const Matrix a_inv = a.inverse();
    const Matrix b_inv = b.inverse();
    const Matrix btb = b.matrix().transpose() * b.matrix();

    Matrix cov_between = vc.sigma_eps2 * (b_inv * b_inv.transpose());
    if (*vc.sigma_mu2 > 0.0)
        cov_between.noalias() += static_cast<double>(n_periods) * *vc.sigma_mu2 * (a_inv * a_inv.transpose());
    cov_between = 0.5 * (cov_between + cov_between.transpose());

    Matrix m1_half = detail::sym_pow(cov_between, -0.5, "between-period covariance block");
    Matrix m2_half = detail::sym_pow(btb / vc.sigma_eps2, 0.5, "within-period precision block");
    return ConcentrationOperator(ConcentrationMode::RandomOmegaInvHalf, std::move(m1_half), std::move(m2_half),
                                 n_periods, vc);
}

/// E_T (x) B with B = I - rho2 W.
inline ConcentrationOperator build_fixed_transform(const VarianceComponents& vc, const SpatialWeights& w,
                                                   Index n_periods) {
    const SpatialFilter b(vc.rho2, w);
    return ConcentrationOperator(ConcentrationMode::FixedEB, Matrix::Zero(w.n_locations(), w.n_locations()),
                                 b.matrix(), n_periods, vc);
}

}  // namespace gspboost

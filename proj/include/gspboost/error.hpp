#pragma once

#include <stdexcept>
#include <string>

namespace gspboost {

/// Broad failure classes. The CLI maps them onto process exit codes.
enum class ErrorKind {
    Validation,  ///< malformed or inconsistent input (exit 2)
    Estimation,  ///< numerical or estimation failure (exit 3)
    Io,          ///< file system / parse trouble (exit 4)
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& what) : Error(ErrorKind::Validation, "shape error: " + what) {}
};

struct InvalidParameter : Error {
    explicit InvalidParameter(const std::string& what)
        : Error(ErrorKind::Validation, "invalid parameter: " + what) {}
};

struct DegenerateGeometry : Error {
    explicit DegenerateGeometry(const std::string& what)
        : Error(ErrorKind::Validation, "degenerate geometry: " + what) {}
};

struct IsolatedUnit : Error {
    explicit IsolatedUnit(const std::string& location)
        : Error(ErrorKind::Validation, "isolated location '" + location + "' has no neighbors"),
          location_id(location) {}
    std::string location_id;
};

struct FixedEffectsInfeasible : Error {
    explicit FixedEffectsInfeasible(const std::string& what)
        : Error(ErrorKind::Validation, "fixed effects infeasible: " + what) {}
};

struct DegeneratePanel : Error {
    explicit DegeneratePanel(const std::string& what)
        : Error(ErrorKind::Validation, "degenerate panel: " + what) {}
};

struct AlignmentError : Error {
    explicit AlignmentError(const std::string& what)
        : Error(ErrorKind::Validation, "alignment error: " + what) {}
};

struct SingularFilter : Error {
    explicit SingularFilter(const std::string& what)
        : Error(ErrorKind::Estimation, "singular spatial filter: " + what) {}
};

struct ConditioningError : Error {
    ConditioningError(const std::string& what, double min_eig)
        : Error(ErrorKind::Estimation, "ill-conditioned block: " + what + " (min eigenvalue " +
                                           std::to_string(min_eig) + ")"),
          min_eigenvalue(min_eig) {}
    double min_eigenvalue;
};

struct RankError : Error {
    explicit RankError(const std::string& what) : Error(ErrorKind::Estimation, "rank error: " + what) {}
};

struct NoLearnerError : Error {
    explicit NoLearnerError(const std::string& what)
        : Error(ErrorKind::Estimation, "no usable base-learner: " + what) {}
};

struct EstimationFailure : Error {
    EstimationFailure(const std::string& what, double best_rho, double best_sigma2, double residual)
        : Error(ErrorKind::Estimation, "estimation failure: " + what), rho(best_rho), sigma2(best_sigma2),
          residual_norm(residual) {}
    double rho;
    double sigma2;
    double residual_norm;
};

struct ParseError : Error {
    ParseError(const std::string& file, std::size_t row, const std::string& what)
        : Error(ErrorKind::Io, file + ":" + std::to_string(row) + ": " + what), row_number(row) {}
    std::size_t row_number;
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error(ErrorKind::Io, "i/o error: " + what) {}
};

}  // namespace gspboost

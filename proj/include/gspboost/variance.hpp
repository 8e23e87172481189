#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "panel.hpp"

namespace gspboost {

/// Spatial autocorrelation and variance parameters of the disturbance.
/// Fixed-effects estimation leaves rho1 and sigma_mu2 unset.
struct VarianceComponents {
    std::optional<double> rho1;
    double rho2 = 0.0;
    std::optional<double> sigma_mu2;
    double sigma_eps2 = 1.0;
    Family family = Family::GSPECM;
    Effects effects = Effects::Random;

    // diagnostics
    bool rho1_at_boundary = false;
    bool rho2_at_boundary = false;
    bool sigma_mu2_clamped = false;
    double eps_residual_norm = 0.0;
    double mu_residual_norm = 0.0;
    std::string initial_estimator;  ///< "ols", "boosting" or "" when supplied externally
    std::vector<std::string> warnings;

    static VarianceComponents known(double rho1, double rho2, double sigma_mu2, double sigma_eps2,
                                    Family family = Family::GSPECM) {
        VarianceComponents vc;
        vc.rho1 = rho1;
        vc.rho2 = rho2;
        vc.sigma_mu2 = sigma_mu2;
        vc.sigma_eps2 = sigma_eps2;
        vc.family = family;
        return vc;
    }
};

}  // namespace gspboost

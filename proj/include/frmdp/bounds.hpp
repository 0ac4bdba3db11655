#pragma once

#include "frmdp/policy.hpp"

#include <vector>

namespace frmdp {

/// lhs <= rhs + rel (1 + |rhs|); an infinite rhs always holds.
inline bool bound_holds(double lhs, double rhs, double rel = tolerances().bound_rel) {
    if (std::isinf(rhs) && rhs > 0.0) {
        return true;
    }
    return lhs <= rhs + rel * (1.0 + std::abs(rhs));
}

/// kappa = max_s d*(s)/rho_ref(s) + max_{s,a} d*(s) pi*(a|s) / (rho_ref(s) pi_ref(a|s)).
/// A zero denominator under a positive numerator gives +inf.
inline double concentrability(const Vector& d_star, const Matrix& pi_star, const Vector& rho_ref,
                              const Matrix& pi_ref) {
    auto ratio = [](double num, double den) {
        if (num <= 0.0) {
            return 0.0;
        }
        return den > 0.0 ? num / den : kInf;
    };
    double first = 0.0;
    double second = 0.0;
    for (Index s = 0; s < d_star.size(); ++s) {
        first = std::max(first, ratio(d_star(s), rho_ref(s)));
        for (Index a = 0; a < pi_star.cols(); ++a) {
            second = std::max(second, ratio(d_star(s) * pi_star(s, a), rho_ref(s) * pi_ref(s, a)));
        }
    }
    return first + second;
}

inline double concentrability(const TabularMDP& m, const PolicyDistribution& pi_star, const Vector& rho_ref,
                              const PolicyDistribution& pi_ref) {
    return concentrability(occupancy(m, pi_star).d_rho, pi_star.pi, rho_ref, pi_ref.pi);
}

/// Running minimum of a sequence.
inline std::vector<double> running_min(const std::vector<double>& v) {
    std::vector<double> out(v.size());
    double best = kInf;
    for (std::size_t k = 0; k < v.size(); ++k) {
        best = std::min(best, v[k]);
        out[k] = best;
    }
    return out;
}

/// tau / ((1-gamma)(e^{tau t} - 1)) * (kl0 + 2 kappa int_0^t e^{tau r} err(r) dr) on the
/// snapshot grid, the integral by the trapezoid rule.
inline std::vector<double> perturbed_gap_bound(const std::vector<double>& times, const std::vector<double>& err,
                                               double kl0, double tau, double gamma, double kappa) {
    std::vector<double> out(times.size());
    double integral = 0.0;
    for (std::size_t k = 0; k < times.size(); ++k) {
        if (k > 0) {
            const double h = times[k] - times[k - 1];
            integral += 0.5 * h * (std::exp(tau * times[k - 1]) * err[k - 1] + std::exp(tau * times[k]) * err[k]);
        }
        const double t = times[k];
        out[k] = t <= 0.0 ? kInf : tau / ((1.0 - gamma) * std::expm1(tau * t)) * (kl0 + 2.0 * kappa * integral);
    }
    return out;
}

} // namespace frmdp

#pragma once

#include "frmdp/bounds.hpp"
#include "frmdp/generator.hpp"
#include "frmdp/npg.hpp"

#include <array>
#include <charconv>
#include <ostream>
#include <string>
#include <tuple>

namespace frmdp {

/// Shortest round-trip decimal form; "inf", "-inf" and "nan" for non-finite values.
inline std::string format_double(double x) {
    if (std::isnan(x)) {
        return "nan";
    }
    if (std::isinf(x)) {
        return x > 0 ? "inf" : "-inf";
    }
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return {buf, res.ptr};
}

/// Non-finite doubles become strings so the JSON stays valid.
inline nlohmann::json json_number(double x) {
    if (std::isfinite(x)) {
        return x;
    }
    return format_double(x);
}

/// Per-time comparison lhs <= rhs with the relative slack of bound_holds.
struct BoundReport {
    std::string name;
    std::vector<double> times;
    std::vector<double> lhs;
    std::vector<double> rhs;
    std::vector<bool> holds;
    std::vector<double> margin;

    static BoundReport make(std::string name, std::vector<double> times, std::vector<double> lhs,
                            std::vector<double> rhs, double rel = tolerances().bound_rel) {
        BoundReport r{std::move(name), std::move(times), std::move(lhs), std::move(rhs), {}, {}};
        for (std::size_t k = 0; k < r.times.size(); ++k) {
            r.holds.push_back(bound_holds(r.lhs[k], r.rhs[k], rel));
            r.margin.push_back(r.rhs[k] - r.lhs[k]);
        }
        return r;
    }

    bool all_hold() const { return std::all_of(holds.begin(), holds.end(), [](bool b) { return b; }); }

    std::size_t violations() const {
        return static_cast<std::size_t>(std::count(holds.begin(), holds.end(), false));
    }

    double min_margin() const {
        double m = kInf;
        for (double x : margin) {
            if (!std::isnan(x)) {
                m = std::min(m, x);
            }
        }
        return m;
    }

    std::optional<double> first_violation() const {
        for (std::size_t k = 0; k < holds.size(); ++k) {
            if (!holds[k]) {
                return times[k];
            }
        }
        return std::nullopt;
    }

    void write_csv(std::ostream& os) const {
        os << "t,lhs,rhs,margin,holds\n";
        for (std::size_t k = 0; k < times.size(); ++k) {
            os << format_double(times[k]) << ',' << format_double(lhs[k]) << ',' << format_double(rhs[k]) << ','
               << format_double(margin[k]) << ',' << (holds[k] ? 1 : 0) << '\n';
        }
    }

    nlohmann::json summary() const {
        nlohmann::json j = {{"name", name},
                            {"snapshots", times.size()},
                            {"holds", all_hold()},
                            {"violations", violations()},
                            {"min_margin", json_number(min_margin())}};
        const auto first = first_violation();
        j["first_violation_time"] = first ? nlohmann::json(*first) : nlohmann::json(nullptr);
        return j;
    }
};

// ---------------------------------------------------------------------------
// Identities.

/// D_nu(f, g) = sum_s nu(s) [Phi(f) - Phi(g) - sum_a (f - g) pi(g)].
inline double bregman_divergence(const Matrix& f, const Matrix& g, const Vector& nu, const TabularMDP& m) {
    const Vector phi_f = log_partition(f, m.mu());
    const Vector phi_g = log_partition(g, m.mu());
    const PolicyDistribution pg = policy_from_logits(g, m.mu());
    double total = 0.0;
    for (Index s = 0; s < f.rows(); ++s) {
        const double linear = (f.row(s) - g.row(s)).dot(pg.pi.row(s));
        total += nu(s) * (phi_f(s) - phi_g(s) - linear);
    }
    return total;
}

/// Hessian of h* at Z applied to f: (f - <f, pi>) pi with pi = softmax(Z).
inline Matrix hessian_apply(const Matrix& Z, const Matrix& f, const TabularMDP& m) {
    const PolicyDistribution p = policy_from_logits(Z, m.mu());
    const Vector mean = f.cwiseProduct(p.pi).rowwise().sum();
    return (f.colwise() - mean).cwiseProduct(p.pi);
}

/// h*_nu(Z) = (1-gamma)^{-1} sum_s nu(s) ln sum_a e^{Z} mu.
inline double conjugate_entropy(const Matrix& Z, const Vector& nu, const TabularMDP& m) {
    return nu.dot(log_partition(Z, m.mu())) / (1.0 - m.gamma());
}

struct LegendreReport {
    double h_star = 0.0;
    double value_at_maximiser = 0.0; ///< <Z, pi(Z)>_nu - h_nu(pi(Z))
    double equality_error = 0.0;
    double min_margin = kInf; ///< min over samples of h* - (<Z, pi'>_nu - h_nu(pi'))
    int n_samples = 0;

    bool ok(double tol = 1e-10) const { return equality_error <= tol && min_margin >= -tol; }
};

/// Conjugate duality of the integrated entropy: the pairing uses the occupancy
/// convention <f, pi>_nu = (1-gamma)^{-1} sum_s nu(s) sum_a f pi, and
/// h_nu(pi) = (1-gamma)^{-1} sum_s nu(s) KL(pi(.|s) | mu).
inline LegendreReport legendre_check(const Matrix& Z, const Vector& nu, const TabularMDP& m, int n_samples,
                                     std::uint64_t seed = 0) {
    const Matrix mu_rows = m.mu().transpose().replicate(Z.rows(), 1);
    const double scale = 1.0 / (1.0 - m.gamma());
    auto objective = [&](const Matrix& pi) {
        double pairing = 0.0;
        for (Index s = 0; s < Z.rows(); ++s) {
            pairing += nu(s) * Z.row(s).dot(pi.row(s));
        }
        return scale * (pairing - kl_policies(pi, mu_rows, nu));
    };
    LegendreReport r;
    r.h_star = conjugate_entropy(Z, nu, m);
    r.value_at_maximiser = objective(policy_from_logits(Z, m.mu()).pi);
    r.equality_error = std::abs(r.h_star - r.value_at_maximiser);
    r.n_samples = n_samples;
    for (int k = 0; k < n_samples; ++k) {
        const Matrix other = random_logits(Z.rows(), Z.cols(), seed + static_cast<std::uint64_t>(k), 3.0);
        r.min_margin = std::min(r.min_margin, r.h_star - objective(policy_from_logits(other, m.mu()).pi));
    }
    return r;
}

struct HessianCheck {
    double analytic = 0.0;   ///< <H(Z) f, f>_nu
    double richardson = 0.0; ///< extrapolated second difference of h*_nu along f
    double rel_error = 0.0;
};

inline HessianCheck hessian_fd_check(const Matrix& Z, const Matrix& f, const Vector& nu, const TabularMDP& m,
                                     double eps = 1e-3) {
    const Matrix H = hessian_apply(Z, f, m);
    HessianCheck c;
    for (Index s = 0; s < Z.rows(); ++s) {
        c.analytic += nu(s) * H.row(s).dot(f.row(s));
    }
    c.analytic /= 1.0 - m.gamma();
    auto second = [&](double e) {
        return (conjugate_entropy(Z + e * f, nu, m) - 2.0 * conjugate_entropy(Z, nu, m) +
                conjugate_entropy(Z - e * f, nu, m)) /
               (e * e);
    };
    c.richardson = (4.0 * second(0.5 * eps) - second(eps)) / 3.0;
    c.rel_error = std::abs(c.richardson - c.analytic) / std::max(std::abs(c.analytic), 1e-300);
    return c;
}

// ---------------------------------------------------------------------------
// Derivative formulas.

/// Directional derivatives at Z along g: of the softmax map, of the log-density and of J(Z) = V^{pi(Z)}.
struct Derivatives {
    Matrix d_pi;
    Matrix d_log_density;
    Vector d_value;
};

inline Derivatives directional_derivatives(const TabularMDP& m, const Matrix& Z, const Matrix& g) {
    const LogitPolicy p(Z, m.mu());
    const PolicyEvaluation ev = evaluate_policy(m, p);
    Derivatives d;
    const Vector mean = g.cwiseProduct(p.pi()).rowwise().sum();
    d.d_log_density = g.colwise() - mean;
    d.d_pi = d.d_log_density.cwiseProduct(p.pi());
    const Matrix G = flat_derivative(m, p.distribution(), ev);
    const Vector per_state = G.cwiseProduct(d.d_pi).rowwise().sum();
    d.d_value = ev.occ.kernel * per_state / (1.0 - m.gamma());
    return d;
}

struct DerivativeReport {
    /// Max relative sup-norm error against central differences, indexed [map][eps]
    /// for the maps (softmax, log-density, value) and eps in `eps`.
    std::vector<double> eps;
    std::array<std::vector<double>, 3> rel_error;
    /// Error ratio between the two trend step sizes (about 4 for O(eps^2)).
    std::array<double, 3> trend_ratio{};
    /// Operator norms divided by their bounds 2, 2 and 2(|c| + 2 tau |Z|)/(1-gamma)^2.
    std::array<double, 3> bound_ratio{};

    double max_rel_error() const {
        double w = 0.0;
        for (const auto& v : rel_error) {
            for (double x : v) {
                w = std::max(w, x);
            }
        }
        return w;
    }
    double max_bound_ratio() const { return *std::max_element(bound_ratio.begin(), bound_ratio.end()); }
};

inline DerivativeReport derivative_checks(const TabularMDP& m, const Matrix& Z, const Matrix& g_dir,
                                          std::vector<double> eps = {1e-4, 1e-5},
                                          std::pair<double, double> trend = {1e-2, 5e-3}) {
    const Derivatives exact = directional_derivatives(m, Z, g_dir);
    auto maps = [&](const Matrix& X) {
        const LogitPolicy p(X, m.mu());
        return std::make_tuple(p.pi(), p.log_density(), evaluate_policy(m, p, false).V);
    };
    auto central = [&](double e) {
        const auto [pp, lp, vp] = maps(Z + e * g_dir);
        const auto [pm, lm, vm] = maps(Z - e * g_dir);
        return std::array<double, 3>{
            sup_norm(Matrix((pp - pm) / (2.0 * e) - exact.d_pi)),
            sup_norm(Matrix((lp - lm) / (2.0 * e) - exact.d_log_density)),
            sup_norm(Vector((vp - vm) / (2.0 * e) - exact.d_value)),
        };
    };
    const std::array<double, 3> scale{std::max(sup_norm(exact.d_pi), 1e-300),
                                      std::max(sup_norm(exact.d_log_density), 1e-300),
                                      std::max(sup_norm(exact.d_value), 1e-300)};
    DerivativeReport r;
    r.eps = eps;
    for (double e : eps) {
        const auto err = central(e);
        for (int i = 0; i < 3; ++i) {
            r.rel_error[i].push_back(err[i] / scale[i]);
        }
    }
    const auto coarse = central(trend.first);
    const auto fine = central(trend.second);
    for (int i = 0; i < 3; ++i) {
        r.trend_ratio[i] = coarse[i] / std::max(fine[i], 1e-300);
    }
    double tv = 0.0;
    for (Index s = 0; s < Z.rows(); ++s) {
        tv = std::max(tv, exact.d_pi.row(s).cwiseAbs().sum());
    }
    const double gn = std::max(sup_norm(g_dir), 1e-300);
    const double j_bound = 2.0 * (m.cost_norm() + 2.0 * m.tau() * sup_norm(Z)) / std::pow(1.0 - m.gamma(), 2);
    r.bound_ratio = {tv / (2.0 * gn), sup_norm(exact.d_log_density) / (2.0 * gn),
                     sup_norm(exact.d_value) / (j_bound * gn)};
    return r;
}

// ---------------------------------------------------------------------------
// Rate bounds on trajectories.

struct LinearConvergenceReport {
    BoundReport gap;    ///< value gap against the exponential bound
    BoundReport policy; ///< int |pi_t - pi*|_1^2 d* against 2 e^{-tau t} KL0
};

/// Exponential convergence of the value gap and of the policy. `rhs_multiplier`
/// scales the right-hand sides; the negative control uses 0.5.
inline LinearConvergenceReport check_linear_convergence(const FlowTrajectory& traj, double rhs_multiplier = 1.0) {
    std::vector<double> gap_rhs;
    std::vector<double> tv_rhs;
    for (std::size_t k = 0; k < traj.size(); ++k) {
        const double t = traj.times[k];
        gap_rhs.push_back(rhs_multiplier * exponential_gap_bound(traj.tau, traj.gamma, t, traj.kl0));
        tv_rhs.push_back(rhs_multiplier * 2.0 * std::exp(-traj.tau * t) * traj.kl0);
    }
    return {BoundReport::make("exponential_gap", traj.times, traj.value_gaps, gap_rhs),
            BoundReport::make("exponential_policy", traj.times, traj.tv_sq, tv_rhs)};
}

/// Stability bound for approximate flows: running-min gap against the
/// exponential bound inflated by the weighted L1 error integral. `shifted`
/// uses the best state-only shift of the error.
inline BoundReport check_stability_bound(const FlowTrajectory& traj, double kappa, bool shifted = false,
                                         double rhs_multiplier = 1.0) {
    const auto& err = shifted ? traj.error_integrand_shifted : traj.error_integrand;
    if (err.size() != traj.size()) {
        throw InvalidInput("trajectory has no recorded error integrand");
    }
    std::vector<double> rhs = perturbed_gap_bound(traj.times, err, traj.kl0, traj.tau, traj.gamma, kappa);
    for (double& x : rhs) {
        x *= rhs_multiplier;
    }
    return BoundReport::make(shifted ? "stability_shifted" : "stability", traj.times, running_min(traj.value_gaps),
                             rhs);
}

inline BoundReport check_npg_bound(const NpgTrajectory& npg, double rhs_multiplier = 1.0) {
    std::vector<double> rhs = npg.bound_rhs;
    for (double& x : rhs) {
        x *= rhs_multiplier;
    }
    return BoundReport::make("npg_stability", npg.flow.times, npg.bound_lhs, rhs);
}

/// Polynomial rate of the unregularised flow.
inline BoundReport check_polynomial_rate(const FlowTrajectory& traj, double rhs_multiplier = 1.0) {
    std::vector<double> rhs;
    for (std::size_t k = 0; k < traj.size(); ++k) {
        rhs.push_back(rhs_multiplier * polynomial_gap_bound(traj.gamma, traj.times[k], traj.kl0));
    }
    return BoundReport::make("polynomial_gap", traj.times, traj.value_gaps, rhs);
}

/// Per-state monotonicity: lhs = max_s V_{t_k}(s) - V_{t_{k-1}}(s), rhs = 0, absolute slack `slack`.
inline BoundReport check_monotonicity(const FlowTrajectory& traj, double slack = 1e-8) {
    std::vector<double> lhs(traj.size(), -kInf);
    for (std::size_t k = 1; k < traj.size(); ++k) {
        lhs[k] = (traj.values[k] - traj.values[k - 1]).maxCoeff();
    }
    return BoundReport::make("monotone_values", traj.times, lhs, std::vector<double>(traj.size(), slack), 0.0);
}

/// |KL-ODE residual| against `tol` (interior snapshots; the end points carry no residual).
inline BoundReport check_kl_ode(const FlowTrajectory& traj, double tol) {
    std::vector<double> lhs;
    for (double r : traj.residual_kl_ode) {
        lhs.push_back(std::isnan(r) ? 0.0 : std::abs(r));
    }
    return BoundReport::make("kl_ode_residual", traj.times, lhs, std::vector<double>(traj.size(), tol), 0.0);
}

/// Log-gap slope by least squares over snapshots with t >= from and gap > floor.
inline double log_gap_slope(const FlowTrajectory& traj, double from, double floor = 1e-13) {
    double n = 0.0, sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t k = 0; k < traj.size(); ++k) {
        const double t = traj.times[k];
        const double gap = traj.value_gaps[k];
        if (t < from || !(gap > floor)) {
            continue;
        }
        const double y = std::log(gap);
        n += 1.0;
        sx += t;
        sy += y;
        sxx += t * t;
        sxy += t * y;
    }
    if (n < 2.0) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

} // namespace frmdp

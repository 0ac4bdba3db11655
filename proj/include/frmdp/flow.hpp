#pragma once

#include "frmdp/rng.hpp"
#include "frmdp/soft_dp.hpp"

#include <algorithm>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

namespace frmdp {

enum class Integrator { rk4, euler };
enum class FlowMode { regularised, unregularised, approximate };
enum class PerturbationProfile { constant, sinusoidal, decaying };

/// Deterministic Q-perturbation eps * B(t) with B drawn once from the seed.
struct PerturbationSpec {
    double amplitude = 0.0;
    std::uint64_t seed = 0;
    PerturbationProfile profile = PerturbationProfile::constant;
    bool state_only = false; ///< B(s, a) does not depend on a
};

inline double default_dt(double tau) { return tau > 0.0 ? std::min(0.01, 0.1 / tau) : 0.01; }

struct FlowConfig {
    double t_end = 1.0;
    double dt = 0.01;
    Integrator integrator = Integrator::rk4;
    int snapshot_every = 1;
    FlowMode mode = FlowMode::regularised;
    std::optional<PerturbationSpec> perturbation;
    std::optional<Vector> rho_ref; ///< reference state measure for the error norm, default rho
    std::optional<Vector> pi_ref;  ///< reference action measure for the error norm, default mu

    void validate() const {
        if (!(dt > 0.0) || !std::isfinite(dt)) {
            throw InvalidInput("dt must be > 0");
        }
        if (!(t_end >= dt) || !std::isfinite(t_end)) {
            throw InvalidInput("t_end must be >= dt");
        }
        if (snapshot_every < 1) {
            throw InvalidInput("snapshot_every must be >= 1");
        }
    }

    /// Number of steps and the step actually taken (t_end is hit exactly).
    std::pair<long, double> grid() const {
        const long n = static_cast<long>(std::ceil(t_end / dt - 1e-9));
        return {n, t_end / static_cast<double>(n)};
    }
};

/// Time grid with snapshots and per-snapshot diagnostics.
struct FlowTrajectory {
    FlowMode mode = FlowMode::regularised;
    double tau = 0.0;
    double gamma = 0.0;
    double kl0 = 0.0;        ///< int KL(pi* | pi_0) d^{pi*}_rho
    double V_star_rho = 0.0; ///< reference optimum at rho

    std::vector<double> times;
    std::vector<Matrix> Z_snapshots;
    std::vector<Matrix> pi_snapshots;
    std::vector<Vector> values; ///< V^{pi_t} per state
    std::vector<double> value_gaps;
    std::vector<double> kl_to_opt;
    std::vector<double> tv_sq;        ///< int ||pi_t - pi*||_1^2 d^{pi*}_rho
    std::vector<double> bound_values; ///< exponential bound (regularised) or KL0/((1-gamma)t)
    std::vector<double> norm_Z;
    std::vector<double> error_integrand;         ///< ||Q^{pi_t} - Q_t|| in L1(rho_ref x (pi_t + pi_ref)/2)
    std::vector<double> error_integrand_shifted; ///< same after the best state-only shift
    std::vector<double> residual_kl_ode;         ///< NaN at the two end snapshots

    std::size_t size() const { return times.size(); }
};

/// Optimum the diagnostics compare against.
struct FlowReference {
    Vector V_star;
    Matrix pi_star;
    Vector d_star; ///< d^{pi*}_rho
    double V_star_rho = 0.0;
};

inline FlowReference make_reference(const TabularMDP& m) {
    FlowReference ref;
    if (m.unregularised()) {
        HardOptimalSolution hard = solve_unregularised_optimal(m);
        ref.V_star = std::move(hard.V_star);
        ref.pi_star = std::move(hard.pi_star);
    } else {
        OptimalSolution soft = reference_optimal(m);
        ref.V_star = std::move(soft.V_star);
        ref.pi_star = std::move(soft.pi_star.pi);
    }
    ref.d_star = occupancy(m, ref.pi_star).d_rho;
    ref.V_star_rho = m.rho().dot(ref.V_star);
    return ref;
}

/// tau / ((1 - gamma)(e^{tau t} - 1)) * kl0, +inf at t = 0.
inline double exponential_gap_bound(double tau, double gamma, double t, double kl0) {
    if (t <= 0.0) {
        return kInf;
    }
    return tau / ((1.0 - gamma) * std::expm1(tau * t)) * kl0;
}

/// kl0 / ((1 - gamma) t), +inf at t = 0.
inline double polynomial_gap_bound(double gamma, double t, double kl0) {
    return t <= 0.0 ? kInf : kl0 / ((1.0 - gamma) * t);
}

// ---------------------------------------------------------------------------
// Right-hand sides.

/// -(Q^{pi(Z)} + tau Z - V^{pi(Z)}).
inline Matrix mirror_flow_rhs(const TabularMDP& m, const Matrix& Z) {
    const LogitPolicy p(Z, m.mu());
    const PolicyEvaluation ev = evaluate_policy(m, p, false);
    Matrix rhs = -((ev.Q + m.tau() * Z).colwise() - ev.V);
    return rhs;
}

/// -(Q^pi + tau ln dpi/dmu - V^pi) pi.
inline Matrix fisher_rao_flow_rhs(const TabularMDP& m, const PolicyDistribution& p) {
    const PolicyEvaluation ev = evaluate_policy(m, p, false);
    return -flat_derivative(m, p, ev).cwiseProduct(p.pi);
}

/// -(Q_t + tau Z - <Q_t + tau Z, pi>) with the pi-average taken per state.
inline Matrix approximate_flow_rhs(const TabularMDP& m, const Matrix& Z, const Matrix& pi, const Matrix& Q_t) {
    Matrix M = Q_t + m.tau() * Z;
    const Vector mean = M.cwiseProduct(pi).rowwise().sum();
    M.colwise() -= mean;
    return -M;
}

/// Primal image of the approximate rhs: d/dt pi = pi * (dual rhs centred under pi).
inline Matrix approximate_fisher_rao_rhs(const TabularMDP& m, const PolicyDistribution& p, const Matrix& Q_t) {
    return approximate_flow_rhs(m, p.log_density, p.pi, Q_t).cwiseProduct(p.pi);
}

/// -(Q^{pi(Z)} - V^{pi(Z)}), zero on actions outside the support of mu.
inline Matrix unregularised_flow_rhs(const TabularMDP& m, const Matrix& Z) {
    const PolicyDistribution p = policy_from_logits(Z, m.mu());
    const PolicyEvaluation ev = evaluate_policy(m, p, false);
    Matrix rhs = -(ev.Q.colwise() - ev.V);
    for (Index a = 0; a < m.n_actions(); ++a) {
        if (m.mu()(a) == 0.0) {
            rhs.col(a).setZero();
        }
    }
    return rhs;
}

/// One discrete mirror-descent step: Z+ = Z - flat_derivative / lambda, renormalised.
inline LogitPolicy policy_mirror_descent_step(const TabularMDP& m, const LogitPolicy& pi, double lambda) {
    if (!(lambda > 0.0)) {
        throw InvalidInput("mirror-descent step needs lambda > 0");
    }
    Matrix Z = pi.logits() - flat_derivative(m, pi) / lambda;
    Z.colwise() -= log_partition(Z, m.mu());
    return {std::move(Z), m.mu()};
}

// ---------------------------------------------------------------------------
// Q suppliers for the approximate flow.

/// Q_t as a function of time, the current policy and its exact evaluation.
using QSupplier = std::function<Matrix(double t, const PolicyDistribution& pi, const PolicyEvaluation& exact)>;

inline QSupplier exact_q() {
    return [](double, const PolicyDistribution&, const PolicyEvaluation& ev) { return ev.Q; };
}

inline double perturbation_profile(PerturbationProfile profile, double t, double& second) {
    switch (profile) {
    case PerturbationProfile::constant:
        second = 0.0;
        return 1.0;
    case PerturbationProfile::sinusoidal:
        second = std::sin(t) / std::sqrt(2.0);
        return std::cos(t) / std::sqrt(2.0);
    case PerturbationProfile::decaying:
        second = 0.0;
        return std::exp(-t);
    }
    second = 0.0;
    return 1.0;
}

/// Perturbation eps * B(t), sup norm at most eps.
inline std::function<Matrix(double)> perturbation_field(Index S, Index A, const PerturbationSpec& spec) {
    Xoshiro256 rng(spec.seed);
    Matrix B0(S, A);
    Matrix B1(S, A);
    for (Index s = 0; s < S; ++s) {
        for (Index a = 0; a < A; ++a) {
            B0(s, a) = rng.uniform(-1.0, 1.0);
            B1(s, a) = rng.uniform(-1.0, 1.0);
        }
        if (spec.state_only) {
            B0.row(s).setConstant(B0(s, 0));
            B1.row(s).setConstant(B1(s, 0));
        }
    }
    return [B0, B1, spec](double t) {
        double w1 = 0.0;
        const double w0 = perturbation_profile(spec.profile, t, w1);
        return Matrix(spec.amplitude * (w0 * B0 + w1 * B1));
    };
}

/// Q_t = Q^{pi_t} + eps B(t).
inline QSupplier perturbed_q(const TabularMDP& m, const PerturbationSpec& spec) {
    auto field = perturbation_field(m.n_states(), m.n_actions(), spec);
    return [field](double t, const PolicyDistribution&, const PolicyEvaluation& ev) {
        return Matrix(ev.Q + field(t));
    };
}

// ---------------------------------------------------------------------------
// Integration.

template <class Rhs>
Matrix integrator_step(const Matrix& x, double t, double h, Integrator kind, Rhs&& f) {
    if (kind == Integrator::euler) {
        return x + h * f(t, x);
    }
    const Matrix k1 = f(t, x);
    const Matrix k2 = f(t + 0.5 * h, Matrix(x + 0.5 * h * k1));
    const Matrix k3 = f(t + 0.5 * h, Matrix(x + 0.5 * h * k2));
    const Matrix k4 = f(t + h, Matrix(x + h * k3));
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

namespace detail {

/// Fixed-step loop. `guard(t, x)` runs after every step, `observe(t, x)` at
/// t = 0, every snapshot_every steps and at t_end.
template <class Rhs, class Guard, class Observe>
void drive(Matrix x, const FlowConfig& cfg, Rhs&& rhs, Guard&& guard, Observe&& observe) {
    cfg.validate();
    const auto [n, h] = cfg.grid();
    observe(0.0, x);
    for (long k = 1; k <= n; ++k) {
        const double t0 = static_cast<double>(k - 1) * h;
        x = integrator_step(x, t0, h, cfg.integrator, rhs);
        const double t = (k == n) ? cfg.t_end : static_cast<double>(k) * h;
        if (!x.allFinite()) {
            throw IntegratorInstability("state became non-finite", t);
        }
        guard(t, x);
        if (k % cfg.snapshot_every == 0 || k == n) {
            observe(t, x);
        }
    }
}

inline double weighted_l1(const Matrix& D, const Vector& rho_ref, const Matrix& pi, const Matrix& pi_ref) {
    double total = 0.0;
    for (Index s = 0; s < D.rows(); ++s) {
        for (Index a = 0; a < D.cols(); ++a) {
            total += rho_ref(s) * 0.5 * (pi(s, a) + pi_ref(s, a)) * std::abs(D(s, a));
        }
    }
    return total;
}

/// Minimum over state-only shifts F of the weighted L1 norm of D + F; the
/// optimal F(s) is minus a weighted median of D(s, .).
inline double shifted_weighted_l1(const Matrix& D, const Vector& rho_ref, const Matrix& pi, const Matrix& pi_ref) {
    double total = 0.0;
    std::vector<std::pair<double, double>> items;
    for (Index s = 0; s < D.rows(); ++s) {
        items.clear();
        double mass = 0.0;
        for (Index a = 0; a < D.cols(); ++a) {
            const double w = 0.5 * (pi(s, a) + pi_ref(s, a));
            items.emplace_back(D(s, a), w);
            mass += w;
        }
        std::sort(items.begin(), items.end());
        double acc = 0.0;
        double median = items.front().first;
        for (const auto& [value, w] : items) {
            acc += w;
            if (acc >= 0.5 * mass) {
                median = value;
                break;
            }
        }
        double row = 0.0;
        for (const auto& [value, w] : items) {
            row += w * std::abs(value - median);
        }
        total += rho_ref(s) * row;
    }
    return total;
}

inline Matrix broadcast_rows(const Vector& v, Index rows) {
    Matrix out(rows, v.size());
    for (Index s = 0; s < rows; ++s) {
        out.row(s) = v.transpose();
    }
    return out;
}

/// Records diagnostics for one snapshot. `q_t` is the supplied Q for
/// approximate flows, empty otherwise.
struct Recorder {
    const TabularMDP& m;
    const FlowReference& ref;
    FlowTrajectory& traj;
    Vector rho_ref;
    Matrix pi_ref;

    void operator()(double t, const Matrix& Z, const PolicyDistribution& p, const PolicyEvaluation& ev,
                    const Matrix* q_t) {
        traj.times.push_back(t);
        traj.Z_snapshots.push_back(Z);
        traj.pi_snapshots.push_back(p.pi);
        traj.values.push_back(ev.V);
        traj.value_gaps.push_back(ev.V_rho - ref.V_star_rho);
        const double kl = kl_policies(ref.pi_star, p.pi, ref.d_star);
        if (traj.size() == 1) {
            traj.kl0 = kl;
        }
        traj.kl_to_opt.push_back(kl);
        traj.tv_sq.push_back(squared_tv(p.pi, ref.pi_star, ref.d_star));
        traj.bound_values.push_back(m.unregularised()
                                        ? polynomial_gap_bound(m.gamma(), t, traj.kl0)
                                        : exponential_gap_bound(m.tau(), m.gamma(), t, traj.kl0));
        traj.norm_Z.push_back(sup_norm(Z));
        if (q_t != nullptr) {
            const Matrix D = ev.Q - *q_t;
            traj.error_integrand.push_back(weighted_l1(D, rho_ref, p.pi, pi_ref));
            traj.error_integrand_shifted.push_back(shifted_weighted_l1(D, rho_ref, p.pi, pi_ref));
        }
    }
};

inline void finish_kl_ode(FlowTrajectory& traj) {
    const std::size_t n = traj.size();
    traj.residual_kl_ode.assign(n, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t k = 1; k + 1 < n; ++k) {
        const double h1 = traj.times[k] - traj.times[k - 1];
        const double h2 = traj.times[k + 1] - traj.times[k];
        const double dy = -h2 / (h1 * (h1 + h2)) * traj.kl_to_opt[k - 1] +
                          (h2 - h1) / (h1 * h2) * traj.kl_to_opt[k] +
                          h1 / (h2 * (h1 + h2)) * traj.kl_to_opt[k + 1];
        const double model = -traj.tau * traj.kl_to_opt[k] - (1.0 - traj.gamma) * traj.value_gaps[k];
        traj.residual_kl_ode[k] = dy - model;
    }
}

inline FlowTrajectory start_trajectory(const TabularMDP& m, const FlowReference& ref, FlowMode mode) {
    FlowTrajectory traj;
    traj.mode = mode;
    traj.tau = m.tau();
    traj.gamma = m.gamma();
    traj.V_star_rho = ref.V_star_rho;
    return traj;
}

inline void check_shape(const TabularMDP& m, const Matrix& Z) {
    if (Z.rows() != m.n_states() || Z.cols() != m.n_actions()) {
        throw InvalidInput("initial logits must be n_states x n_actions");
    }
    if (!Z.allFinite()) {
        throw InvalidInput("initial logits must be finite");
    }
}

inline Recorder make_recorder(const TabularMDP& m, const FlowReference& ref, FlowTrajectory& traj,
                              const FlowConfig& cfg) {
    Vector rho_ref = cfg.rho_ref ? *cfg.rho_ref : m.rho();
    Vector pi_ref = cfg.pi_ref ? *cfg.pi_ref : m.mu();
    if (rho_ref.size() != m.n_states() || pi_ref.size() != m.n_actions()) {
        throw InvalidInput("reference measures have the wrong size");
    }
    return {m, ref, traj, std::move(rho_ref), broadcast_rows(pi_ref, m.n_states())};
}

} // namespace detail

/// A-priori sup-norm bound on Z_t along the exact mirror flow.
inline double mirror_flow_norm_bound(const TabularMDP& m, double t, double norm_Z0, double v_scale) {
    const double decay = std::exp(-m.tau() * t);
    return decay * norm_Z0 + (1.0 - decay) / m.tau() * (m.cost_norm() + (1.0 + m.gamma()) * v_scale);
}

/// Mirror-descent flow dZ/dt = -(Q + tau Z - V) from Z0.
///
/// Throws IntegratorInstability if ||Z_t|| leaves its a-priori bound.
inline FlowTrajectory integrate_mirror_flow(const TabularMDP& m, const Matrix& Z0, const FlowConfig& cfg,
                                            const FlowReference* reference = nullptr) {
    if (m.unregularised()) {
        throw InvalidInput("mirror flow needs tau > 0");
    }
    detail::check_shape(m, Z0);
    const FlowReference owned = reference ? FlowReference{} : make_reference(m);
    const FlowReference& ref = reference ? *reference : owned;
    FlowTrajectory traj = detail::start_trajectory(m, ref, FlowMode::regularised);
    auto record = detail::make_recorder(m, ref, traj, cfg);

    const double norm_Z0 = sup_norm(Z0);
    const double v0 = sup_norm(evaluate_policy(m, LogitPolicy(Z0, m.mu()), false).V);
    const double v_scale = std::max(v0, sup_norm(ref.V_star));
    const double slack = tolerances().apriori_slack;

    detail::drive(
        Z0, cfg, [&](double, const Matrix& Z) { return mirror_flow_rhs(m, Z); },
        [&](double t, const Matrix& Z) {
            const double bound = mirror_flow_norm_bound(m, t, norm_Z0, v_scale);
            if (sup_norm(Z) > bound + slack * (1.0 + bound)) {
                throw IntegratorInstability("logit norm exceeded its a-priori bound", t);
            }
        },
        [&](double t, const Matrix& Z) {
            const LogitPolicy p(Z, m.mu());
            record(t, Z, p.distribution(), evaluate_policy(m, p), nullptr);
        });
    detail::finish_kl_ode(traj);
    return traj;
}

/// Primal Fisher-Rao flow d pi/dt = -(Q + tau ln dpi/dmu - V) pi from pi0.
/// Snapshots store ln(dpi/dmu) as the logits.
inline FlowTrajectory integrate_fisher_rao_flow(const TabularMDP& m, const PolicyDistribution& pi0,
                                                const FlowConfig& cfg, const FlowReference* reference = nullptr) {
    if (m.unregularised()) {
        throw InvalidInput("Fisher-Rao flow needs tau > 0");
    }
    detail::check_shape(m, pi0.log_density);
    const FlowReference owned = reference ? FlowReference{} : make_reference(m);
    const FlowReference& ref = reference ? *reference : owned;
    FlowTrajectory traj = detail::start_trajectory(m, ref, FlowMode::regularised);
    auto record = detail::make_recorder(m, ref, traj, cfg);

    // rows are renormalised first: off the simplex the row mass grows like e^{Vt}
    auto as_policy = [&](double t, const Matrix& raw) {
        if (raw.minCoeff() <= 0.0) {
            throw IntegratorInstability("policy lost positivity", t);
        }
        const Matrix pi = raw.array().colwise() / raw.rowwise().sum().array();
        PolicyDistribution p{pi, Matrix(pi.rows(), pi.cols())};
        for (Index a = 0; a < pi.cols(); ++a) {
            p.log_density.col(a) = (pi.col(a) / m.mu()(a)).array().log().matrix();
        }
        return p;
    };

    detail::drive(
        pi0.pi, cfg, [&](double t, const Matrix& pi) { return fisher_rao_flow_rhs(m, as_policy(t, pi)); },
        [](double, const Matrix&) {},
        [&](double t, const Matrix& pi) {
            const PolicyDistribution p = as_policy(t, pi);
            record(t, p.log_density, p, evaluate_policy(m, p), nullptr);
        });
    detail::finish_kl_ode(traj);
    return traj;
}

/// Dual approximate flow driven by a supplied Q_t.
inline FlowTrajectory integrate_approximate_flow(const TabularMDP& m, const Matrix& Z0, const FlowConfig& cfg,
                                                 const QSupplier& q_hat, const FlowReference* reference = nullptr) {
    if (m.unregularised()) {
        throw InvalidInput("approximate flow needs tau > 0");
    }
    detail::check_shape(m, Z0);
    const FlowReference owned = reference ? FlowReference{} : make_reference(m);
    const FlowReference& ref = reference ? *reference : owned;
    FlowTrajectory traj = detail::start_trajectory(m, ref, FlowMode::approximate);
    auto record = detail::make_recorder(m, ref, traj, cfg);

    auto supplied = [&](double t, const PolicyDistribution& p, const PolicyEvaluation& ev) {
        Matrix Q_t = q_hat(t, p, ev);
        if (Q_t.rows() != m.n_states() || Q_t.cols() != m.n_actions() || !Q_t.allFinite()) {
            throw InvalidInput("Q supplier returned a malformed matrix at t=" + std::to_string(t));
        }
        return Q_t;
    };

    detail::drive(
        Z0, cfg,
        [&](double t, const Matrix& Z) {
            const LogitPolicy p(Z, m.mu());
            const PolicyEvaluation ev = evaluate_policy(m, p, false);
            return approximate_flow_rhs(m, Z, p.pi(), supplied(t, p.distribution(), ev));
        },
        [](double, const Matrix&) {},
        [&](double t, const Matrix& Z) {
            const LogitPolicy p(Z, m.mu());
            const PolicyEvaluation ev = evaluate_policy(m, p);
            const Matrix Q_t = supplied(t, p.distribution(), ev);
            record(t, Z, p.distribution(), ev, &Q_t);
        });
    detail::finish_kl_ode(traj);
    return traj;
}

/// Unregularised flow dZ/dt = -(Q - V); diagnostics use the hard-max optimum.
inline FlowTrajectory integrate_unregularised_flow(const TabularMDP& m, const Matrix& Z0, const FlowConfig& cfg,
                                                   const FlowReference* reference = nullptr) {
    if (!m.unregularised()) {
        throw InvalidInput("unregularised flow needs an unregularised model (tau = 0)");
    }
    detail::check_shape(m, Z0);
    const FlowReference owned = reference ? FlowReference{} : make_reference(m);
    const FlowReference& ref = reference ? *reference : owned;
    FlowTrajectory traj = detail::start_trajectory(m, ref, FlowMode::unregularised);
    auto record = detail::make_recorder(m, ref, traj, cfg);

    detail::drive(
        Z0, cfg, [&](double, const Matrix& Z) { return unregularised_flow_rhs(m, Z); },
        [](double, const Matrix&) {},
        [&](double t, const Matrix& Z) {
            const PolicyDistribution p = policy_from_logits(Z, m.mu());
            record(t, Z, p, evaluate_policy(m, p), nullptr);
        });
    detail::finish_kl_ode(traj);
    return traj;
}

/// Dispatches on cfg.mode. Approximate mode uses cfg.perturbation (zero if unset).
inline FlowTrajectory integrate_flow(const TabularMDP& m, const Matrix& Z0, const FlowConfig& cfg,
                                     const FlowReference* reference = nullptr) {
    switch (cfg.mode) {
    case FlowMode::regularised:
        return integrate_mirror_flow(m, Z0, cfg, reference);
    case FlowMode::unregularised:
        return integrate_unregularised_flow(m, Z0, cfg, reference);
    case FlowMode::approximate:
        return integrate_approximate_flow(m, Z0, cfg, perturbed_q(m, cfg.perturbation.value_or(PerturbationSpec{})),
                                          reference);
    }
    throw InvalidInput("unknown flow mode");
}

/// Largest sup-norm distance between the policy snapshots of two trajectories on the same grid.
inline double max_policy_deviation(const FlowTrajectory& a, const FlowTrajectory& b) {
    if (a.size() != b.size()) {
        throw InvalidInput("trajectories have different snapshot grids");
    }
    double worst = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        worst = std::max(worst, sup_norm(Matrix(a.pi_snapshots[k] - b.pi_snapshots[k])));
    }
    return worst;
}

} // namespace frmdp

#pragma once

#include "frmdp/policy.hpp"

#include <optional>
#include <vector>

namespace frmdp {

/// Q(s,a) = c(s,a) + gamma * sum_s' V(s') P(s'|s,a).
inline Matrix q_from_values(const TabularMDP& m, const Vector& V) {
    const Vector pv = m.P() * V;
    Matrix Q = m.cost();
    for (Index s = 0; s < m.n_states(); ++s) {
        for (Index a = 0; a < m.n_actions(); ++a) {
            Q(s, a) += m.gamma() * pv(m.row(s, a));
        }
    }
    return Q;
}

/// Softmin over actions: -tau ln sum_a exp(-Q(s,a)/tau) mu(a), max-shifted.
inline Vector soft_min(const Matrix& Q, const Vector& mu, double tau) {
    return -tau * log_partition(-Q / tau, mu);
}

/// Soft Bellman operator (T_tau V)(s) = -tau ln sum_a exp(-(c + gamma P V)(s,a)/tau) mu(a).
inline Vector soft_bellman_operator(const TabularMDP& m, const Vector& V) {
    if (V.size() != m.n_states() || !V.allFinite()) {
        throw InvalidInput("value vector must be finite with n_states entries");
    }
    if (m.unregularised()) {
        throw InvalidInput("soft Bellman operator needs tau > 0");
    }
    return soft_min(q_from_values(m, V), m.mu(), m.tau());
}

struct OptimalSolution {
    Vector V_star;
    Matrix Q_star;
    PolicyDistribution pi_star;
    Matrix Z_star; ///< -(Q* - V*)/tau
    int iterations = 0;
    double residual = 0.0; ///< ||T V* - V*||_inf at the returned V*
};

namespace detail {
inline OptimalSolution assemble_optimal(const TabularMDP& m, Vector V, int iterations) {
    OptimalSolution sol;
    sol.Q_star = q_from_values(m, V);
    sol.Z_star = -(sol.Q_star.colwise() - V) / m.tau();
    sol.pi_star = policy_from_logits(sol.Z_star, m.mu());
    sol.residual = sup_norm(Vector(soft_bellman_operator(m, V) - V));
    sol.V_star = std::move(V);
    sol.iterations = iterations;
    return sol;
}
} // namespace detail

/**
 * Soft value iteration from V0 (zero by default).
 *
 * Stops once ||T V_k - V_k|| <= tol (1 - gamma) / gamma, which by contraction
 * guarantees ||V_{k+1} - V*|| <= tol.
 */
inline OptimalSolution solve_optimal(const TabularMDP& m, double tol = 1e-10, int max_iter = 1000000,
                                     std::optional<Vector> V0 = std::nullopt) {
    if (!(tol > 0.0)) {
        throw InvalidInput("tolerance must be positive");
    }
    Vector V = V0 ? *V0 : Vector::Zero(m.n_states());
    const double threshold = m.gamma() > 0.0 ? tol * (1.0 - m.gamma()) / m.gamma() : kInf;
    double step = kInf;
    for (int k = 1; k <= max_iter; ++k) {
        Vector next = soft_bellman_operator(m, V);
        step = sup_norm(Vector(next - V));
        V = std::move(next);
        if (step <= threshold) {
            return detail::assemble_optimal(m, std::move(V), k);
        }
    }
    throw ConvergenceFailure("soft value iteration exceeded max_iter", step);
}

/// Soft policy-iteration sweeps started from `sol.pi_star`. Each sweep
/// evaluates the current policy exactly, so the returned V* is accurate to
/// rounding instead of to the value-iteration tolerance.
inline OptimalSolution polish_optimal(const TabularMDP& m, OptimalSolution sol, int sweeps = 3);

struct PolicyEvaluation {
    Vector V;
    Matrix Q;
    Matrix A; ///< Q minus its pi-average per state
    double V_rho = 0.0;
    Occupancy occ;
};

/// Exact evaluation: solves V = r_pi + gamma P_pi V with r_pi = sum_a (c + tau ln dpi/dmu) pi.
/// The occupancy kernel is skipped when `with_occupancy` is false.
inline PolicyEvaluation evaluate_policy(const TabularMDP& m, const PolicyDistribution& p,
                                        bool with_occupancy = true) {
    const Index S = m.n_states();
    const Index A = m.n_actions();
    Vector r = Vector::Zero(S);
    for (Index s = 0; s < S; ++s) {
        for (Index a = 0; a < A; ++a) {
            const double w = p.pi(s, a);
            if (w == 0.0) {
                continue;
            }
            double cost = m.cost()(s, a);
            if (m.tau() > 0.0) {
                cost += m.tau() * p.log_density(s, a);
            }
            r(s) += w * cost;
        }
    }
    const Matrix Ppi = policy_transition(m, p.pi);
    const Eigen::PartialPivLU<Matrix> lu(Matrix::Identity(S, S) - m.gamma() * Ppi);
    PolicyEvaluation ev;
    ev.V = lu.solve(r);
    ev.Q = q_from_values(m, ev.V);
    const Vector baseline = (ev.Q.cwiseProduct(p.pi)).rowwise().sum();
    ev.A = ev.Q.colwise() - baseline;
    ev.V_rho = m.rho().dot(ev.V);
    if (with_occupancy) {
        ev.occ.kernel = (1.0 - m.gamma()) * lu.inverse();
        ev.occ.d_rho = ev.occ.kernel.transpose() * m.rho();
    }
    return ev;
}

inline PolicyEvaluation evaluate_policy(const TabularMDP& m, const LogitPolicy& p, bool with_occupancy = true) {
    return evaluate_policy(m, p.distribution(), with_occupancy);
}

/// Flat derivative Q + tau ln(dpi/dmu) - V under the state-dependent pairing.
inline Matrix flat_derivative(const TabularMDP& m, const PolicyDistribution& p, const PolicyEvaluation& ev) {
    Matrix G = ev.Q.colwise() - ev.V;
    if (m.tau() > 0.0) {
        G += m.tau() * p.log_density;
    }
    return G;
}

inline Matrix flat_derivative(const TabularMDP& m, const LogitPolicy& p) {
    return flat_derivative(m, p.distribution(), evaluate_policy(m, p));
}

inline OptimalSolution polish_optimal(const TabularMDP& m, OptimalSolution sol, int sweeps) {
    for (int k = 0; k < sweeps; ++k) {
        OptimalSolution next =
            detail::assemble_optimal(m, evaluate_policy(m, sol.pi_star, false).V, sol.iterations);
        if (!(next.residual < sol.residual)) {
            break;
        }
        sol = std::move(next);
    }
    return sol;
}

/// Reference optimum used by all diagnostics.
inline OptimalSolution reference_optimal(const TabularMDP& m) {
    return polish_optimal(m, solve_optimal(m, tolerances().diagnostics_solve));
}

struct PerformanceDifference {
    double lhs = 0.0; ///< V^pi(rho) - V^pi'(rho)
    double rhs = 0.0; ///< occupancy-weighted first-order term plus tau KL
};

inline PerformanceDifference performance_difference(const TabularMDP& m, const LogitPolicy& pi,
                                                    const LogitPolicy& pi_prime) {
    const PolicyEvaluation ev = evaluate_policy(m, pi);
    const PolicyEvaluation ev_prime = evaluate_policy(m, pi_prime);
    const Matrix& p = pi.pi();
    const Matrix& q = pi_prime.pi();
    const Matrix integrand = ev_prime.Q + m.tau() * pi_prime.log_density();
    double rhs = 0.0;
    for (Index s = 0; s < m.n_states(); ++s) {
        double inner = integrand.row(s).dot(p.row(s) - q.row(s));
        double kl = 0.0;
        for (Index a = 0; a < m.n_actions(); ++a) {
            kl += p(s, a) * (pi.log_density()(s, a) - pi_prime.log_density()(s, a));
        }
        rhs += ev.occ.d_rho(s) * (inner + m.tau() * kl);
    }
    return {ev.V_rho - ev_prime.V_rho, rhs / (1.0 - m.gamma())};
}

// ---------------------------------------------------------------------------
// Unregularised reference solution (tau = 0).

struct HardOptimalSolution {
    Vector V_star;
    Matrix Q_star;
    std::vector<Index> actions; ///< an optimal deterministic action per state
    Matrix pi_star;             ///< one-hot rows
    int iterations = 0;
};

/// Policy iteration on the plain discounted cost; exact up to one linear solve per sweep.
inline HardOptimalSolution solve_unregularised_optimal(const TabularMDP& m, int max_iter = 10000) {
    const Index S = m.n_states();
    const Index A = m.n_actions();
    HardOptimalSolution sol;
    sol.actions.assign(static_cast<std::size_t>(S), 0);
    Matrix pi = Matrix::Zero(S, A);
    auto evaluate = [&](const Matrix& policy) {
        Vector r = (m.cost().cwiseProduct(policy)).rowwise().sum();
        return Vector((Matrix::Identity(S, S) - m.gamma() * policy_transition(m, policy)).partialPivLu().solve(r));
    };
    for (Index s = 0; s < S; ++s) {
        pi(s, 0) = 1.0;
    }
    for (int k = 1; k <= max_iter; ++k) {
        const Vector V = evaluate(pi);
        const Matrix Q = q_from_values(m, V);
        bool stable = true;
        for (Index s = 0; s < S; ++s) {
            const Index current = sol.actions[static_cast<std::size_t>(s)];
            Index best = current;
            for (Index a = 0; a < A; ++a) {
                if (Q(s, a) < Q(s, best) - 1e-13 * (1.0 + std::abs(Q(s, best)))) {
                    best = a;
                }
            }
            if (best != current) {
                stable = false;
                sol.actions[static_cast<std::size_t>(s)] = best;
                pi.row(s).setZero();
                pi(s, best) = 1.0;
            }
        }
        if (stable) {
            sol.V_star = V;
            sol.Q_star = Q;
            sol.pi_star = pi;
            sol.iterations = k;
            return sol;
        }
    }
    throw ConvergenceFailure("policy iteration did not stabilise", 0.0);
}

} // namespace frmdp

#pragma once

#include "frmdp/bounds.hpp"
#include "frmdp/flow.hpp"

#include <Eigen/Eigenvalues>

namespace frmdp {

/// Features g(s, a) in R^N, stored as an (S*A) x N matrix with row s*A + a.
class FeatureMap {
  public:
    FeatureMap(Matrix g, Index n_states, Index n_actions) : g_(std::move(g)), S_(n_states), A_(n_actions) {
        if (g_.rows() != S_ * A_ || g_.cols() < 1) {
            throw InvalidInput("feature matrix must have n_states*n_actions rows and at least one column");
        }
        if (!g_.allFinite()) {
            throw InvalidInput("features must be finite");
        }
        g_max_ = g_.rowwise().norm().maxCoeff();
    }

    /// g(s, a) = e_{s*A + a}.
    static FeatureMap one_hot(Index S, Index A) { return {Matrix::Identity(S * A, S * A), S, A}; }

    /// g(s, a) = value for every pair.
    static FeatureMap constant(Index S, Index A, const Vector& value) {
        return {Matrix(value.transpose().replicate(S * A, 1)), S, A};
    }

    Index dim() const { return g_.cols(); }
    Index n_states() const { return S_; }
    Index n_actions() const { return A_; }
    const Matrix& matrix() const { return g_; }
    double g_max() const { return g_max_; }

    /// Z(s, a) = <theta, g(s, a)>.
    Matrix logits(const Vector& theta) const {
        const Vector flat = g_ * theta;
        return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(flat.data(), S_,
                                                                                                         A_);
    }

  private:
    Matrix g_;
    Index S_;
    Index A_;
    double g_max_ = 0.0;
};

/// Log-linear policy pi_theta = softmax(<theta, g>) relative to mu.
class FeaturePolicy {
  public:
    FeaturePolicy(const FeatureMap& g, Vector theta, const Vector& mu)
        : theta_(std::move(theta)), policy_(check(g, theta_), mu) {
        const Index A = g.n_actions();
        centered_ = g.matrix();
        for (Index s = 0; s < g.n_states(); ++s) {
            Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(g.dim());
            for (Index a = 0; a < A; ++a) {
                mean += policy_.pi()(s, a) * g.matrix().row(s * A + a);
            }
            centered_.middleRows(s * A, A).rowwise() -= mean;
        }
    }

    const Vector& theta() const { return theta_; }
    const LogitPolicy& policy() const { return policy_; }
    const Matrix& logits() const { return policy_.logits(); }
    const Matrix& pi() const { return policy_.pi(); }
    /// g_pi(s, a) = g(s, a) - sum_a' g(s, a') pi(a'|s), same layout as the feature matrix.
    const Matrix& centered() const { return centered_; }

  private:
    static Matrix check(const FeatureMap& g, const Vector& theta) {
        if (theta.size() != g.dim() || !theta.allFinite()) {
            throw InvalidInput("theta must be finite with the feature dimension");
        }
        return g.logits(theta);
    }

    Vector theta_;
    LogitPolicy policy_;
    Matrix centered_;
};

namespace detail {
/// Flattened weights d(s) pi(a|s), row-major like the feature matrix.
inline Vector pair_weights(const Vector& d, const Matrix& pi) {
    Vector w(pi.size());
    for (Index s = 0; s < pi.rows(); ++s) {
        for (Index a = 0; a < pi.cols(); ++a) {
            w(s * pi.cols() + a) = d(s) * pi(s, a);
        }
    }
    return w;
}

inline Vector flatten(const Matrix& M) {
    Vector v(M.size());
    for (Index s = 0; s < M.rows(); ++s) {
        for (Index a = 0; a < M.cols(); ++a) {
            v(s * M.cols() + a) = M(s, a);
        }
    }
    return v;
}
} // namespace detail

/// F = sum_s d(s) sum_a pi(a|s) g_pi g_pi^T, with d = d^{pi_theta}_rho.
inline Matrix fisher_operator(const FeaturePolicy& fp, const Vector& d_rho) {
    const Matrix& C = fp.centered();
    const Vector w = detail::pair_weights(d_rho, fp.pi());
    Matrix F = C.transpose() * w.asDiagonal() * C;
    return 0.5 * (F + F.transpose());
}

inline Matrix fisher_operator(const TabularMDP& m, const FeaturePolicy& fp) {
    return fisher_operator(fp, occupancy(m, fp.pi()).d_rho);
}

/// Minimiser of w^T G w - 2 h^T w + lambda |w|^2 over |w| <= R, with multiplier nu.
struct RidgeSolution {
    Vector w;
    double nu = 0.0;
    bool constrained = false;
};

/// Solves (G + lambda I) w = h; if |w| > R, bisects for nu with |(G + (lambda+nu) I)^{-1} h| = R.
inline RidgeSolution solve_ball_ridge(const Matrix& G, const Vector& h, double R, double lambda) {
    if (!(R > 0.0) || !(lambda > 0.0)) {
        throw InvalidInput("ridge solve needs R > 0 and lambda > 0");
    }
    const Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (G + G.transpose()));
    const Vector coeff = eig.eigenvectors().transpose() * h;
    const Vector ev = eig.eigenvalues().cwiseMax(0.0);
    auto weights = [&](double nu) { return Vector(coeff.array() / (ev.array() + lambda + nu)); };
    RidgeSolution out;
    Vector c = weights(0.0);
    if (c.norm() <= R) {
        out.w = eig.eigenvectors() * c;
        return out;
    }
    double lo = 0.0;
    double hi = h.norm() / R;
    while (weights(hi).norm() > R) {
        lo = hi;
        hi *= 2.0;
    }
    const double tol = tolerances().kkt_radius * std::max(1.0, R);
    for (int it = 0; it < 300; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) {
            break;
        }
        const double r = weights(mid).norm();
        if (r > R) {
            lo = mid;
        } else {
            hi = mid;
            if (R - r <= tol) {
                break;
            }
        }
    }
    out.nu = hi;
    out.constrained = true;
    out.w = eig.eigenvectors() * weights(hi);
    return out;
}

/// Moments of the compatible regression at theta.
struct NpgMoments {
    PolicyEvaluation ev;
    Matrix F;
    Vector h; ///< sum d pi A g_pi
};

inline NpgMoments npg_moments(const TabularMDP& m, const FeaturePolicy& fp) {
    NpgMoments out{evaluate_policy(m, fp.policy()), {}, {}};
    const Vector w = detail::pair_weights(out.ev.occ.d_rho, fp.pi());
    out.F = fisher_operator(fp, out.ev.occ.d_rho);
    out.h = fp.centered().transpose() * w.cwiseProduct(detail::flatten(out.ev.A));
    return out;
}

/// argmin_{|w| <= R} sum d pi |A - <w, g_pi>|^2 + lambda |w|^2.
inline Vector solve_regularized_loss(const TabularMDP& m, const FeaturePolicy& fp, double R, double lambda) {
    const NpgMoments mom = npg_moments(m, fp);
    return solve_ball_ridge(mom.F, mom.h, R, lambda).w;
}

/// grad_theta V^{pi_theta}(rho) = (1-gamma)^{-1} sum d pi (Q + tau ln dpi/dmu) g_pi.
inline Vector grad_theta_value(const TabularMDP& m, const FeaturePolicy& fp) {
    const PolicyEvaluation ev = evaluate_policy(m, fp.policy());
    const Vector w = detail::pair_weights(ev.occ.d_rho, fp.pi());
    const Vector target = detail::flatten(ev.Q + m.tau() * fp.policy().log_density());
    return fp.centered().transpose() * w.cwiseProduct(target) / (1.0 - m.gamma());
}

/// d/dt pi_theta(a|s) = pi(a|s) <g_pi(s, a), theta_dot>.
inline Matrix npg_policy_velocity(const FeaturePolicy& fp, const Vector& theta_dot) {
    const Vector flat = fp.centered() * theta_dot;
    Matrix out(fp.pi().rows(), fp.pi().cols());
    for (Index s = 0; s < out.rows(); ++s) {
        for (Index a = 0; a < out.cols(); ++a) {
            out(s, a) = fp.pi()(s, a) * flat(s * out.cols() + a);
        }
    }
    return out;
}

/// R_t = R0 (1 + R_growth t), lambda_t = lambda0 / (1 + lambda_decay t).
struct NpgConfig {
    double R0 = 10.0;
    double R_growth = 1.0;
    double lambda0 = 1e-3;
    double lambda_decay = 1.0;
    double t_end = 1.0;
    double dt = 0.01;
    Integrator integrator = Integrator::rk4;
    int snapshot_every = 1;
    std::optional<Vector> pi_ref; ///< reference action measure, default mu

    double R(double t) const { return R0 * (1.0 + R_growth * t); }
    double lambda(double t) const { return lambda0 / (1.0 + lambda_decay * t); }

    void validate() const {
        if (!(R0 > 0.0) || !(R_growth >= 0.0) || !(lambda0 > 0.0) || !(lambda_decay >= 0.0)) {
            throw InvalidInput("NPG schedules need R0 > 0, lambda0 > 0 and nonnegative rates");
        }
        flow().validate();
    }

    FlowConfig flow() const {
        FlowConfig f;
        f.t_end = t_end;
        f.dt = dt;
        f.integrator = integrator;
        f.snapshot_every = snapshot_every;
        f.pi_ref = pi_ref;
        return f;
    }
};

struct NpgTrajectory {
    FlowTrajectory flow; ///< induced policies and exact-flow diagnostics
    std::vector<Vector> theta;
    std::vector<Vector> w;
    std::vector<double> approx_error; ///< |A - <w, g_pi>| in L1(rho x (pi + pi_ref)/2)
    std::vector<double> norm_theta;
    std::vector<double> norm_w;
    std::vector<double> bound_lhs; ///< running minimum of the value gap
    std::vector<double> bound_rhs;
    double kappa = 0.0;
};

/// d theta/dt = -(w_t(theta) + tau theta), w_t from the ball-constrained ridge problem.
///
/// Throws IntegratorInstability if |theta_t| leaves |theta_0| + sup R / tau.
inline NpgTrajectory integrate_npg_flow(const TabularMDP& m, const FeatureMap& g, const Vector& theta0,
                                        const NpgConfig& cfg, const FlowReference* reference = nullptr) {
    if (m.unregularised()) {
        throw InvalidInput("NPG flow needs tau > 0");
    }
    if (g.n_states() != m.n_states() || g.n_actions() != m.n_actions()) {
        throw InvalidInput("feature map does not match the model");
    }
    cfg.validate();
    const FlowReference owned = reference ? FlowReference{} : make_reference(m);
    const FlowReference& ref = reference ? *reference : owned;
    const FlowConfig fcfg = cfg.flow();

    NpgTrajectory out;
    out.flow = detail::start_trajectory(m, ref, FlowMode::approximate);
    auto record = detail::make_recorder(m, ref, out.flow, fcfg);
    out.kappa = concentrability(ref.d_star, ref.pi_star, m.rho(), record.pi_ref);

    auto w_at = [&](double t, const NpgMoments& mom) {
        return solve_ball_ridge(mom.F, mom.h, cfg.R(t), cfg.lambda(t)).w;
    };
    auto as_vector = [](const Matrix& x) { return Vector(x.col(0)); };

    const double norm0 = theta0.norm();
    const double slack = tolerances().apriori_slack;
    detail::drive(
        Matrix(theta0), fcfg,
        [&](double t, const Matrix& x) {
            const FeaturePolicy fp(g, as_vector(x), m.mu());
            const NpgMoments mom = npg_moments(m, fp);
            return Matrix(-(w_at(t, mom) + m.tau() * fp.theta()));
        },
        [&](double t, const Matrix& x) {
            const double bound = norm0 + std::max(cfg.R(0.0), cfg.R(t)) / m.tau();
            if (x.col(0).norm() > bound + slack * (1.0 + bound)) {
                throw IntegratorInstability("parameter norm exceeded its a-priori bound", t);
            }
        },
        [&](double t, const Matrix& x) {
            const FeaturePolicy fp(g, as_vector(x), m.mu());
            const NpgMoments mom = npg_moments(m, fp);
            const Vector w = w_at(t, mom);
            const Vector fitted = fp.centered() * w;
            Matrix D(m.n_states(), m.n_actions());
            for (Index s = 0; s < m.n_states(); ++s) {
                for (Index a = 0; a < m.n_actions(); ++a) {
                    D(s, a) = mom.ev.A(s, a) - fitted(s * m.n_actions() + a);
                }
            }
            record(t, fp.logits(), fp.policy().distribution(), mom.ev, nullptr);
            out.theta.push_back(fp.theta());
            out.w.push_back(w);
            out.approx_error.push_back(detail::weighted_l1(D, m.rho(), fp.pi(), record.pi_ref));
            out.norm_theta.push_back(fp.theta().norm());
            out.norm_w.push_back(w.norm());
        });
    detail::finish_kl_ode(out.flow);
    out.bound_lhs = running_min(out.flow.value_gaps);
    out.bound_rhs = perturbed_gap_bound(out.flow.times, out.approx_error, out.flow.kl0, m.tau(), m.gamma(), out.kappa);
    return out;
}

} // namespace frmdp

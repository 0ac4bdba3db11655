#pragma once

#include "frmdp/mdp.hpp"

namespace frmdp {

/// Conditional action distribution with its log-density against mu.
///
/// Entries where mu(a) = 0 (allowed only for unregularised models) carry
/// pi = 0 and log_density = -inf.
struct PolicyDistribution {
    Matrix pi;          ///< S x A, rows sum to one
    Matrix log_density; ///< ln(d pi / d mu)
};

/// Per-state log-partition Phi(Z)(s) = ln sum_a exp(Z(s,a)) mu(a), max-shifted.
inline Vector log_partition(const Matrix& Z, const Vector& mu) {
    Vector phi(Z.rows());
    for (Index s = 0; s < Z.rows(); ++s) {
        double m = -kInf;
        for (Index a = 0; a < Z.cols(); ++a) {
            if (mu(a) > 0.0) {
                m = std::max(m, Z(s, a));
            }
        }
        double acc = 0.0;
        for (Index a = 0; a < Z.cols(); ++a) {
            if (mu(a) > 0.0) {
                acc += std::exp(Z(s, a) - m) * mu(a);
            }
        }
        phi(s) = m + std::log(acc);
    }
    return phi;
}

/// Softmax image of logits Z relative to mu: pi(a|s) = e^{Z(s,a)} mu(a) / sum_a' e^{Z(s,a')} mu(a').
inline PolicyDistribution policy_from_logits(const Matrix& Z, const Vector& mu) {
    if (Z.cols() != mu.size()) {
        throw InvalidInput("logit matrix has the wrong number of actions");
    }
    if (!Z.allFinite()) {
        throw InvalidInput("logits must be finite");
    }
    const Vector phi = log_partition(Z, mu);
    PolicyDistribution out{Matrix(Z.rows(), Z.cols()), Matrix(Z.rows(), Z.cols())};
    for (Index s = 0; s < Z.rows(); ++s) {
        for (Index a = 0; a < Z.cols(); ++a) {
            if (mu(a) > 0.0) {
                const double ld = Z(s, a) - phi(s);
                out.log_density(s, a) = ld;
                out.pi(s, a) = std::exp(ld) * mu(a);
            } else {
                out.log_density(s, a) = -kInf;
                out.pi(s, a) = 0.0;
            }
        }
    }
    return out;
}

/// Policy stored canonically by its logits. The induced distribution is
/// computed once at construction.
class LogitPolicy {
  public:
    LogitPolicy(Matrix Z, const Vector& mu) : Z_(std::move(Z)), dist_(policy_from_logits(Z_, mu)) {
        phi_ = frmdp::log_partition(Z_, mu);
    }

    const Matrix& logits() const { return Z_; }
    const Vector& log_partition() const { return phi_; }
    const PolicyDistribution& distribution() const { return dist_; }
    const Matrix& pi() const { return dist_.pi; }
    const Matrix& log_density() const { return dist_.log_density; }

  private:
    Matrix Z_;
    PolicyDistribution dist_;
    Vector phi_;
};

/// Accepts a raw probability matrix at an API boundary.
///
/// Regularised models need pi to charge every action that mu charges;
/// a zero there raises DomainError.
inline PolicyDistribution policy_from_probabilities(const Matrix& pi, const Vector& mu, bool regularised = true) {
    if (pi.cols() != mu.size()) {
        throw InvalidInput("policy matrix has the wrong number of actions");
    }
    const double tol = tolerances().construction;
    PolicyDistribution out{pi, Matrix(pi.rows(), pi.cols())};
    for (Index s = 0; s < pi.rows(); ++s) {
        if (pi.row(s).minCoeff() < 0.0 || std::abs(pi.row(s).sum() - 1.0) > tol) {
            throw InvalidInput("policy row " + std::to_string(s) + " is not a probability vector");
        }
        for (Index a = 0; a < pi.cols(); ++a) {
            if (mu(a) > 0.0) {
                if (pi(s, a) <= 0.0) {
                    if (regularised) {
                        throw DomainError("policy has zero mass where mu > 0 at (s=" + std::to_string(s) +
                                          ", a=" + std::to_string(a) + ")");
                    }
                    out.log_density(s, a) = -kInf;
                } else {
                    out.log_density(s, a) = std::log(pi(s, a) / mu(a));
                }
            } else {
                if (pi(s, a) > 0.0) {
                    throw DomainError("policy is not absolutely continuous w.r.t. mu at (s=" + std::to_string(s) +
                                      ", a=" + std::to_string(a) + ")");
                }
                out.log_density(s, a) = -kInf;
            }
        }
    }
    return out;
}

inline const Matrix& log_density(const PolicyDistribution& p) { return p.log_density; }

/// Logits of a distribution that charges every action mu charges.
inline LogitPolicy to_logits(const PolicyDistribution& p, const Vector& mu) {
    if (!p.log_density.allFinite()) {
        throw DomainError("policy with zero mass has no finite logits");
    }
    return {p.log_density, mu};
}

/// Sum_s w(s) KL(p(.|s) | q(.|s)). Returns +inf when p is not absolutely
/// continuous with respect to q on a weighted state.
inline double kl_policies(const Matrix& p, const Matrix& q, const Vector& weights) {
    double total = 0.0;
    for (Index s = 0; s < p.rows(); ++s) {
        if (weights(s) == 0.0) {
            continue;
        }
        double kl = 0.0;
        for (Index a = 0; a < p.cols(); ++a) {
            if (p(s, a) <= 0.0) {
                continue;
            }
            if (q(s, a) <= 0.0) {
                return kInf;
            }
            kl += p(s, a) * std::log(p(s, a) / q(s, a));
        }
        total += weights(s) * std::max(kl, 0.0);
    }
    return total;
}

inline double kl_policies(const PolicyDistribution& p, const PolicyDistribution& q, const Vector& weights) {
    return kl_policies(p.pi, q.pi, weights);
}

/// Sum_s w(s) ||p(.|s) - q(.|s)||_1^2 (squared total-variation norm of the signed measure).
inline double squared_tv(const Matrix& p, const Matrix& q, const Vector& weights) {
    double total = 0.0;
    for (Index s = 0; s < p.rows(); ++s) {
        const double tv = (p.row(s) - q.row(s)).cwiseAbs().sum();
        total += weights(s) * tv * tv;
    }
    return total;
}

/// State transition matrix under pi: P_pi(s, s') = sum_a pi(a|s) P(s'|s,a).
inline Matrix policy_transition(const TabularMDP& m, const Matrix& pi) {
    const Index S = m.n_states();
    Matrix Ppi = Matrix::Zero(S, S);
    for (Index s = 0; s < S; ++s) {
        for (Index a = 0; a < m.n_actions(); ++a) {
            if (pi(s, a) != 0.0) {
                Ppi.row(s) += pi(s, a) * m.P().row(m.row(s, a));
            }
        }
    }
    return Ppi;
}

struct Occupancy {
    Matrix kernel; ///< row s is d^pi(.|s)
    Vector d_rho;  ///< sum_s rho(s) d^pi(.|s)
};

/// Discounted occupancy kernel d = (1 - gamma) (I - gamma P_pi)^{-1}, by one dense LU solve.
inline Occupancy occupancy(const TabularMDP& m, const Matrix& pi) {
    const Index S = m.n_states();
    const Matrix Ppi = policy_transition(m, pi);
    const Matrix lhs = Matrix::Identity(S, S) - m.gamma() * Ppi;
    Occupancy out;
    out.kernel = (1.0 - m.gamma()) * lhs.partialPivLu().inverse();
    out.d_rho = out.kernel.transpose() * m.rho();
    return out;
}

inline Occupancy occupancy(const TabularMDP& m, const PolicyDistribution& p) { return occupancy(m, p.pi); }

} // namespace frmdp

#pragma once

#include "frmdp/core.hpp"

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace frmdp {

/**
 * Finite entropy-regularised MDP (P, c, gamma, tau, mu, rho).
 *
 * Transitions are stored as an (S*A) x S row-stochastic matrix whose row
 * `s * A + a` is P(.|s, a). The model is validated on construction and is
 * immutable afterwards.
 *
 * With `unregularised` set, tau must be zero and mu may have zero entries; the
 * model then describes the plain discounted problem and mu only fixes the
 * support of softmax policies.
 */
class TabularMDP {
  public:
    TabularMDP(Matrix transitions, Matrix cost, double gamma, double tau, Vector mu, Vector rho,
               bool unregularised = false)
        : P_(std::move(transitions)), c_(std::move(cost)), gamma_(gamma), tau_(tau), mu_(std::move(mu)),
          rho_(std::move(rho)), unregularised_(unregularised) {
        validate();
    }

    Index n_states() const { return c_.rows(); }
    Index n_actions() const { return c_.cols(); }
    Index row(Index s, Index a) const { return s * n_actions() + a; }

    const Matrix& P() const { return P_; }
    const Matrix& cost() const { return c_; }
    double gamma() const { return gamma_; }
    double tau() const { return tau_; }
    const Vector& mu() const { return mu_; }
    const Vector& rho() const { return rho_; }
    bool unregularised() const { return unregularised_; }

    double cost_norm() const { return sup_norm(c_); }

    /// Same model with a different initial distribution.
    TabularMDP with_rho(Vector rho) const { return {P_, c_, gamma_, tau_, mu_, std::move(rho), unregularised_}; }
    TabularMDP with_tau(double tau, bool unregularised = false) const {
        return {P_, c_, gamma_, tau, mu_, rho_, unregularised};
    }

  private:
    void validate() const {
        const double tol = tolerances().construction;
        const Index S = c_.rows();
        const Index A = c_.cols();
        if (S < 1 || A < 1) {
            throw InvalidInput("n_states and n_actions must be positive");
        }
        if (P_.rows() != S * A || P_.cols() != S) {
            throw InvalidInput("P must have shape (n_states*n_actions) x n_states");
        }
        if (mu_.size() != A) {
            throw InvalidInput("mu must have n_actions entries");
        }
        if (rho_.size() != S) {
            throw InvalidInput("rho must have n_states entries");
        }
        if (!P_.allFinite() || !c_.allFinite() || !mu_.allFinite() || !rho_.allFinite()) {
            throw InvalidInput("model contains non-finite entries");
        }
        for (Index s = 0; s < S; ++s) {
            for (Index a = 0; a < A; ++a) {
                const auto r = P_.row(s * A + a);
                if (r.minCoeff() < 0.0) {
                    throw InvalidInput(index_msg("P row has a negative entry", s, a));
                }
                if (std::abs(r.sum() - 1.0) > tol) {
                    throw InvalidInput(index_msg("P row does not sum to 1", s, a));
                }
            }
        }
        if (std::abs(mu_.sum() - 1.0) > tol) {
            throw InvalidInput("mu does not sum to 1");
        }
        for (Index a = 0; a < A; ++a) {
            if (mu_(a) < 0.0 || (!unregularised_ && mu_(a) <= 0.0)) {
                throw InvalidInput("mu must be strictly positive, violated at action " + std::to_string(a));
            }
        }
        if (mu_.maxCoeff() <= 0.0) {
            throw InvalidInput("mu has no mass");
        }
        if (std::abs(rho_.sum() - 1.0) > tol) {
            throw InvalidInput("rho does not sum to 1");
        }
        for (Index s = 0; s < S; ++s) {
            if (rho_(s) < 0.0) {
                throw InvalidInput("rho has a negative entry at state " + std::to_string(s));
            }
        }
        if (!(gamma_ >= 0.0 && gamma_ < 1.0)) {
            throw InvalidInput("gamma must lie in [0, 1)");
        }
        if (unregularised_) {
            if (tau_ != 0.0) {
                throw InvalidInput("unregularised models require tau = 0");
            }
        } else if (!(tau_ > 0.0) || !std::isfinite(tau_)) {
            throw InvalidInput("tau must be > 0 (set unregularised for tau = 0)");
        }
    }

    static std::string index_msg(const char* what, Index s, Index a) {
        std::ostringstream os;
        os << what << " at (s=" << s << ", a=" << a << ")";
        return os.str();
    }

    Matrix P_;
    Matrix c_;
    double gamma_;
    double tau_;
    Vector mu_;
    Vector rho_;
    bool unregularised_;
};

// ---------------------------------------------------------------------------
// JSON schema:
// { "n_states", "n_actions", "P": [[[..]]], "c": [[..]], "gamma", "tau", "mu", "rho",
//   "unregularised" (optional bool) }

inline TabularMDP mdp_from_json(const nlohmann::json& j) {
    try {
        const auto S = j.at("n_states").get<Index>();
        const auto A = j.at("n_actions").get<Index>();
        if (S < 1 || A < 1) {
            throw InvalidInput("n_states and n_actions must be positive");
        }
        const auto& jp = j.at("P");
        const auto& jc = j.at("c");
        if (static_cast<Index>(jp.size()) != S || static_cast<Index>(jc.size()) != S) {
            throw InvalidInput("P and c must have n_states outer entries");
        }
        Matrix P(S * A, S);
        Matrix c(S, A);
        for (Index s = 0; s < S; ++s) {
            if (static_cast<Index>(jp[s].size()) != A || static_cast<Index>(jc[s].size()) != A) {
                throw InvalidInput("P[" + std::to_string(s) + "] and c[" + std::to_string(s) +
                                   "] must have n_actions entries");
            }
            for (Index a = 0; a < A; ++a) {
                const auto& row = jp[s][a];
                if (static_cast<Index>(row.size()) != S) {
                    throw InvalidInput("P[" + std::to_string(s) + "][" + std::to_string(a) +
                                       "] must have n_states entries");
                }
                for (Index t = 0; t < S; ++t) {
                    P(s * A + a, t) = row[t].get<double>();
                }
                c(s, a) = jc[s][a].get<double>();
            }
        }
        auto vec = [](const nlohmann::json& arr, Index n, const char* name) {
            if (static_cast<Index>(arr.size()) != n) {
                throw InvalidInput(std::string(name) + " has the wrong length");
            }
            Vector v(n);
            for (Index i = 0; i < n; ++i) {
                v(i) = arr[i].get<double>();
            }
            return v;
        };
        const bool unreg = j.value("unregularised", false);
        return {P, c, j.at("gamma").get<double>(), j.at("tau").get<double>(), vec(j.at("mu"), A, "mu"),
                vec(j.at("rho"), S, "rho"), unreg};
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("malformed MDP JSON: ") + e.what());
    }
}

inline nlohmann::json mdp_to_json(const TabularMDP& m) {
    const Index S = m.n_states();
    const Index A = m.n_actions();
    nlohmann::json P = nlohmann::json::array();
    nlohmann::json c = nlohmann::json::array();
    for (Index s = 0; s < S; ++s) {
        nlohmann::json ps = nlohmann::json::array();
        nlohmann::json cs = nlohmann::json::array();
        for (Index a = 0; a < A; ++a) {
            std::vector<double> row(static_cast<std::size_t>(S));
            for (Index t = 0; t < S; ++t) {
                row[static_cast<std::size_t>(t)] = m.P()(m.row(s, a), t);
            }
            ps.push_back(row);
            cs.push_back(m.cost()(s, a));
        }
        P.push_back(ps);
        c.push_back(cs);
    }
    nlohmann::json j = {{"n_states", S},
                        {"n_actions", A},
                        {"P", P},
                        {"c", c},
                        {"gamma", m.gamma()},
                        {"tau", m.tau()},
                        {"mu", std::vector<double>(m.mu().data(), m.mu().data() + A)},
                        {"rho", std::vector<double>(m.rho().data(), m.rho().data() + S)}};
    if (m.unregularised()) {
        j["unregularised"] = true;
    }
    return j;
}

inline TabularMDP load_mdp(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw InvalidInput("cannot open MDP file " + path);
    }
    try {
        return mdp_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw InvalidInput(path + ": " + e.what());
    } catch (const InvalidInput& e) {
        throw InvalidInput(path + ": " + e.what());
    }
}

} // namespace frmdp

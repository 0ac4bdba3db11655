#pragma once

#include "frmdp/mdp.hpp"
#include "frmdp/rng.hpp"

#include <optional>

namespace frmdp {

/// Seeded random instance: Dirichlet(concentration) transition rows, costs
/// uniform in [0, cost_scale], uniform mu and rho unless given.
struct GeneratorSpec {
    Index n_states = 4;
    Index n_actions = 3;
    double cost_scale = 1.0;
    double transition_concentration = 1.0;
    std::uint64_t seed = 0;
    double gamma = 0.9;
    double tau = 1.0;
    std::optional<Vector> mu;
    std::optional<Vector> rho;
    bool unregularised = false;

    static GeneratorSpec from_json(const nlohmann::json& j) {
        GeneratorSpec g;
        g.n_states = j.at("n_states").get<Index>();
        g.n_actions = j.at("n_actions").get<Index>();
        g.cost_scale = j.value("cost_scale", g.cost_scale);
        g.transition_concentration = j.value("transition_concentration", g.transition_concentration);
        g.seed = j.value("seed", g.seed);
        g.gamma = j.value("gamma", g.gamma);
        g.tau = j.value("tau", g.tau);
        g.unregularised = j.value("unregularised", g.unregularised);
        auto vec = [](const nlohmann::json& arr) {
            const auto v = arr.get<std::vector<double>>();
            return Vector(Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size())));
        };
        if (j.contains("mu")) {
            g.mu = vec(j.at("mu"));
        }
        if (j.contains("rho")) {
            g.rho = vec(j.at("rho"));
        }
        return g;
    }
};

inline TabularMDP generate_mdp(const GeneratorSpec& spec) {
    const Index S = spec.n_states;
    const Index A = spec.n_actions;
    if (S < 1 || A < 1) {
        throw InvalidInput("generator needs n_states >= 1 and n_actions >= 1");
    }
    if (!(spec.transition_concentration > 0.0) || !(spec.cost_scale >= 0.0)) {
        throw InvalidInput("generator needs concentration > 0 and cost_scale >= 0");
    }
    Xoshiro256 rng(spec.seed);
    Matrix P(S * A, S);
    for (Index r = 0; r < S * A; ++r) {
        for (Index t = 0; t < S; ++t) {
            P(r, t) = rng.gamma(spec.transition_concentration);
        }
        const double total = P.row(r).sum();
        if (total > 0.0) {
            P.row(r) /= total;
        } else {
            P.row(r).setConstant(1.0 / static_cast<double>(S));
        }
    }
    Matrix c(S, A);
    for (Index s = 0; s < S; ++s) {
        for (Index a = 0; a < A; ++a) {
            c(s, a) = spec.cost_scale * rng.uniform();
        }
    }
    Vector mu = spec.mu ? *spec.mu : Vector::Constant(A, 1.0 / static_cast<double>(A));
    Vector rho = spec.rho ? *spec.rho : Vector::Constant(S, 1.0 / static_cast<double>(S));
    const double tau = spec.unregularised ? 0.0 : spec.tau;
    return {std::move(P), std::move(c), spec.gamma, tau, std::move(mu), std::move(rho), spec.unregularised};
}

/// Logits with i.i.d. N(0, scale^2) entries.
inline Matrix random_logits(Index S, Index A, std::uint64_t seed, double scale = 1.0) {
    Xoshiro256 rng(seed);
    Matrix Z(S, A);
    for (Index s = 0; s < S; ++s) {
        for (Index a = 0; a < A; ++a) {
            Z(s, a) = scale * rng.normal();
        }
    }
    return Z;
}

} // namespace frmdp

#include "test_util.hpp"

using namespace frmdp;
using frmdp::testing::random_instance;
using frmdp::testing::single_state;

TEST(SoftBellman, ZeroCostFixedPoint) {
    GeneratorSpec g;
    g.n_states = 3;
    g.n_actions = 2;
    g.cost_scale = 0.0;
    const TabularMDP m = generate_mdp(g);
    EXPECT_LE(sup_norm(soft_bellman_operator(m, Vector::Zero(3))), 0.0);
}

TEST(SoftBellman, ClosedFormSoftmin) {
    const TabularMDP m = single_state({0.0, std::log(2.0)}, 0.0, 1.0, {0.5, 0.5});
    EXPECT_NEAR(soft_bellman_operator(m, Vector::Zero(1))(0), 0.287682072451780927, 1e-15);
}

TEST(SoftBellman, Contraction) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const TabularMDP m = random_instance(seed, 4, 3, 0.9, 0.5);
        const Vector u = random_logits(4, 1, seed + 1, 5.0);
        const Vector v = random_logits(4, 1, seed + 2, 5.0);
        const double lhs = sup_norm(Vector(soft_bellman_operator(m, u) - soft_bellman_operator(m, v)));
        EXPECT_LE(lhs, m.gamma() * sup_norm(Vector(u - v)) * (1.0 + 1e-12));
    }
}

TEST(SolveOptimal, SingleStateClosedForm) {
    const TabularMDP m = single_state({0.0, 1.0, 2.0}, 0.0, 0.5, {0.2, 0.3, 0.5});
    const OptimalSolution sol = solve_optimal(m);
    EXPECT_NEAR(sol.V_star(0), 0.693630605353475283, 1e-14);
    EXPECT_NEAR(sol.pi_star.pi(0, 0), 0.800773853709434582, 1e-14);
    EXPECT_NEAR(sol.pi_star.pi(0, 1), 0.162559434450360279, 1e-14);
    EXPECT_NEAR(sol.pi_star.pi(0, 2), 0.036666711840205139, 1e-14);
}

TEST(SolveOptimal, ConstantCost) {
    GeneratorSpec g;
    g.n_states = 4;
    g.n_actions = 3;
    g.cost_scale = 0.0;
    g.gamma = 0.8;
    const TabularMDP base = generate_mdp(g);
    const TabularMDP m(base.P(), Matrix::Constant(4, 3, 2.0), 0.8, 1.0, base.mu(), base.rho());
    const OptimalSolution sol = solve_optimal(m, 1e-12);
    EXPECT_LE((sol.V_star.array() - 10.0).abs().maxCoeff(), 1e-11);
    EXPECT_LE(sup_norm(Matrix(sol.pi_star.pi - frmdp::testing::uniform_rows(4, 3))), 1e-12);
}

TEST(SolveOptimal, InvariantsAndOptimality) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const TabularMDP m = random_instance(seed, 5, 3, 0.9, 0.3);
        const OptimalSolution sol = solve_optimal(m, 1e-10);
        EXPECT_LE(sol.residual, 1e-10);
        EXPECT_LE(sup_norm(Vector(soft_min(sol.Q_star, m.mu(), m.tau()) - sol.V_star)), 1e-10);
        EXPECT_LE(sup_norm(Matrix(sol.Q_star - q_from_values(m, sol.V_star))), 0.0);
        for (Index s = 0; s < 5; ++s) {
            EXPECT_NEAR(sol.pi_star.pi.row(s).sum(), 1.0, 1e-10);
            for (Index a = 0; a < 3; ++a) {
                EXPECT_NEAR(sol.pi_star.pi(s, a), std::exp(-(sol.Q_star(s, a) - sol.V_star(s)) / m.tau()) * m.mu()(a),
                            1e-10);
            }
        }
        for (std::uint64_t k = 0; k < 100; ++k) {
            const PolicyEvaluation ev = evaluate_policy(m, LogitPolicy(random_logits(5, 3, 1000 * seed + k, 2.0), m.mu()));
            EXPECT_LE((sol.V_star - ev.V).maxCoeff(), 2e-10);
        }
    }
}

TEST(SolveOptimal, StartIndependence) {
    const TabularMDP m = random_instance(21, 6, 4, 0.95, 0.2);
    const OptimalSolution a = solve_optimal(m, 1e-10);
    const OptimalSolution b = solve_optimal(m, 1e-10, 1000000, Vector(random_logits(6, 1, 22, 30.0)));
    EXPECT_LE(sup_norm(Vector(a.V_star - b.V_star)), 2e-10);
}

TEST(SolveOptimal, ConvergenceFailureCarriesResidual) {
    const TabularMDP m = random_instance(23, 4, 3, 0.99, 1.0);
    try {
        solve_optimal(m, 1e-10, 5);
        FAIL();
    } catch (const ConvergenceFailure& e) {
        EXPECT_GT(e.residual(), 0.0);
    }
}

TEST(SolveOptimal, PolishReachesRounding) {
    const TabularMDP m = random_instance(24, 6, 4, 0.99, 0.1);
    const OptimalSolution sol = reference_optimal(m);
    EXPECT_LE(sol.residual, 1e-12);
    EXPECT_LE(sup_norm(flat_derivative(m, LogitPolicy(sol.Z_star, m.mu()))), 1e-11);
}

TEST(EvaluatePolicy, ConstantCostAtMu) {
    GeneratorSpec g;
    g.n_states = 3;
    g.n_actions = 2;
    g.gamma = 0.5;
    const TabularMDP base = generate_mdp(g);
    const TabularMDP m(base.P(), Matrix::Constant(3, 2, 1.5), 0.5, 1.0, base.mu(), base.rho());
    const PolicyEvaluation ev = evaluate_policy(m, LogitPolicy(Matrix::Zero(3, 2), m.mu()));
    EXPECT_LE((ev.V.array() - 3.0).abs().maxCoeff(), 1e-14);
    EXPECT_LE((ev.Q.array() - 3.0).abs().maxCoeff(), 1e-14);
    EXPECT_LE(sup_norm(ev.A), 1e-14);
}

TEST(EvaluatePolicy, MatchesRolloutAndBellman) {
    const TabularMDP m = random_instance(31, 5, 3, 0.9, 0.7);
    const LogitPolicy p(random_logits(5, 3, 32, 1.5), m.mu());
    const PolicyEvaluation ev = evaluate_policy(m, p);
    const Vector oracle = frmdp::testing::rollout_values(m, p.distribution(), 10000);
    EXPECT_LE(sup_norm(Vector(ev.V - oracle)), 1e-8);
    for (Index s = 0; s < 5; ++s) {
        double on_policy = 0.0;
        for (Index a = 0; a < 3; ++a) {
            on_policy += (ev.Q(s, a) + m.tau() * p.log_density()(s, a)) * p.pi()(s, a);
        }
        EXPECT_NEAR(on_policy, ev.V(s), 1e-10);
        EXPECT_NEAR(ev.A.row(s).dot(p.pi().row(s)), 0.0, 1e-12);
    }
    EXPECT_LE(sup_norm(ev.V), (m.cost_norm() + 2.0 * m.tau() * sup_norm(p.logits())) / (1.0 - m.gamma()));
}

TEST(FlatDerivative, ZeroMeanAndVanishesAtOptimum) {
    const TabularMDP m = random_instance(41, 4, 3, 0.9, 0.5);
    const LogitPolicy p(random_logits(4, 3, 42), m.mu());
    const Matrix G = flat_derivative(m, p);
    for (Index s = 0; s < 4; ++s) {
        EXPECT_NEAR(G.row(s).dot(p.pi().row(s)), 0.0, 1e-12);
    }
    const OptimalSolution sol = solve_optimal(m, 1e-12);
    EXPECT_LE(sup_norm(flat_derivative(m, LogitPolicy(sol.Z_star, m.mu()))), 1e-10);
}

TEST(FlatDerivative, DirectionalFiniteDifference) {
    const TabularMDP m = random_instance(43, 4, 3, 0.8, 0.5);
    const LogitPolicy p(random_logits(4, 3, 44), m.mu());
    const LogitPolicy q(random_logits(4, 3, 45), m.mu());
    const PolicyEvaluation ev = evaluate_policy(m, p);
    const Matrix G = flat_derivative(m, p);
    double predicted = 0.0;
    for (Index s = 0; s < 4; ++s) {
        predicted += ev.occ.d_rho(s) * G.row(s).dot(q.pi().row(s) - p.pi().row(s));
    }
    predicted /= 1.0 - m.gamma();
    std::vector<double> errors;
    for (double eps : {1e-3, 1e-4, 1e-5}) {
        const Matrix mix = (1.0 - eps) * p.pi() + eps * q.pi();
        const double fd = (evaluate_policy(m, policy_from_probabilities(mix, m.mu())).V_rho - ev.V_rho) / eps;
        errors.push_back(std::abs(fd - predicted));
    }
    EXPECT_LT(errors[1], 0.2 * errors[0]);
    EXPECT_LT(errors[2], 1e-4);
}

TEST(PerformanceDifference, IdentityOnRandomPairs) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const TabularMDP m = random_instance(seed, 6, 4, 0.9, 0.4);
        for (std::uint64_t k = 0; k < 50; ++k) {
            const LogitPolicy p(random_logits(6, 4, 7000 + 100 * seed + k, 2.0), m.mu());
            const LogitPolicy q(random_logits(6, 4, 9000 + 100 * seed + k, 2.0), m.mu());
            const PerformanceDifference pd = performance_difference(m, p, q);
            EXPECT_NEAR(pd.lhs, pd.rhs, 1e-9);
        }
        const LogitPolicy p(random_logits(6, 4, seed + 1), m.mu());
        const PerformanceDifference same = performance_difference(m, p, p);
        EXPECT_EQ(same.lhs, 0.0);
        EXPECT_NEAR(same.rhs, 0.0, 1e-15);
        const OptimalSolution sol = solve_optimal(m);
        EXPECT_LE(performance_difference(m, LogitPolicy(sol.Z_star, m.mu()), p).lhs, 1e-10);
    }
}

TEST(QDifference, Bound) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const TabularMDP m = random_instance(seed, 4, 3, 0.85, 0.6);
        const Matrix f = random_logits(4, 3, seed + 50, 2.0);
        const Matrix g = random_logits(4, 3, seed + 80, 2.0);
        const LogitPolicy p(f, m.mu());
        const LogitPolicy q(g, m.mu());
        const Matrix dQ = evaluate_policy(m, q).Q - evaluate_policy(m, p).Q;
        double tv = 0.0;
        for (Index s = 0; s < 4; ++s) {
            tv = std::max(tv, (p.pi().row(s) - q.pi().row(s)).cwiseAbs().sum());
        }
        const double g1 = m.gamma() / std::pow(1.0 - m.gamma(), 2) * (m.cost_norm() + 2.0 * m.tau() * sup_norm(f));
        const double g2 = m.tau() * m.gamma() / (1.0 - m.gamma());
        EXPECT_LE(sup_norm(dQ), g1 * tv + g2 * sup_norm(Matrix(q.log_density() - p.log_density())) + 1e-12);
    }
}

TEST(HardOptimum, BeatsEveryDeterministicPolicy) {
    GeneratorSpec g;
    g.n_states = 3;
    g.n_actions = 3;
    g.seed = 5;
    g.unregularised = true;
    const TabularMDP m = generate_mdp(g);
    const HardOptimalSolution sol = solve_unregularised_optimal(m);
    for (int code = 0; code < 27; ++code) {
        Matrix pi = Matrix::Zero(3, 3);
        int c = code;
        for (Index s = 0; s < 3; ++s) {
            pi(s, c % 3) = 1.0;
            c /= 3;
        }
        const Vector r = m.cost().cwiseProduct(pi).rowwise().sum();
        const Vector V = (Matrix::Identity(3, 3) - m.gamma() * policy_transition(m, pi)).partialPivLu().solve(r);
        EXPECT_LE((sol.V_star - V).maxCoeff(), 1e-12);
    }
}

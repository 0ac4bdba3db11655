#include "test_util.hpp"

#include <sstream>

using namespace frmdp;
using frmdp::testing::random_instance;

namespace {

FlowConfig config(double t_end, double dt, int every) {
    FlowConfig cfg;
    cfg.t_end = t_end;
    cfg.dt = dt;
    cfg.snapshot_every = every;
    return cfg;
}

} // namespace

TEST(BoundReport, HoldsRuleAndSerialisation) {
    const BoundReport r = BoundReport::make("x", {0.0, 1.0, 2.0}, {1.0, 1.0 + 1e-9, 2.0}, {kInf, 1.0, 1.0});
    EXPECT_TRUE(r.holds[0]);
    EXPECT_TRUE(r.holds[1]);
    EXPECT_FALSE(r.holds[2]);
    EXPECT_FALSE(r.all_hold());
    EXPECT_EQ(r.violations(), 1u);
    EXPECT_DOUBLE_EQ(*r.first_violation(), 2.0);
    EXPECT_DOUBLE_EQ(r.min_margin(), -1.0);
    std::ostringstream os;
    r.write_csv(os);
    EXPECT_EQ(os.str(), "t,lhs,rhs,margin,holds\n0,1,inf,inf,1\n1,1.000000001,1,-1.000000082740371e-09,1\n2,2,1,-1,0\n");
    const nlohmann::json j = r.summary();
    EXPECT_EQ(j["violations"], 1);
    EXPECT_EQ(j["first_violation_time"], 2.0);
}

TEST(Bregman, IdentitiesAndNonnegativity) {
    const TabularMDP m = random_instance(1, 4, 3, 0.9, 0.5);
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const Matrix f = random_logits(4, 3, seed, 2.0);
        const Matrix g = random_logits(4, 3, seed + 500, 2.0);
        const Vector nu = Vector::Constant(4, 0.25);
        EXPECT_GE(bregman_divergence(f, g, nu, m), 0.0);
        EXPECT_EQ(bregman_divergence(f, f, nu, m), 0.0);
        const Matrix shifted = f.colwise() + Vector(random_logits(4, 1, seed + 900, 3.0));
        EXPECT_NEAR(bregman_divergence(shifted, f, nu, m), 0.0, 1e-12);

        const PolicyDistribution pg = policy_from_logits(g, m.mu());
        const Vector d = occupancy(m, pg).d_rho;
        const double kl = kl_policies(pg, policy_from_logits(f, m.mu()), d);
        EXPECT_NEAR(bregman_divergence(f, g, d, m), kl, 1e-10);
    }
}

TEST(Concentrability, GammaZeroGivesTwo) {
    const TabularMDP m = random_instance(2, 3, 3, 0.0, 1.0).with_rho((Vector(3) << 0.2, 0.3, 0.5).finished());
    const OptimalSolution sol = solve_optimal(m);
    EXPECT_NEAR(concentrability(m, sol.pi_star, m.rho(), sol.pi_star), 2.0, 1e-12);
}

TEST(Concentrability, BruteForceAndLowerBound) {
    const TabularMDP m = random_instance(3, 2, 2, 0.9, 1.0);
    const OptimalSolution sol = solve_optimal(m);
    const Vector d = occupancy(m, sol.pi_star).d_rho;
    const PolicyDistribution uniform = policy_from_logits(Matrix::Zero(2, 2), m.mu());
    double first = 0.0;
    double second = 0.0;
    for (Index s = 0; s < 2; ++s) {
        first = std::max(first, d(s) / 0.5);
        for (Index a = 0; a < 2; ++a) {
            second = std::max(second, d(s) * sol.pi_star.pi(s, a) / (0.5 * 0.5));
        }
    }
    const double kappa = concentrability(m, sol.pi_star, m.rho(), uniform);
    EXPECT_DOUBLE_EQ(kappa, first + second);
    EXPECT_GE(kappa, 1.0);
    Vector rho_ref(2);
    rho_ref << 1.0, 0.0;
    EXPECT_TRUE(std::isinf(concentrability(m, sol.pi_star, rho_ref, uniform)));
}

TEST(Hessian, CentringDiagonalityAndFiniteDifference) {
    const TabularMDP m = random_instance(4, 4, 3, 0.9, 1.0);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Matrix Z = random_logits(4, 3, seed, 1.5);
        const Matrix f = random_logits(4, 3, seed + 40);
        const Vector v = random_logits(4, 1, seed + 80);
        const Matrix H = hessian_apply(Z, f, m);
        for (Index s = 0; s < 4; ++s) {
            EXPECT_NEAR(H.row(s).sum(), 0.0, 1e-15);
        }
        const Matrix state_only = Vector(random_logits(4, 1, seed + 120)).replicate(1, 3);
        EXPECT_LE(sup_norm(hessian_apply(Z, state_only, m)), 1e-15);
        const Matrix lhs = hessian_apply(Z, Matrix(v.asDiagonal() * f), m);
        EXPECT_LE(sup_norm(Matrix(lhs - v.asDiagonal() * H)), 1e-12);

        const HessianCheck c = hessian_fd_check(Z, f, Vector::Constant(4, 0.25), m);
        EXPECT_LE(c.rel_error, 1e-4);
    }
}

TEST(Legendre, EqualityAndSampledSupremum) {
    const TabularMDP m = random_instance(5, 4, 3, 0.8, 1.0);
    const Vector nu = (Vector(4) << 0.1, 0.2, 0.3, 0.4).finished();
    const LegendreReport zero = legendre_check(Matrix::Zero(4, 3), nu, m, 10);
    EXPECT_EQ(zero.h_star, 0.0);
    EXPECT_NEAR(zero.value_at_maximiser, 0.0, 1e-15);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const LegendreReport r = legendre_check(random_logits(4, 3, seed, 2.0), nu, m, 100, seed * 1000);
        EXPECT_LE(r.equality_error, 1e-10);
        EXPECT_GE(r.min_margin, -1e-10);
        EXPECT_TRUE(r.ok());
    }
}

TEST(Derivatives, StateOnlyDirectionsAndFiniteDifferences) {
    const TabularMDP m = random_instance(6, 4, 3, 0.9, 0.5);
    const Matrix Z = random_logits(4, 3, 7, 1.5);
    const Derivatives state_only = directional_derivatives(m, Z, Vector(random_logits(4, 1, 8)).replicate(1, 3));
    EXPECT_LE(sup_norm(state_only.d_pi), 1e-15);
    EXPECT_LE(sup_norm(state_only.d_log_density), 1e-15);

    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const DerivativeReport r = derivative_checks(m, random_logits(4, 3, seed, 1.5), random_logits(4, 3, seed + 50));
        EXPECT_LE(r.max_rel_error(), 1e-5);
        for (double ratio : r.trend_ratio) {
            EXPECT_NEAR(ratio, 4.0, 0.4);
        }
        EXPECT_LE(r.max_bound_ratio(), 1.0);
    }
}

TEST(Derivatives, ValueDerivativeMatchesPerformanceDifferenceFirstOrder) {
    const TabularMDP m = random_instance(9, 3, 2, 0.7, 0.8);
    const Matrix Z = random_logits(3, 2, 10);
    const Matrix g = random_logits(3, 2, 11);
    const Derivatives d = directional_derivatives(m, Z, g);
    const double eps = 1e-6;
    const double fd = (evaluate_policy(m, LogitPolicy(Z + eps * g, m.mu())).V_rho -
                       evaluate_policy(m, LogitPolicy(Z - eps * g, m.mu())).V_rho) /
                      (2 * eps);
    EXPECT_NEAR(m.rho().dot(d.d_value), fd, 1e-8);
}

TEST(LinearConvergence, HoldsOnExactFlowAndNegativeControlFails) {
    const TabularMDP m = random_instance(12, 5, 4, 0.9, 1.0);
    const FlowTrajectory traj = integrate_mirror_flow(m, random_logits(5, 4, 13, 2.0), config(10.0, 0.01, 10));
    const LinearConvergenceReport ok = check_linear_convergence(traj);
    EXPECT_TRUE(ok.gap.all_hold());
    EXPECT_TRUE(ok.policy.all_hold());
    EXPECT_TRUE(std::isinf(ok.gap.rhs.front()));

    const OptimalSolution sol = reference_optimal(m);
    const FlowTrajectory fixed = integrate_mirror_flow(m, sol.Z_star, config(1.0, 0.01, 10));
    EXPECT_TRUE(check_linear_convergence(fixed).gap.all_hold());
    EXPECT_TRUE(check_monotonicity(traj).all_hold());
    EXPECT_TRUE(check_kl_ode(traj, 1e-6 + 0.1 * 0.1).all_hold());
    EXPECT_LT(log_gap_slope(traj, 5.0), -0.9 * m.tau());
}

TEST(StabilityBound, ZeroPerturbationReducesToExponentialBound) {
    const TabularMDP m = random_instance(14, 4, 3, 0.9, 1.0);
    FlowConfig cfg = config(5.0, 0.01, 10);
    const FlowTrajectory traj = integrate_approximate_flow(m, random_logits(4, 3, 15), cfg, exact_q());
    const FlowReference ref = make_reference(m);
    const double kappa =
        concentrability(ref.d_star, ref.pi_star, m.rho(), detail::broadcast_rows(m.mu(), m.n_states()));
    const BoundReport r = check_stability_bound(traj, kappa);
    const LinearConvergenceReport lin = check_linear_convergence(traj);
    for (std::size_t k = 1; k < traj.size(); ++k) {
        EXPECT_NEAR(r.rhs[k], lin.gap.rhs[k], 1e-12 * (1.0 + lin.gap.rhs[k]));
    }
    EXPECT_TRUE(r.all_hold());
}

TEST(StabilityBound, PerturbedFlowsSatisfyBound) {
    const TabularMDP m = random_instance(16, 4, 3, 0.9, 1.0);
    const FlowReference ref = make_reference(m);
    const double kappa =
        concentrability(ref.d_star, ref.pi_star, m.rho(), detail::broadcast_rows(m.mu(), m.n_states()));
    for (double eps : {0.01, 0.1}) {
        for (bool state_only : {false, true}) {
            PerturbationSpec spec;
            spec.amplitude = eps;
            spec.seed = 17;
            spec.profile = PerturbationProfile::sinusoidal;
            spec.state_only = state_only;
            const FlowTrajectory traj =
                integrate_approximate_flow(m, random_logits(4, 3, 18), config(8.0, 0.01, 5), perturbed_q(m, spec), &ref);
            EXPECT_TRUE(check_stability_bound(traj, kappa).all_hold()) << eps;
            EXPECT_TRUE(check_stability_bound(traj, kappa, true).all_hold()) << eps;
        }
    }
}

TEST(PolynomialRate, UnregularisedReport) {
    GeneratorSpec g;
    g.n_states = 3;
    g.n_actions = 3;
    g.seed = 19;
    g.unregularised = true;
    const TabularMDP m = generate_mdp(g);
    const FlowTrajectory traj = integrate_unregularised_flow(m, Matrix::Zero(3, 3), config(10.0, 0.01, 10));
    EXPECT_TRUE(check_polynomial_rate(traj).all_hold());
}

TEST(FormatDouble, RoundTrips) {
    for (double x : {0.1, 1.0 / 3.0, 1e-300, -2.5e10}) {
        EXPECT_EQ(std::stod(format_double(x)), x);
    }
    EXPECT_EQ(format_double(kInf), "inf");
    EXPECT_EQ(format_double(std::nan("")), "nan");
}

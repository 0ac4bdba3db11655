// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include "frmdp/frmdp.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>

using namespace frmdp;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, x);
    return buf;
}

TabularMDP instance(std::uint64_t seed, Index S, Index A, double gamma, double tau) {
    GeneratorSpec g;
    g.n_states = S;
    g.n_actions = A;
    g.seed = seed;
    g.gamma = gamma;
    g.tau = tau;
    return generate_mdp(g);
}

FlowConfig grid(double t_end, double dt, int every) {
    FlowConfig cfg;
    cfg.t_end = t_end;
    cfg.dt = dt;
    cfg.snapshot_every = every;
    return cfg;
}

double uniform_kappa(const TabularMDP& m, const FlowReference& ref) {
    return concentrability(ref.d_star, ref.pi_star, m.rho(), detail::broadcast_rows(m.mu(), m.n_states()));
}

Outcome soft_dp_correctness() {
    const auto t0 = std::chrono::steady_clock::now();
    const double gammas[] = {0.5, 0.9, 0.99};
    const double taus[] = {0.1, 1.0, 10.0};
    double worst_residual = 0.0;
    double worst_margin = kInf;
    for (std::uint64_t k = 0; k < 200; ++k) {
        const Index S = 1 + static_cast<Index>(k % 8);
        const Index A = 1 + static_cast<Index>((k / 8) % 5);
        const TabularMDP m = instance(1000 + k, S, A, gammas[k % 3], taus[(k / 3) % 3]);
        const OptimalSolution sol = solve_optimal(m);
        worst_residual = std::max(worst_residual, sol.residual);
        for (std::uint64_t p = 0; p < 20; ++p) {
            const Matrix Z = random_logits(S, A, 100000 + 20 * k + p, 2.0);
            const PolicyEvaluation ev = evaluate_policy(m, LogitPolicy(Z, m.mu()), false);
            worst_margin = std::min(worst_margin, (ev.V - sol.V_star).minCoeff());
        }
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {worst_residual <= 1e-10 && worst_margin >= -2e-10 && secs < 30.0,
            "max residual " + fmt("%.2e", worst_residual) + ", min V^pi - V* " + fmt("%.2e", worst_margin) + ", " +
                fmt("%.1f", secs) + " s"};
}

Outcome performance_difference_identity() {
    double worst = 0.0;
    for (std::uint64_t k = 0; k < 20; ++k) {
        const Index S = 2 + static_cast<Index>(k % 5);
        const Index A = 2 + static_cast<Index>(k % 3);
        const TabularMDP m = instance(2000 + k, S, A, k % 2 ? 0.9 : 0.6, k % 3 ? 1.0 : 0.3);
        for (std::uint64_t p = 0; p < 50; ++p) {
            const LogitPolicy a(random_logits(S, A, 3 * (100 * k + p), 2.0), m.mu());
            const LogitPolicy b(random_logits(S, A, 3 * (100 * k + p) + 1, 2.0), m.mu());
            const PerformanceDifference pd = performance_difference(m, a, b);
            worst = std::max(worst, std::abs(pd.lhs - pd.rhs));
        }
    }
    return {worst <= 1e-9, "max |lhs - rhs| " + fmt("%.2e", worst) + " over 1000 pairs"};
}

struct ExponentialRun {
    FlowTrajectory traj;
    double tau;
};

std::vector<ExponentialRun> exponential_runs() {
    std::vector<ExponentialRun> runs;
    const double taus[] = {0.1, 1.0, 10.0};
    for (std::uint64_t k = 0; k < 20; ++k) {
        const double tau = taus[k % 3];
        const TabularMDP m = instance(3000 + k, 5, 4, 0.9, tau);
        const double dt = 0.01 / std::max(1.0, tau);
        const int every = tau < 1.0 ? 100 : 10;
        runs.push_back({integrate_mirror_flow(m, random_logits(5, 4, 3100 + k, 2.0), grid(10.0 / tau, dt, every)),
                        tau});
    }
    return runs;
}

Outcome exponential_convergence(const std::vector<ExponentialRun>& runs) {
    std::size_t violations = 0;
    double lo = kInf;
    double hi = -kInf;
    for (const auto& r : runs) {
        const LinearConvergenceReport rep = check_linear_convergence(r.traj);
        violations += rep.gap.violations() + rep.policy.violations();
        const double slope = log_gap_slope(r.traj, 5.0 / r.tau) / r.tau;
        lo = std::min(lo, slope);
        hi = std::max(hi, std::isnan(slope) ? kInf : slope);
    }
    return {violations == 0 && hi <= -0.9,
            std::to_string(violations) + " bound violations on 20 runs; late log-gap slope / tau in [" +
                fmt("%.3f", lo) + ", " + fmt("%.3f", hi) + "] (required <= -0.9)"};
}

Outcome dual_primal_equivalence() {
    double worst_fine = 0.0;
    double ratio_lo = kInf;
    double ratio_hi = 0.0;
    for (std::uint64_t k = 0; k < 5; ++k) {
        const TabularMDP m = instance(4000 + k, 4, 3, 0.9, 1.0);
        const Matrix Z0 = random_logits(4, 3, 4100 + k, 2.0);
        const FlowReference ref = make_reference(m);
        auto deviation = [&](double dt, int every) {
            const FlowConfig cfg = grid(5.0, dt, every);
            const FlowTrajectory dual = integrate_mirror_flow(m, Z0, cfg, &ref);
            const FlowTrajectory primal = integrate_fisher_rao_flow(m, policy_from_logits(Z0, m.mu()), cfg, &ref);
            return max_policy_deviation(dual, primal);
        };
        worst_fine = std::max(worst_fine, deviation(1e-3, 100));
        std::vector<double> dev;
        for (double dt : {0.2, 0.1, 0.05, 0.025}) {
            dev.push_back(deviation(dt, 1));
        }
        for (std::size_t i = 0; i + 1 < dev.size(); ++i) {
            ratio_lo = std::min(ratio_lo, dev[i] / dev[i + 1]);
            ratio_hi = std::max(ratio_hi, dev[i] / dev[i + 1]);
        }
    }
    return {worst_fine <= 1e-6 && ratio_lo >= 8.0 && ratio_hi <= 32.0,
            "max deviation at dt=1e-3 " + fmt("%.2e", worst_fine) + "; halving ratios in [" + fmt("%.1f", ratio_lo) +
                ", " + fmt("%.1f", ratio_hi) + "]"};
}

Outcome monotonicity(const std::vector<ExponentialRun>& runs) {
    double worst = -kInf;
    std::size_t violations = 0;
    for (const auto& r : runs) {
        const BoundReport rep = check_monotonicity(r.traj);
        violations += rep.violations();
        for (double x : rep.lhs) {
            worst = std::max(worst, x);
        }
    }
    return {violations == 0, "largest per-state increase " + fmt("%.2e", worst) + " on 20 runs"};
}

Outcome stability() {
    std::size_t violations = 0;
    double worst_state_only = 0.0;
    double kappa_max = 0.0;
    for (std::uint64_t k = 0; k < 10; ++k) {
        const TabularMDP m = instance(6000 + k, 4, 3, 0.9, 1.0);
        const FlowReference ref = make_reference(m);
        const double kappa = uniform_kappa(m, ref);
        kappa_max = std::max(kappa_max, kappa);
        const Matrix Z0 = random_logits(4, 3, 6100 + k, 2.0);
        const FlowConfig cfg = grid(8.0, 0.01, 5);
        const FlowTrajectory exact = integrate_mirror_flow(m, Z0, cfg, &ref);
        for (double eps : {0.01, 0.1}) {
            for (auto profile : {PerturbationProfile::constant, PerturbationProfile::sinusoidal}) {
                PerturbationSpec spec;
                spec.amplitude = eps;
                spec.seed = 6200 + k;
                spec.profile = profile;
                const FlowTrajectory traj = integrate_approximate_flow(m, Z0, cfg, perturbed_q(m, spec), &ref);
                violations += check_stability_bound(traj, kappa).violations();
                violations += check_stability_bound(traj, kappa, true).violations();

                spec.state_only = true;
                const FlowTrajectory shifted = integrate_approximate_flow(m, Z0, cfg, perturbed_q(m, spec), &ref);
                violations += check_stability_bound(shifted, kappa).violations();
                worst_state_only = std::max(worst_state_only, max_policy_deviation(shifted, exact));
            }
        }
    }
    return {violations == 0 && worst_state_only <= 1e-8,
            std::to_string(violations) + " violations (kappa up to " + fmt("%.2f", kappa_max) +
                "); state-only deviation " + fmt("%.2e", worst_state_only)};
}

Outcome npg() {
    double worst_track = 0.0;
    std::size_t violations = 0;
    for (std::uint64_t k = 0; k < 3; ++k) {
        const TabularMDP m = instance(7000 + k, 3, 3, 0.9, 0.5);
        const FlowReference ref = make_reference(m);
        NpgConfig cfg;
        cfg.R0 = 1e6;
        cfg.R_growth = 0.0;
        cfg.lambda0 = 1e-8;
        cfg.lambda_decay = 0.0;
        cfg.t_end = 5.0;
        cfg.dt = 0.01;
        cfg.snapshot_every = 10;
        const Vector theta0 = random_logits(9, 1, 7100 + k);
        const FeatureMap one_hot = FeatureMap::one_hot(3, 3);
        const NpgTrajectory a = integrate_npg_flow(m, one_hot, theta0, cfg, &ref);
        const FlowTrajectory exact = integrate_mirror_flow(m, one_hot.logits(theta0), cfg.flow(), &ref);
        worst_track = std::max(worst_track, max_policy_deviation(a.flow, exact));
        violations += check_npg_bound(a).violations();

        NpgConfig deficient = cfg;
        deficient.R0 = 10.0;
        deficient.R_growth = 1.0;
        deficient.lambda0 = 1e-3;
        deficient.lambda_decay = 1.0;
        const FeatureMap g(random_logits(9, 4, 7200 + k), 3, 3);
        violations += check_npg_bound(integrate_npg_flow(m, g, random_logits(4, 1, 7300 + k), deficient, &ref))
                          .violations();
        const FeatureMap flat = FeatureMap::constant(3, 3, Vector::Ones(2));
        violations += check_npg_bound(integrate_npg_flow(m, flat, Vector::Ones(2), deficient, &ref)).violations();
    }
    return {worst_track <= 1e-5 && violations == 0,
            "one-hot tracking " + fmt("%.2e", worst_track) + "; " + std::to_string(violations) +
                " bound violations over one-hot and rank-deficient runs"};
}

TabularMDP bandit(double mu0) {
    Matrix P = Matrix::Ones(3, 1);
    Matrix c(1, 3);
    c << -1.0, 0.0, 0.0;
    Vector mu(3);
    mu << mu0, 0.5 * (1.0 - mu0), 0.5 * (1.0 - mu0);
    return {P, c, 0.0, 0.0, mu, Vector::Ones(1), true};
}

Outcome bandit_closed_form() {
    double worst = 0.0;
    const FlowConfig cfg = grid(5.0, 0.01, 50);
    for (double mu0 : {0.1, 0.5}) {
        const FlowTrajectory traj = integrate_unregularised_flow(bandit(mu0), Matrix::Zero(1, 3), cfg);
        for (std::size_t k = 0; k < traj.size(); ++k) {
            const double t = traj.times[k];
            if (t == 0.5 || t == 1.0 || t == 2.0 || t == 5.0) {
                const double expected = -mu0 / (mu0 + std::exp(-t) * (1.0 - mu0));
                worst = std::max(worst, std::abs(traj.values[k](0) - expected));
            }
        }
    }
    const FlowTrajectory stuck = integrate_unregularised_flow(bandit(0.0), Matrix::Zero(1, 3), cfg);
    double lowest = kInf;
    for (const Vector& v : stuck.values) {
        lowest = std::min(lowest, v(0));
    }
    return {worst <= 1e-6 && lowest >= -1e-6,
            "max closed-form error " + fmt("%.2e", worst) + "; mu(a0)=0 lowest value " + fmt("%.2e", lowest)};
}

Outcome unregularised_rate() {
    std::size_t violations = 0;
    double worst_ratio = 0.0;
    for (std::uint64_t k = 0; k < 5; ++k) {
        GeneratorSpec g;
        g.n_states = 3 + static_cast<Index>(k % 3);
        g.n_actions = 3;
        g.seed = 9000 + k;
        g.gamma = 0.9;
        g.unregularised = true;
        const TabularMDP m = generate_mdp(g);
        const FlowTrajectory traj =
            integrate_unregularised_flow(m, random_logits(g.n_states, 3, 9100 + k), grid(20.0, 0.01, 10));
        const BoundReport rep = check_polynomial_rate(traj);
        violations += rep.violations();
        for (std::size_t i = 1; i < rep.times.size(); ++i) {
            worst_ratio = std::max(worst_ratio, rep.lhs[i] / rep.rhs[i]);
        }
    }
    return {violations == 0,
            std::to_string(violations) + " violations; max gap / bound " + fmt("%.3f", worst_ratio)};
}

Outcome derivative_formulas() {
    double rel = 0.0;
    double trend_lo = kInf;
    double trend_hi = 0.0;
    double bound = 0.0;
    double hessian = 0.0;
    bool legendre = true;
    for (std::uint64_t k = 0; k < 100; ++k) {
        const Index S = 2 + static_cast<Index>(k % 4);
        const Index A = 2 + static_cast<Index>(k % 3);
        const TabularMDP m = instance(10000 + k, S, A, k % 2 ? 0.9 : 0.5, k % 3 ? 1.0 : 0.2);
        const Matrix Z = random_logits(S, A, 10100 + k, 1.5);
        const Matrix g = random_logits(S, A, 10200 + k);
        const DerivativeReport r = derivative_checks(m, Z, g);
        rel = std::max(rel, r.max_rel_error());
        for (double x : r.trend_ratio) {
            trend_lo = std::min(trend_lo, x);
            trend_hi = std::max(trend_hi, x);
        }
        bound = std::max(bound, r.max_bound_ratio());
        const Vector nu = Vector::Constant(S, 1.0 / static_cast<double>(S));
        hessian = std::max(hessian, hessian_fd_check(Z, g, nu, m).rel_error);
        legendre = legendre && legendre_check(Z, nu, m, 20, 10300 + k).ok();
    }
    return {rel <= 1e-5 && hessian <= 1e-5 && trend_lo >= 3.0 && trend_hi <= 5.0 && bound <= 1.0 && legendre,
            "max relative error " + fmt("%.2e", rel) + " (Hessian " + fmt("%.2e", hessian) +
                "); error ratio per eps halving in [" + fmt("%.2f", trend_lo) + ", " + fmt("%.2f", trend_hi) +
                "]; max norm / bound " + fmt("%.3f", bound) + (legendre ? "; conjugate duality ok" : "; duality FAILED")};
}

Outcome negative_control() {
    GeneratorSpec g;
    g.n_states = 3;
    g.n_actions = 3;
    g.seed = 2;
    g.gamma = 0.99;
    g.tau = 0.1;
    g.cost_scale = 10.0;
    const TabularMDP m = generate_mdp(g);
    const FlowTrajectory traj = integrate_mirror_flow(m, random_logits(3, 3, 102, 10.0), grid(30.0, 0.01, 10));
    const LinearConvergenceReport honest = check_linear_convergence(traj);
    const LinearConvergenceReport halved = check_linear_convergence(traj, 0.5);
    const std::size_t v = halved.gap.violations() + halved.policy.violations();
    const bool honest_ok = honest.gap.all_hold() && honest.policy.all_hold();
    return {honest_ok && v > 0, std::to_string(v) + " violations with the halved rhs (honest check " +
                                    (honest_ok ? "holds" : "FAILS") + ")"};
}

} // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        std::function<Outcome()> run;
    };
    std::vector<ExponentialRun> runs;
    const std::vector<Criterion> criteria{
        {1, "soft DP correctness", soft_dp_correctness},
        {2, "performance-difference identity", performance_difference_identity},
        {3, "exponential convergence",
         [&] {
             runs = exponential_runs();
             return exponential_convergence(runs);
         }},
        {4, "dual/primal equivalence", dual_primal_equivalence},
        {5, "value monotonicity", [&] { return monotonicity(runs); }},
        {6, "stability under Q errors", stability},
        {7, "natural policy gradient", npg},
        {8, "bandit closed form", bandit_closed_form},
        {9, "unregularised polynomial rate", unregularised_rate},
        {10, "derivative and Hessian formulas", derivative_formulas},
        {11, "negative control", negative_control},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failed += o.pass ? 0 : 1;
        std::printf("[%s] %2d %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}

#pragma once

#include "frmdp/io.hpp"

#include <atomic>
#include <chrono>
#include <map>
#include <set>
#include <thread>
#include <variant>

namespace frmdp {

/// Configuration error carrying the JSON pointer of the offending field.
class ConfigError : public InvalidInput {
  public:
    ConfigError(const std::string& where, const std::string& what) : InvalidInput(where + ": " + what) {}
};

/// Read-only view of a JSON object that remembers where it sits in the document.
class ConfigNode {
  public:
    ConfigNode(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) {
            throw ConfigError(where_, "expected an object");
        }
    }

    bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }
    std::string path(const std::string& key) const { return where_ + "/" + key; }
    const std::string& where() const { return where_; }
    const nlohmann::json& raw(const std::string& key) const { return j_.at(key); }
    const nlohmann::json& json() const { return j_; }

    template <class T> T get(const std::string& key) const {
        if (!has(key)) {
            throw ConfigError(path(key), "required field missing");
        }
        try {
            return j_.at(key).get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(path(key), std::string("wrong type (") + e.what() + ")");
        }
    }

    template <class T> T get(const std::string& key, T fallback) const { return has(key) ? get<T>(key) : fallback; }

    ConfigNode child(const std::string& key) const { return {j_.at(key), path(key)}; }

    void reject_unknown(std::initializer_list<const char*> known) const {
        const std::set<std::string> allowed(known.begin(), known.end());
        for (const auto& item : j_.items()) {
            if (!allowed.count(item.key())) {
                throw ConfigError(path(item.key()), "unknown field");
            }
        }
    }

  private:
    const nlohmann::json& j_;
    std::string where_;
};

enum class FlowKind { mirror, fisher_rao, approximate, unregularised, npg };

inline const std::map<std::string, FlowKind>& flow_kinds() {
    static const std::map<std::string, FlowKind> kinds{{"mirror", FlowKind::mirror},
                                                       {"fisher_rao", FlowKind::fisher_rao},
                                                       {"approximate", FlowKind::approximate},
                                                       {"unregularised", FlowKind::unregularised},
                                                       {"npg", FlowKind::npg}};
    return kinds;
}

inline std::string to_string(FlowKind k) {
    for (const auto& [name, kind] : flow_kinds()) {
        if (kind == k) {
            return name;
        }
    }
    return "?";
}

/// Checks each flow kind supports, in the order they run by default.
inline std::vector<std::string> supported_checks(FlowKind k) {
    switch (k) {
    case FlowKind::mirror:
    case FlowKind::fisher_rao:
        return {"exponential_gap", "exponential_policy", "monotone_values", "kl_ode_residual"};
    case FlowKind::approximate:
        return {"stability", "stability_shifted"};
    case FlowKind::unregularised:
        return {"polynomial_gap", "monotone_values", "bandit_closed_form"};
    case FlowKind::npg:
        return {"npg_stability"};
    }
    return {};
}

/// Results each check is evidence for; written to summary.json as the traceability map.
inline const std::map<std::string, std::vector<std::string>>& traceability_map() {
    static const std::map<std::string, std::vector<std::string>> map{
        {"exponential convergence of the regularised flow", {"exponential_gap", "exponential_policy"}},
        {"value monotonicity along the flow", {"monotone_values"}},
        {"KL-to-optimum evolution", {"kl_ode_residual"}},
        {"stability under Q-evaluation error", {"stability", "stability_shifted"}},
        {"natural policy gradient with log-linear features", {"npg_stability"}},
        {"polynomial rate without regularisation", {"polynomial_gap"}},
        {"closed-form bandit trajectory", {"bandit_closed_form"}},
    };
    return map;
}

struct InitialSpec {
    enum class Kind { zero, random, logits } kind = Kind::zero;
    std::uint64_t seed = 0;
    double scale = 1.0;
    Matrix logits;
};

struct FeatureSpec {
    enum class Kind { one_hot, constant, random } kind = Kind::one_hot;
    Index dim = 1;
    std::uint64_t seed = 0;
};

struct ExperimentConfig {
    std::string name = "experiment";
    std::variant<std::string, GeneratorSpec, nlohmann::json> mdp_source; ///< file, generator, inline model
    FlowKind kind = FlowKind::mirror;
    FlowConfig flow;
    bool dt_given = false;
    NpgConfig npg;
    FeatureSpec features;
    InitialSpec initial;
    std::vector<std::string> diagnostics;
    std::string output_dir = "out";
    bool plots = false;
    double bound_multiplier = 1.0;
    double kl_threshold = 1e-6;
    bool compare_exact = false;
};

namespace detail {

inline Matrix matrix_field(const ConfigNode& n, const std::string& key) {
    const auto rows = n.get<std::vector<std::vector<double>>>(key);
    if (rows.empty() || rows.front().empty()) {
        throw ConfigError(n.path(key), "empty matrix");
    }
    Matrix M(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows.front().size()) {
            throw ConfigError(n.path(key), "ragged matrix");
        }
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            M(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
        }
    }
    return M;
}

inline Integrator parse_integrator(const ConfigNode& n) {
    const auto s = n.get<std::string>("integrator", "rk4");
    if (s == "rk4") {
        return Integrator::rk4;
    }
    if (s == "euler") {
        return Integrator::euler;
    }
    throw ConfigError(n.path("integrator"), "expected \"rk4\" or \"euler\"");
}

inline PerturbationSpec parse_perturbation(const ConfigNode& n) {
    n.reject_unknown({"amplitude", "seed", "profile", "state_only"});
    PerturbationSpec p;
    p.amplitude = n.get<double>("amplitude");
    if (!(p.amplitude >= 0.0)) {
        throw ConfigError(n.path("amplitude"), "must be >= 0");
    }
    p.seed = n.get<std::uint64_t>("seed", 0);
    const auto profile = n.get<std::string>("profile", "constant");
    if (profile == "constant") {
        p.profile = PerturbationProfile::constant;
    } else if (profile == "sinusoidal") {
        p.profile = PerturbationProfile::sinusoidal;
    } else if (profile == "decaying") {
        p.profile = PerturbationProfile::decaying;
    } else {
        throw ConfigError(n.path("profile"), "expected constant, sinusoidal or decaying");
    }
    p.state_only = n.get<bool>("state_only", false);
    return p;
}

} // namespace detail

/// `base_dir` resolves relative MDP file paths.
inline ExperimentConfig parse_experiment(const nlohmann::json& j, const std::filesystem::path& base_dir = {},
                                         const std::string& where = "") {
    const ConfigNode root(j, where);
    root.reject_unknown({"name", "mdp", "flow", "npg", "features", "initial", "diagnostics", "output_dir",
                         "output_format", "bound_multiplier", "kl_threshold", "compare_exact"});
    ExperimentConfig cfg;
    cfg.name = root.get<std::string>("name", cfg.name);
    if (cfg.name.empty() || cfg.name.find_first_of("/\\") != std::string::npos || cfg.name == "." || cfg.name == "..") {
        throw ConfigError(root.path("name"), "must be a plain directory name");
    }

    if (!root.has("mdp")) {
        throw ConfigError(root.path("mdp"), "required field missing");
    }
    const ConfigNode mdp = root.child("mdp");
    const int sources = int(mdp.has("file")) + int(mdp.has("generator")) + int(mdp.has("inline"));
    if (sources != 1) {
        throw ConfigError(mdp.where(), "give exactly one of file, generator, inline");
    }
    if (mdp.has("file")) {
        std::filesystem::path p = mdp.get<std::string>("file");
        cfg.mdp_source = (p.is_relative() && !base_dir.empty() ? base_dir / p : p).string();
    } else if (mdp.has("generator")) {
        const ConfigNode g = mdp.child("generator");
        g.reject_unknown({"n_states", "n_actions", "cost_scale", "transition_concentration", "seed", "gamma", "tau",
                          "mu", "rho", "unregularised"});
        g.get<Index>("n_states");
        g.get<Index>("n_actions");
        try {
            cfg.mdp_source = GeneratorSpec::from_json(g.json());
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(g.where(), e.what());
        }
    } else {
        cfg.mdp_source = mdp.raw("inline");
    }

    if (!root.has("flow")) {
        throw ConfigError(root.path("flow"), "required field missing");
    }
    const ConfigNode flow = root.child("flow");
    flow.reject_unknown({"kind", "t_end", "dt", "integrator", "snapshot_every", "perturbation"});
    const auto kind = flow.get<std::string>("kind", "mirror");
    const auto it = flow_kinds().find(kind);
    if (it == flow_kinds().end()) {
        throw ConfigError(flow.path("kind"), "unknown flow kind \"" + kind + "\"");
    }
    cfg.kind = it->second;
    cfg.flow.t_end = flow.get<double>("t_end");
    cfg.dt_given = flow.has("dt");
    cfg.flow.dt = flow.get<double>("dt", 0.01);
    cfg.flow.integrator = detail::parse_integrator(flow);
    cfg.flow.snapshot_every = flow.get<int>("snapshot_every", 1);
    if (!(cfg.flow.t_end > 0.0) || !std::isfinite(cfg.flow.t_end)) {
        throw ConfigError(flow.path("t_end"), "must be > 0");
    }
    if (!(cfg.flow.dt > 0.0) || !std::isfinite(cfg.flow.dt)) {
        throw ConfigError(flow.path("dt"), "must be > 0");
    }
    if (cfg.flow.snapshot_every < 1) {
        throw ConfigError(flow.path("snapshot_every"), "must be >= 1");
    }
    switch (cfg.kind) {
    case FlowKind::mirror:
    case FlowKind::fisher_rao:
        cfg.flow.mode = FlowMode::regularised;
        break;
    case FlowKind::approximate:
        cfg.flow.mode = FlowMode::approximate;
        break;
    case FlowKind::unregularised:
        cfg.flow.mode = FlowMode::unregularised;
        break;
    case FlowKind::npg:
        cfg.flow.mode = FlowMode::approximate;
        break;
    }
    if (flow.has("perturbation")) {
        if (cfg.kind != FlowKind::approximate) {
            throw ConfigError(flow.path("perturbation"), "only the approximate flow takes a perturbation");
        }
        cfg.flow.perturbation = detail::parse_perturbation(flow.child("perturbation"));
    }

    if (root.has("npg")) {
        if (cfg.kind != FlowKind::npg) {
            throw ConfigError(root.path("npg"), "only valid with flow kind npg");
        }
        const ConfigNode n = root.child("npg");
        n.reject_unknown({"R0", "R_growth", "lambda0", "lambda_decay"});
        cfg.npg.R0 = n.get<double>("R0", cfg.npg.R0);
        cfg.npg.R_growth = n.get<double>("R_growth", cfg.npg.R_growth);
        cfg.npg.lambda0 = n.get<double>("lambda0", cfg.npg.lambda0);
        cfg.npg.lambda_decay = n.get<double>("lambda_decay", cfg.npg.lambda_decay);
        try {
            NpgConfig probe = cfg.npg;
            probe.t_end = 1.0;
            probe.validate();
        } catch (const InvalidInput& e) {
            throw ConfigError(n.where(), e.what());
        }
    }
    if (root.has("features")) {
        if (cfg.kind != FlowKind::npg) {
            throw ConfigError(root.path("features"), "only valid with flow kind npg");
        }
        const ConfigNode f = root.child("features");
        f.reject_unknown({"kind", "dim", "seed"});
        const auto fk = f.get<std::string>("kind", "one_hot");
        if (fk == "one_hot") {
            cfg.features.kind = FeatureSpec::Kind::one_hot;
        } else if (fk == "constant") {
            cfg.features.kind = FeatureSpec::Kind::constant;
        } else if (fk == "random") {
            cfg.features.kind = FeatureSpec::Kind::random;
        } else {
            throw ConfigError(f.path("kind"), "expected one_hot, constant or random");
        }
        cfg.features.dim = f.get<Index>("dim", 1);
        if (cfg.features.dim < 1) {
            throw ConfigError(f.path("dim"), "must be >= 1");
        }
        cfg.features.seed = f.get<std::uint64_t>("seed", 0);
    }

    if (root.has("initial")) {
        const ConfigNode in = root.child("initial");
        in.reject_unknown({"kind", "seed", "scale", "logits"});
        const auto ik = in.get<std::string>("kind", "zero");
        if (ik == "zero") {
            cfg.initial.kind = InitialSpec::Kind::zero;
        } else if (ik == "random") {
            cfg.initial.kind = InitialSpec::Kind::random;
        } else if (ik == "logits") {
            cfg.initial.kind = InitialSpec::Kind::logits;
            cfg.initial.logits = detail::matrix_field(in, "logits");
        } else {
            throw ConfigError(in.path("kind"), "expected zero, random or logits");
        }
        cfg.initial.seed = in.get<std::uint64_t>("seed", 0);
        cfg.initial.scale = in.get<double>("scale", 1.0);
    }

    const std::vector<std::string> supported = supported_checks(cfg.kind);
    if (root.has("diagnostics")) {
        cfg.diagnostics = root.get<std::vector<std::string>>("diagnostics");
        for (std::size_t i = 0; i < cfg.diagnostics.size(); ++i) {
            if (std::find(supported.begin(), supported.end(), cfg.diagnostics[i]) == supported.end()) {
                throw ConfigError(root.path("diagnostics") + "/" + std::to_string(i),
                                  "check \"" + cfg.diagnostics[i] + "\" does not apply to flow kind " + kind);
            }
        }
    } else {
        cfg.diagnostics = supported;
        if (cfg.kind == FlowKind::unregularised) {
            cfg.diagnostics.pop_back();
        }
    }

    cfg.output_dir = root.get<std::string>("output_dir", cfg.output_dir);
    const auto format = root.get<std::string>("output_format", "csv");
    if (format != "csv" && format != "csv+plot") {
        throw ConfigError(root.path("output_format"), "expected \"csv\" or \"csv+plot\"");
    }
    cfg.plots = format == "csv+plot";
    cfg.bound_multiplier = root.get<double>("bound_multiplier", 1.0);
    if (!(cfg.bound_multiplier > 0.0)) {
        throw ConfigError(root.path("bound_multiplier"), "must be > 0");
    }
    cfg.kl_threshold = root.get<double>("kl_threshold", cfg.kl_threshold);
    cfg.compare_exact = root.get<bool>("compare_exact", cfg.kind == FlowKind::npg);
    return cfg;
}

/// A single experiment, or {"defaults": {...}, "experiments": [...]} where each
/// entry is merge-patched over the defaults.
inline std::vector<ExperimentConfig> parse_batch(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    if (!j.is_object()) {
        throw ConfigError("", "expected an object");
    }
    if (!j.contains("experiments")) {
        return {parse_experiment(j, base_dir)};
    }
    for (const auto& item : j.items()) {
        if (item.key() != "defaults" && item.key() != "experiments") {
            throw ConfigError("/" + item.key(), "unknown field in a batch file");
        }
    }
    const nlohmann::json defaults = j.value("defaults", nlohmann::json::object());
    const auto& list = j.at("experiments");
    if (!list.is_array() || list.empty()) {
        throw ConfigError("/experiments", "expected a non-empty array");
    }
    std::vector<ExperimentConfig> out;
    std::set<std::string> names;
    for (std::size_t i = 0; i < list.size(); ++i) {
        nlohmann::json merged = defaults;
        merged.merge_patch(list[i]);
        out.push_back(parse_experiment(merged, base_dir, "/experiments/" + std::to_string(i)));
        if (!names.insert(out.back().name).second) {
            throw ConfigError("/experiments/" + std::to_string(i) + "/name", "duplicate experiment name");
        }
    }
    return out;
}

inline std::vector<ExperimentConfig> load_batch(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw InvalidInput("cannot open config " + path);
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw InvalidInput(path + ": " + e.what());
    }
    try {
        return parse_batch(j, std::filesystem::path(path).parent_path());
    } catch (const InvalidInput& e) {
        throw InvalidInput(path + ": " + e.what());
    }
}

inline TabularMDP build_mdp(const ExperimentConfig& cfg) {
    if (const auto* file = std::get_if<std::string>(&cfg.mdp_source)) {
        return load_mdp(*file);
    }
    if (const auto* gen = std::get_if<GeneratorSpec>(&cfg.mdp_source)) {
        try {
            return generate_mdp(*gen);
        } catch (const InvalidInput& e) {
            throw ConfigError("/mdp/generator", e.what());
        }
    }
    try {
        return mdp_from_json(std::get<nlohmann::json>(cfg.mdp_source));
    } catch (const InvalidInput& e) {
        throw ConfigError("/mdp/inline", e.what());
    }
}

inline FeatureMap build_features(const FeatureSpec& spec, Index S, Index A) {
    switch (spec.kind) {
    case FeatureSpec::Kind::one_hot:
        return FeatureMap::one_hot(S, A);
    case FeatureSpec::Kind::constant:
        return FeatureMap::constant(S, A, Vector::Ones(spec.dim));
    case FeatureSpec::Kind::random:
        return {random_logits(S * A, spec.dim, spec.seed), S, A};
    }
    throw InvalidInput("unknown feature kind");
}

/// Closed-form value of the unregularised flow on a single-state model:
/// pi_t(a) is proportional to mu(a) e^{Z0(a) - c(a) t}.
inline double bandit_value(const TabularMDP& m, const Matrix& Z0, double t) {
    double num = 0.0;
    double den = 0.0;
    const double shift = (Z0.row(0) - t * m.cost().row(0)).maxCoeff();
    for (Index a = 0; a < m.n_actions(); ++a) {
        const double w = m.mu()(a) * std::exp(Z0(0, a) - t * m.cost()(0, a) - shift);
        num += w * m.cost()(0, a);
        den += w;
    }
    return num / den / (1.0 - m.gamma());
}

struct ExperimentResult {
    std::string name;
    std::filesystem::path dir;
    bool bounds_hold = false;
    std::string error; ///< empty unless the run threw
    nlohmann::json summary;
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline void plot_trajectory(const std::filesystem::path& dir, const FlowTrajectory& traj,
                            const std::vector<double>& bound, const std::string& bound_label) {
    std::vector<PlotSeries> gap{{"value gap", "#1f77b4", traj.times, traj.value_gaps},
                                {bound_label, "#d62728", traj.times, bound, true}};
    write_text(dir / "value_gap.svg", svg_log_plot("value gap", "t", gap));
    std::vector<PlotSeries> kl{{"KL to optimum", "#2ca02c", traj.times, traj.kl_to_opt}};
    if (traj.mode != FlowMode::unregularised) {
        std::vector<double> decay;
        for (double t : traj.times) {
            decay.push_back(std::exp(-traj.tau * t) * traj.kl0);
        }
        kl.push_back({"e^{-tau t} KL0", "#d62728", traj.times, decay, true});
    }
    write_text(dir / "kl.svg", svg_log_plot("KL to optimum", "t", kl));
}

} // namespace detail

/// Runs one experiment into `dir`, which it owns exclusively.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    using clock = std::chrono::steady_clock;
    const auto t_total = clock::now();
    ExperimentResult res;
    res.name = cfg.name;
    res.dir = dir;
    fs::create_directories(dir / "bounds");

    const TabularMDP m = build_mdp(cfg);
    write_json(dir / "mdp.json", mdp_to_json(m));
    if (cfg.kind != FlowKind::unregularised && m.unregularised()) {
        throw ConfigError("/flow/kind", "model is unregularised; use flow kind unregularised");
    }
    if (cfg.kind == FlowKind::unregularised && !m.unregularised()) {
        throw ConfigError("/flow/kind", "flow kind unregularised needs an unregularised model");
    }

    const auto t_solve = clock::now();
    const FlowReference ref = make_reference(m);
    nlohmann::json optimum;
    if (m.unregularised()) {
        optimum = solution_to_json(solve_unregularised_optimal(m));
    } else {
        const OptimalSolution sol = reference_optimal(m);
        optimum = solution_to_json(sol);
    }
    write_json(dir / "solution.json", optimum);
    const double solve_s = detail::seconds_since(t_solve);

    FlowConfig flow = cfg.flow;
    if (!cfg.dt_given) {
        flow.dt = default_dt(m.tau());
    }
    Matrix Z0 = Matrix::Zero(m.n_states(), m.n_actions());
    if (cfg.initial.kind == InitialSpec::Kind::random) {
        Z0 = random_logits(m.n_states(), m.n_actions(), cfg.initial.seed, cfg.initial.scale);
    } else if (cfg.initial.kind == InitialSpec::Kind::logits) {
        if (cfg.initial.logits.rows() != m.n_states() || cfg.initial.logits.cols() != m.n_actions()) {
            throw ConfigError("/initial/logits", "shape does not match the model");
        }
        Z0 = cfg.initial.logits;
    }

    const auto t_flow = clock::now();
    FlowTrajectory traj;
    std::optional<NpgTrajectory> npg;
    switch (cfg.kind) {
    case FlowKind::mirror:
        traj = integrate_mirror_flow(m, Z0, flow, &ref);
        break;
    case FlowKind::fisher_rao:
        traj = integrate_fisher_rao_flow(m, policy_from_logits(Z0, m.mu()), flow, &ref);
        break;
    case FlowKind::approximate:
        traj = integrate_approximate_flow(m, Z0, flow,
                                          flow.perturbation ? perturbed_q(m, *flow.perturbation) : exact_q(), &ref);
        break;
    case FlowKind::unregularised:
        traj = integrate_unregularised_flow(m, Z0, flow, &ref);
        break;
    case FlowKind::npg: {
        if (cfg.initial.kind == InitialSpec::Kind::logits) {
            throw ConfigError("/initial/kind", "the NPG flow starts from parameters; use zero or random");
        }
        const FeatureMap g = build_features(cfg.features, m.n_states(), m.n_actions());
        Vector theta0 = Vector::Zero(g.dim());
        if (cfg.initial.kind == InitialSpec::Kind::random) {
            theta0 = random_logits(g.dim(), 1, cfg.initial.seed, cfg.initial.scale);
        }
        NpgConfig ncfg = cfg.npg;
        ncfg.t_end = flow.t_end;
        ncfg.dt = flow.dt;
        ncfg.integrator = flow.integrator;
        ncfg.snapshot_every = flow.snapshot_every;
        npg = integrate_npg_flow(m, g, theta0, ncfg, &ref);
        traj = npg->flow;
        Z0 = g.logits(theta0);
        break;
    }
    }
    const double flow_s = detail::seconds_since(t_flow);

    const auto t_diag = clock::now();
    const double mult = cfg.bound_multiplier;
    const double kappa =
        npg ? npg->kappa
            : concentrability(ref.d_star, ref.pi_star, m.rho(), detail::broadcast_rows(m.mu(), m.n_states()));
    std::vector<BoundReport> reports;
    for (const auto& name : cfg.diagnostics) {
        if (name == "exponential_gap") {
            reports.push_back(check_linear_convergence(traj, mult).gap);
        } else if (name == "exponential_policy") {
            reports.push_back(check_linear_convergence(traj, mult).policy);
        } else if (name == "monotone_values") {
            reports.push_back(check_monotonicity(traj));
        } else if (name == "kl_ode_residual") {
            const double h = flow.grid().second * flow.snapshot_every * std::max(1.0, m.tau());
            double scale = 1.0;
            for (std::size_t k = 0; k < traj.size(); ++k) {
                scale = std::max(scale, m.tau() * traj.kl_to_opt[k] + (1.0 - m.gamma()) * traj.value_gaps[k]);
            }
            reports.push_back(check_kl_ode(traj, 1e-6 + h * h * scale));
        } else if (name == "stability" || name == "stability_shifted") {
            reports.push_back(check_stability_bound(traj, kappa, name == "stability_shifted", mult));
        } else if (name == "npg_stability") {
            reports.push_back(check_npg_bound(*npg, mult));
        } else if (name == "polynomial_gap") {
            reports.push_back(check_polynomial_rate(traj, mult));
        } else if (name == "bandit_closed_form") {
            if (m.n_states() != 1) {
                throw ConfigError("/diagnostics", "bandit_closed_form needs a single-state model");
            }
            std::vector<double> lhs;
            for (std::size_t k = 0; k < traj.size(); ++k) {
                lhs.push_back(std::abs(traj.values[k](0) - bandit_value(m, Z0, traj.times[k])));
            }
            reports.push_back(
                BoundReport::make(name, traj.times, lhs, std::vector<double>(traj.size(), 1e-6), 0.0));
        }
    }

    nlohmann::json summary;
    summary["name"] = cfg.name;
    summary["flow"] = to_string(cfg.kind);
    summary["mdp"] = {{"n_states", m.n_states()},
                      {"n_actions", m.n_actions()},
                      {"gamma", m.gamma()},
                      {"tau", m.tau()},
                      {"unregularised", m.unregularised()}};
    summary["grid"] = {{"t_end", flow.t_end},
                       {"dt", flow.grid().second},
                       {"steps", flow.grid().first},
                       {"snapshots", traj.size()}};
    summary["kl0"] = json_number(traj.kl0);
    summary["V_star_rho"] = ref.V_star_rho;
    summary["kappa"] = json_number(kappa);
    summary["bound_multiplier"] = mult;
    summary["final_value_gap"] = json_number(traj.value_gaps.back());
    if (!m.unregularised()) {
        const double target = cfg.kl_threshold;
        nlohmann::json kl = {{"threshold", target}};
        if (traj.kl0 <= target) {
            kl["time"] = 0.0;
        } else {
            const double t_hit = std::log(traj.kl0 / target) / m.tau();
            kl["time"] = json_number(t_hit);
        }
        kl["reached_within_horizon"] = kl["time"].get<double>() <= flow.t_end;
        summary["kl_decay"] = kl;
        if (cfg.kind == FlowKind::mirror || cfg.kind == FlowKind::fisher_rao) {
            const double slope = log_gap_slope(traj, 0.5 * flow.t_end);
            summary["log_gap_slope_over_tau"] = json_number(slope / m.tau());
        }
    }
    if (cfg.compare_exact && !m.unregularised()) {
        FlowConfig exact_cfg = flow;
        exact_cfg.mode = FlowMode::regularised;
        exact_cfg.perturbation.reset();
        const FlowTrajectory exact = integrate_mirror_flow(m, Z0, exact_cfg, &ref);
        summary["max_policy_deviation_from_exact_flow"] = max_policy_deviation(traj, exact);
    }

    bool all = true;
    nlohmann::json bounds = nlohmann::json::array();
    std::set<std::string> executed;
    for (const auto& r : reports) {
        all = all && r.all_hold();
        bounds.push_back(r.summary());
        executed.insert(r.name);
        std::ofstream csv(dir / "bounds" / (r.name + ".csv"), std::ios::binary);
        r.write_csv(csv);
    }
    summary["bounds"] = bounds;
    summary["all_bounds_hold"] = all;
    nlohmann::json trace = nlohmann::json::object();
    for (const auto& [result, checks] : traceability_map()) {
        nlohmann::json ran = nlohmann::json::array();
        for (const auto& c : checks) {
            if (executed.count(c)) {
                ran.push_back(c);
            }
        }
        if (!ran.empty()) {
            trace[result] = ran;
        }
    }
    summary["traceability"] = trace;
    summary["tolerances"] = tolerances().to_json();

    {
        std::ofstream csv(dir / "trajectory.csv", std::ios::binary);
        write_trajectory_csv(csv, traj, mult);
    }
    if (npg) {
        std::ofstream csv(dir / "npg.csv", std::ios::binary);
        write_npg_csv(csv, *npg, mult);
    }
    if (cfg.plots) {
        std::vector<double> bound = npg ? npg->bound_rhs : traj.bound_values;
        for (double& b : bound) {
            b *= mult;
        }
        detail::plot_trajectory(dir, traj, bound, npg ? "stability bound" : "rate bound");
    }
    const double diag_s = detail::seconds_since(t_diag);
    summary["runtime_seconds"] = {
        {"solve", solve_s}, {"integrate", flow_s}, {"diagnostics", diag_s}, {"total", detail::seconds_since(t_total)}};
    write_json(dir / "summary.json", summary);

    res.bounds_hold = all;
    res.summary = std::move(summary);
    return res;
}

/// Runs every experiment under root/<name> on up to `jobs` threads; results keep input order.
inline std::vector<ExperimentResult> run_batch(const std::vector<ExperimentConfig>& configs,
                                               const std::filesystem::path& root, unsigned jobs = 1) {
    std::vector<ExperimentResult> results(configs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < configs.size(); i = next++) {
            try {
                results[i] = run_experiment(configs[i], root / configs[i].name);
            } catch (const std::exception& e) {
                results[i].name = configs[i].name;
                results[i].dir = root / configs[i].name;
                results[i].error = e.what();
            }
        }
    };
    const unsigned n = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(configs.size())));
    std::vector<std::thread> pool;
    for (unsigned k = 1; k < n; ++k) {
        pool.emplace_back(worker);
    }
    worker();
    for (auto& t : pool) {
        t.join();
    }
    return results;
}

} // namespace frmdp

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdlib>
#include <limits>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace frmdp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

constexpr double kInf = std::numeric_limits<double>::infinity();

// Error hierarchy. Every failure raised by the library derives from Error so
// callers can catch one type at the CLI boundary.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
  public:
    using Error::Error;
};

// Policy has zero mass where the reference measure charges an action.
class DomainError : public Error {
  public:
    using Error::Error;
};

class ConvergenceFailure : public Error {
  public:
    ConvergenceFailure(const std::string& what, double residual)
        : Error(what + " (residual " + std::to_string(residual) + ")"), residual_(residual) {}
    double residual() const noexcept { return residual_; }

  private:
    double residual_;
};

class IntegratorInstability : public Error {
  public:
    IntegratorInstability(const std::string& what, double time)
        : Error(what + " at t=" + std::to_string(time) + "; retry with a smaller dt"), time_(time) {}
    double time() const noexcept { return time_; }

  private:
    double time_;
};

/// Numerical tolerances shared by all modules.
///
/// Defaults can be overridden process-wide through the FRMDP_TOL_OVERRIDE
/// environment variable, which holds a JSON object with any subset of the keys
/// below, e.g. `{"construction": 1e-11, "bound_rel": 1e-7}`.
struct Tolerances {
    double construction = 1e-12; ///< probability vectors sum to one
    double roundtrip = 1e-10;    ///< exp(log density) * mu reconstructs pi
    double bound_rel = 1e-8;     ///< holds <=> lhs <= rhs + bound_rel * (1 + |rhs|)
    double apriori_slack = 1e-6; ///< slack on a-priori norm bounds during integration
    double kkt_radius = 1e-12;   ///< radius accuracy of the ball-constrained ridge solve
    double diagnostics_solve = 1e-10; ///< tolerance of the reference optimal solve

    static Tolerances from_json(const nlohmann::json& j) { return from_json(j, Tolerances()); }

    static Tolerances from_json(const nlohmann::json& j, Tolerances base) {
        auto take = [&](const char* key, double& field) {
            if (j.contains(key)) {
                field = j.at(key).get<double>();
            }
        };
        take("construction", base.construction);
        take("roundtrip", base.roundtrip);
        take("bound_rel", base.bound_rel);
        take("apriori_slack", base.apriori_slack);
        take("kkt_radius", base.kkt_radius);
        take("diagnostics_solve", base.diagnostics_solve);
        return base;
    }

    nlohmann::json to_json() const {
        return {{"construction", construction}, {"roundtrip", roundtrip},
                {"bound_rel", bound_rel},       {"apriori_slack", apriori_slack},
                {"kkt_radius", kkt_radius},     {"diagnostics_solve", diagnostics_solve}};
    }
};

namespace detail {
inline Tolerances load_tolerances() {
    const char* raw = std::getenv("FRMDP_TOL_OVERRIDE");
    if (raw == nullptr || *raw == '\0') {
        return {};
    }
    try {
        return Tolerances::from_json(nlohmann::json::parse(raw));
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("FRMDP_TOL_OVERRIDE is not a valid tolerance map: ") + e.what());
    }
}
} // namespace detail

/// Process-wide tolerances, read once from the environment.
inline const Tolerances& tolerances() {
    static const Tolerances tol = detail::load_tolerances();
    return tol;
}

inline double sup_norm(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }
inline double sup_norm(const Vector& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

} // namespace frmdp

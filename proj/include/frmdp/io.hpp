#pragma once

#include "frmdp/diagnostics.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace frmdp {

inline nlohmann::json matrix_to_json(const Matrix& M) {
    nlohmann::json rows = nlohmann::json::array();
    for (Index i = 0; i < M.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Index j = 0; j < M.cols(); ++j) {
            row.push_back(json_number(M(i, j)));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline nlohmann::json vector_to_json(const Vector& v) {
    nlohmann::json out = nlohmann::json::array();
    for (Index i = 0; i < v.size(); ++i) {
        out.push_back(json_number(v(i)));
    }
    return out;
}

inline nlohmann::json solution_to_json(const OptimalSolution& sol) {
    return {{"V_star", vector_to_json(sol.V_star)}, {"Q_star", matrix_to_json(sol.Q_star)},
            {"pi_star", matrix_to_json(sol.pi_star.pi)}, {"Z_star", matrix_to_json(sol.Z_star)},
            {"iterations", sol.iterations},          {"residual", json_number(sol.residual)}};
}

inline nlohmann::json solution_to_json(const HardOptimalSolution& sol) {
    return {{"V_star", vector_to_json(sol.V_star)}, {"pi_star", matrix_to_json(sol.pi_star)}};
}

/// Columns t, value_gap, kl_to_opt, bound, bound_holds, norm_Z, residual_kl_ode.
/// `bound` is the trajectory's own rate bound scaled by `multiplier`.
inline void write_trajectory_csv(std::ostream& os, const FlowTrajectory& traj, double multiplier = 1.0) {
    os << "t,value_gap,kl_to_opt,bound,bound_holds,norm_Z,residual_kl_ode\n";
    for (std::size_t k = 0; k < traj.size(); ++k) {
        const double bound = multiplier * traj.bound_values[k];
        os << format_double(traj.times[k]) << ',' << format_double(traj.value_gaps[k]) << ','
           << format_double(traj.kl_to_opt[k]) << ',' << format_double(bound) << ','
           << (bound_holds(traj.value_gaps[k], bound) ? 1 : 0) << ',' << format_double(traj.norm_Z[k]) << ','
           << format_double(traj.residual_kl_ode[k]) << '\n';
    }
}

/// Columns t, value_gap, approx_error_L1, bound, bound_holds, norm_theta, norm_w.
inline void write_npg_csv(std::ostream& os, const NpgTrajectory& npg, double multiplier = 1.0) {
    os << "t,value_gap,approx_error_L1,bound,bound_holds,norm_theta,norm_w\n";
    for (std::size_t k = 0; k < npg.flow.size(); ++k) {
        const double bound = multiplier * npg.bound_rhs[k];
        os << format_double(npg.flow.times[k]) << ',' << format_double(npg.flow.value_gaps[k]) << ','
           << format_double(npg.approx_error[k]) << ',' << format_double(bound) << ','
           << (bound_holds(npg.bound_lhs[k], bound) ? 1 : 0) << ',' << format_double(npg.norm_theta[k]) << ','
           << format_double(npg.norm_w[k]) << '\n';
    }
}

struct PlotSeries {
    std::string label;
    std::string color;
    std::vector<double> x;
    std::vector<double> y;
    bool dashed = false;
};

/// Static SVG line plot with a log10 y axis. Points with y <= 0 or non-finite y are dropped.
inline std::string svg_log_plot(const std::string& title, const std::string& x_label,
                                const std::vector<PlotSeries>& series) {
    constexpr double W = 640, H = 400, L = 70, R = 150, T = 40, B = 50;
    double x0 = kInf, x1 = -kInf, y0 = kInf, y1 = -kInf;
    for (const auto& s : series) {
        for (std::size_t k = 0; k < s.x.size(); ++k) {
            if (s.y[k] > 0.0 && std::isfinite(s.y[k])) {
                x0 = std::min(x0, s.x[k]);
                x1 = std::max(x1, s.x[k]);
                y0 = std::min(y0, std::log10(s.y[k]));
                y1 = std::max(y1, std::log10(s.y[k]));
            }
        }
    }
    if (!(x0 < x1)) {
        x0 = 0.0;
        x1 = 1.0;
    }
    y0 = std::floor(std::isfinite(y0) ? y0 : 0.0);
    y1 = std::ceil(std::isfinite(y1) ? y1 : 1.0);
    if (y1 <= y0) {
        y1 = y0 + 1.0;
    }
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double ly) { return H - B - (ly - y0) / (y1 - y0) * (H - T - B); };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
    os << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    const int decades = static_cast<int>(y1 - y0);
    const int step = std::max(1, decades / 8);
    for (int d = 0; d <= decades; d += step) {
        const double y = py(y0 + d);
        os << "<line x1=\"" << L << "\" x2=\"" << W - R << "\" y1=\"" << y << "\" y2=\"" << y
           << "\" stroke=\"#ddd\"/>\n";
        os << "<text x=\"" << L - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">1e" << static_cast<int>(y0) + d
           << "</text>\n";
    }
    for (int i = 0; i <= 5; ++i) {
        const double x = x0 + (x1 - x0) * i / 5.0;
        os << "<text x=\"" << px(x) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << format_double(x)
           << "</text>\n";
    }
    os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << x_label
       << "</text>\n";
    int legend = 0;
    for (const auto& s : series) {
        os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\"";
        if (s.dashed) {
            os << " stroke-dasharray=\"6,4\"";
        }
        os << " points=\"";
        for (std::size_t k = 0; k < s.x.size(); ++k) {
            if (s.y[k] > 0.0 && std::isfinite(s.y[k])) {
                const double ly = std::clamp(std::log10(s.y[k]), y0, y1);
                os << px(s.x[k]) << ',' << py(ly) << ' ';
            }
        }
        os << "\"/>\n";
        const double ly = T + 14 + 18 * legend++;
        os << "<line x1=\"" << W - R + 10 << "\" x2=\"" << W - R + 34 << "\" y1=\"" << ly - 4 << "\" y2=\"" << ly - 4
           << "\" stroke=\"" << s.color << "\"" << (s.dashed ? " stroke-dasharray=\"6,4\"" : "") << "/>\n";
        os << "<text x=\"" << W - R + 40 << "\" y=\"" << ly << "\">" << s.label << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out << text;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

} // namespace frmdp

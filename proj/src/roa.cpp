#include "pidtune/roa.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>

namespace pidtune {

double LyapunovFit::eval(double th, double thd) const {
    return coeffs[0] * th * th + coeffs[1] * th * thd + coeffs[2] * thd * thd +
           coeffs[3] * th + coeffs[4] * thd;
}

std::pair<double, bool> lyapunov_value(const Trajectory& traj, const PlantState& x_des,
                                       double dt, double tail_tol) {
    const Vec4 des = x_des.vec();
    double v = 0.0;
    for (const PlantState& s : traj.states) v += (s.vec() - des).squaredNorm() * dt;

    const std::size_t n = traj.states.size();
    const std::size_t tail_start = n - std::max<std::size_t>(n / 10, 1);
    bool converged = true;
    for (std::size_t i = tail_start; i < n; ++i)
        if ((traj.states[i].vec() - des).norm() >= tail_tol) converged = false;
    if (!std::isfinite(v)) {
        converged = false;
        v = std::numeric_limits<double>::infinity();
    }
    return {v, converged};
}

std::vector<Eigen::Vector2d> sample_grid(double theta_min, double theta_max,
                                         double theta_dot_min, double theta_dot_max,
                                         int resolution) {
    if (resolution < 2 || theta_max <= theta_min || theta_dot_max <= theta_dot_min)
        throw std::invalid_argument("sample_grid: bad ranges or resolution");
    std::vector<Eigen::Vector2d> grid;
    grid.reserve(static_cast<std::size_t>(resolution) * resolution);
    for (int i = 0; i < resolution; ++i) {
        const double th = theta_min + (theta_max - theta_min) * i / (resolution - 1);
        for (int j = 0; j < resolution; ++j) {
            const double thd = theta_dot_min + (theta_dot_max - theta_dot_min) * j / (resolution - 1);
            grid.emplace_back(th, thd);
        }
    }
    return grid;
}

LyapunovFit fit_lyapunov(const std::vector<LyapunovSample>& samples) {
    std::vector<const LyapunovSample*> conv;
    for (const auto& s : samples)
        if (s.converged && std::isfinite(s.V)) conv.push_back(&s);
    if (conv.size() < 6)
        throw std::invalid_argument("fit_lyapunov: need at least 6 converged samples");

    const Eigen::Index n = static_cast<Eigen::Index>(conv.size());
    Eigen::MatrixXd A(n, 5);
    Eigen::VectorXd b(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double th = conv[i]->theta0, thd = conv[i]->theta_dot0;
        A.row(i) << th * th, th * thd, thd * thd, th, thd;
        b[i] = conv[i]->V;
    }

    LyapunovFit fit;
    fit.coeffs = A.colPivHouseholderQr().solve(b);

    Eigen::Matrix2d quad;
    quad << fit.coeffs[0], 0.5 * fit.coeffs[1], 0.5 * fit.coeffs[1], fit.coeffs[2];
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(quad);
    if (eig.eigenvalues().minCoeff() <= 0)
        throw std::runtime_error(
            "fit_lyapunov: quadratic part not positive definite; refine the grid");

    const double ss_res = (A * fit.coeffs - b).squaredNorm();
    const double ss_tot = (b.array() - b.mean()).square().sum();
    fit.r_squared = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
    return fit;
}

std::pair<double, std::vector<Eigen::Vector2d>> level_set(
    const LyapunovFit& fit, const std::vector<LyapunovSample>& samples, int n_boundary) {
    // Largest c admitting only converged samples below it: the biggest
    // converged V* strictly below the smallest non-converged V*.
    double v_bad = std::numeric_limits<double>::infinity();
    for (const auto& s : samples)
        if (!s.converged) v_bad = std::min(v_bad, fit.eval(s.theta0, s.theta_dot0));

    double c_star = -std::numeric_limits<double>::infinity();
    for (const auto& s : samples) {
        if (!s.converged) continue;
        const double v = fit.eval(s.theta0, s.theta_dot0);
        if (v < v_bad) c_star = std::max(c_star, v);
    }
    if (!std::isfinite(c_star))
        throw std::runtime_error("level_set: no converged samples below the first failure");

    return {c_star, level_contour(fit, c_star, n_boundary)};
}

std::vector<Eigen::Vector2d> level_contour(const LyapunovFit& fit, double c, int n_boundary) {
    // Ellipse V*(p) = c: walk rays from the quadratic's minimizer.
    Eigen::Matrix2d Q;
    Q << fit.coeffs[0], 0.5 * fit.coeffs[1], 0.5 * fit.coeffs[1], fit.coeffs[2];
    const Eigen::Vector2d lin(fit.coeffs[3], fit.coeffs[4]);
    const Eigen::Vector2d center = -0.5 * Q.inverse() * lin;
    const double v_center = fit.eval(center[0], center[1]);

    std::vector<Eigen::Vector2d> boundary;
    for (int k = 0; k < n_boundary; ++k) {
        const double ang = 2.0 * std::numbers::pi * k / n_boundary;
        const Eigen::Vector2d dir(std::cos(ang), std::sin(ang));
        const double a = dir.dot(Q * dir); // V(center + t d) = v_center + a t^2
        if (a <= 0 || c <= v_center) continue;
        const double t = std::sqrt((c - v_center) / a);
        boundary.push_back(center + t * dir);
    }
    return boundary;
}

BoundaryReport verify_boundary(const PlantParams& params, const PIDGains& gains,
                               const PlantState& x_des, const std::vector<int>& channels,
                               const std::vector<Eigen::Vector2d>& points, int horizon,
                               double tail_tol) {
    if (points.empty()) throw std::invalid_argument("verify_boundary: no boundary points");
    PlantParams det = params;
    det.noise_cov.setZero();

    BoundaryReport report;
    int n_conv = 0;
    for (const Eigen::Vector2d& p : points) {
        const PlantState x0(0.0, 0.0, p[0], p[1]);
        PidOptions opts;
        opts.u_max = det.u_max;
        bool ok;
        Trajectory traj;
        try {
            traj = rollout(make_pid_controller(gains, x_des, channels, det.dt, opts), x0,
                           horizon, det, std::nullopt, 0);
            ok = lyapunov_value(traj, x_des, det.dt, tail_tol).second;
        } catch (const DivergenceError&) {
            ok = false;
        }
        report.converged.push_back(ok);
        report.trajectories.push_back(std::move(traj));
        if (ok) ++n_conv;
    }
    report.fraction_converged = static_cast<double>(n_conv) / points.size();
    return report;
}

RoaResult estimate_roa(const PlantParams& params, const PIDGains& gains, const PlantState& x_des,
                       const std::vector<int>& channels, const RoaConfig& config) {
    PlantParams det = params;
    det.noise_cov.setZero();
    const int horizon = static_cast<int>(std::lround(config.horizon_seconds / det.dt));

    const auto grid = sample_grid(-config.theta_range, config.theta_range,
                                  -config.theta_dot_range, config.theta_dot_range,
                                  config.resolution);

    RoaResult result;
    result.samples.reserve(grid.size());
    for (const Eigen::Vector2d& p : grid) {
        LyapunovSample s;
        s.theta0 = p[0];
        s.theta_dot0 = p[1];
        PidOptions opts;
        opts.u_max = det.u_max;
        try {
            const Trajectory traj =
                rollout(make_pid_controller(gains, x_des, channels, det.dt, opts),
                        PlantState(0, 0, p[0], p[1]), horizon, det, std::nullopt, 0);
            std::tie(s.V, s.converged) = lyapunov_value(traj, x_des, det.dt, config.tail_tol);
            if (!s.converged) s.V = std::numeric_limits<double>::infinity();
        } catch (const DivergenceError&) {
            s.V = std::numeric_limits<double>::infinity();
            s.converged = false;
        }
        result.samples.push_back(s);
    }

    result.estimate.lyapunov = fit_lyapunov(result.samples);
    std::tie(result.estimate.level, result.estimate.boundary_points) =
        level_set(result.estimate.lyapunov, result.samples);
    return result;
}

void write_roa_csv(const std::vector<LyapunovSample>& samples, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << std::setprecision(17);
    out << "theta0,theta_dot0,V,converged\n";
    for (const auto& s : samples)
        out << s.theta0 << ',' << s.theta_dot0 << ',' << s.V << ',' << (s.converged ? 1 : 0)
            << '\n';
}

} // namespace pidtune

#ifndef PIDTUNE_ROA_HPP
#define PIDTUNE_ROA_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "pidtune/distill.hpp"
#include "pidtune/plant.hpp"

namespace pidtune {

struct LyapunovSample {
    double theta0 = 0.0;
    double theta_dot0 = 0.0;
    double V = 0.0; // converse-Lyapunov integral, +inf when diverged
    bool converged = false;
};

// Quadratic candidate on (theta, theta_dot) with V(0,0) = 0:
//   V = a*th^2 + b*th*thd + c*thd^2 + d*th + e*thd
struct LyapunovFit {
    Eigen::Matrix<double, 5, 1> coeffs;
    double r_squared = 0.0;

    double eval(double theta, double theta_dot) const;
};

struct RoaEstimate {
    LyapunovFit lyapunov;
    double level = 0.0; // c*
    std::vector<Eigen::Vector2d> boundary_points;
};

// V = sum ||s - s_des||^2 dt over the trajectory; converged iff the state
// stays within tail_tol of s_des over the final 10% of steps.
std::pair<double, bool> lyapunov_value(const Trajectory& traj, const PlantState& x_des,
                                       double dt, double tail_tol);

// Uniform grid over (theta, theta_dot) with x = x_dot = 0.
std::vector<Eigen::Vector2d> sample_grid(double theta_min, double theta_max,
                                         double theta_dot_min, double theta_dot_max,
                                         int resolution);

// Least-squares quadratic fit over the converged samples; throws when the
// quadratic part is not positive definite.
LyapunovFit fit_lyapunov(const std::vector<LyapunovSample>& samples);

// Largest c such that every grid sample inside {V* <= c} converged, plus
// points sampled on the V* = c* contour.
std::pair<double, std::vector<Eigen::Vector2d>> level_set(
    const LyapunovFit& fit, const std::vector<LyapunovSample>& samples, int n_boundary = 24);

// Points on the V* = c contour of the fitted quadratic (rays from its
// minimizer); empty when c does not exceed the minimum of the fit.
std::vector<Eigen::Vector2d> level_contour(const LyapunovFit& fit, double c, int n_boundary);

struct BoundaryReport {
    std::vector<bool> converged;
    std::vector<Trajectory> trajectories;
    double fraction_converged = 0.0;
};

// Deterministic closed-loop rollouts from each boundary point.
BoundaryReport verify_boundary(const PlantParams& params, const PIDGains& gains,
                               const PlantState& x_des, const std::vector<int>& channels,
                               const std::vector<Eigen::Vector2d>& points, int horizon,
                               double tail_tol = 0.05);

// End-to-end: grid rollouts, V computation, fit, level set.
struct RoaConfig {
    double theta_range = 0.6;     // rad, symmetric
    double theta_dot_range = 2.0; // rad/s, symmetric
    int resolution = 41;
    double horizon_seconds = 10.0;
    double tail_tol = 0.05;
};
struct RoaResult {
    std::vector<LyapunovSample> samples;
    RoaEstimate estimate;
};
RoaResult estimate_roa(const PlantParams& params, const PIDGains& gains, const PlantState& x_des,
                       const std::vector<int>& channels, const RoaConfig& config);

void write_roa_csv(const std::vector<LyapunovSample>& samples, const std::string& path);

} // namespace pidtune

#endif

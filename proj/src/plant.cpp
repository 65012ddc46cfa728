#include "pidtune/plant.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

namespace pidtune {

void PlantParams::validate() const {
    if (cart_mass <= 0 || pendulum_mass <= 0 || pole_length <= 0 || dt <= 0)
        throw std::invalid_argument("plant: masses, length and dt must be positive");
    if (u_max <= 0) throw std::invalid_argument("plant: u_max must be positive");
    if ((noise_cov.array() < 0).any())
        throw std::invalid_argument("plant: noise variances must be non-negative");
    if (substeps < 1) throw std::invalid_argument("plant: substeps must be >= 1");
}

bool Disturbance::active(double t, double dt) const {
    if (profile == Profile::Impulse)
        return t >= start_time - 0.5 * dt && t < start_time + 0.5 * dt;
    return t >= start_time - 0.5 * dt && t < start_time + duration - 0.5 * dt;
}

Eigen::Vector2d accelerations(const PlantState& s, double force, double pole_torque,
                              const PlantParams& p) {
    const double m = p.pendulum_mass;
    const double l = p.pole_length;
    const double ct = std::cos(s.theta);
    const double st = std::sin(s.theta);

    // [ mc+m   m l c ] [x_ddot    ]   [ F - b x_dot + m l thd^2 s ]
    // [ m l c  m l^2 ] [theta_ddot] = [ tau + m g l s             ]
    Eigen::Matrix2d A;
    A << p.cart_mass + m, m * l * ct,
         m * l * ct,      m * l * l;
    Eigen::Vector2d rhs;
    rhs << force - p.cart_friction * s.x_dot + m * l * s.theta_dot * s.theta_dot * st,
           pole_torque + m * p.gravity * l * st;
    return A.inverse() * rhs;
}

namespace {

Vec4 derivative(const Vec4& v, double force, double pole_torque, const PlantParams& p) {
    const PlantState s(v);
    const Eigen::Vector2d acc = accelerations(s, force, pole_torque, p);
    return Vec4(s.x_dot, acc[0], s.theta_dot, acc[1]);
}

Vec4 rk4(const Vec4& v, double force, double pole_torque, const PlantParams& p, double h) {
    const Vec4 k1 = derivative(v, force, pole_torque, p);
    const Vec4 k2 = derivative(v + 0.5 * h * k1, force, pole_torque, p);
    const Vec4 k3 = derivative(v + 0.5 * h * k2, force, pole_torque, p);
    const Vec4 k4 = derivative(v + h * k3, force, pole_torque, p);
    return v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

} // namespace

PlantState step(const PlantState& state, double u, const PlantParams& params,
                double matched_force, double unmatched_torque, const Vec4& noise_draw) {
    params.validate();
    if (!state.finite() || !std::isfinite(u))
        throw std::invalid_argument("plant: non-finite step input");

    const double force = std::clamp(u, -params.u_max, params.u_max) + matched_force;
    const double h = params.dt / params.substeps;
    Vec4 v = state.vec();
    for (int i = 0; i < params.substeps; ++i)
        v = rk4(v, force, unmatched_torque, params, h);
    v += noise_draw;

    if (!v.allFinite()) throw DivergenceError(state, 0);
    return PlantState(v);
}

PlantParams sample_params(const PlantParams& mean, double var_m, double var_l,
                          std::mt19937_64& rng) {
    if (var_m < 0 || var_l < 0)
        throw std::invalid_argument("sample_params: variances must be non-negative");
    PlantParams out = mean;
    std::normal_distribution<double> unit(0.0, 1.0);
    for (int attempt = 0; attempt < 100; ++attempt) {
        const double m = mean.pendulum_mass + std::sqrt(var_m) * (var_m > 0 ? unit(rng) : 0.0);
        const double l = mean.pole_length + std::sqrt(var_l) * (var_l > 0 ? unit(rng) : 0.0);
        if (m > 0 && l > 0) {
            out.pendulum_mass = m;
            out.pole_length = l;
            return out;
        }
    }
    throw std::runtime_error("sample_params: 100 rejected draws, check mean/variance");
}

Trajectory rollout(const Controller& controller, const PlantState& x0, int horizon,
                   const PlantParams& params,
                   const std::optional<Disturbance>& disturbance, std::uint64_t seed) {
    if (horizon < 1) throw std::invalid_argument("rollout: horizon must be >= 1");
    params.validate();

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    const Vec4 noise_std = params.noise_cov.array().sqrt();

    Trajectory traj;
    traj.params_used = params;
    traj.states.reserve(horizon + 1);
    traj.controls.reserve(horizon);
    traj.times.reserve(horizon + 1);
    traj.states.push_back(x0);
    traj.times.push_back(0.0);

    PlantState s = x0;
    for (int k = 0; k < horizon; ++k) {
        const double t = k * params.dt;
        const double u = controller(s);

        double matched = 0.0, unmatched = 0.0;
        if (disturbance && disturbance->active(t, params.dt)) {
            if (disturbance->channel == Disturbance::Channel::Matched)
                matched = disturbance->magnitude;
            else
                unmatched = disturbance->magnitude;
        }

        Vec4 noise = Vec4::Zero();
        for (int i = 0; i < 4; ++i)
            if (noise_std[i] > 0) noise[i] = noise_std[i] * unit(rng);

        try {
            s = step(s, u, params, matched, unmatched, noise);
        } catch (const DivergenceError&) {
            throw DivergenceError(s, k);
        }
        traj.controls.push_back(u);
        traj.states.push_back(s);
        traj.times.push_back((k + 1) * params.dt);
    }
    return traj;
}

double mechanical_energy(const PlantState& s, const PlantParams& p) {
    const double m = p.pendulum_mass;
    const double l = p.pole_length;
    const double ke = 0.5 * (p.cart_mass + m) * s.x_dot * s.x_dot +
                      m * l * s.x_dot * s.theta_dot * std::cos(s.theta) +
                      0.5 * m * l * l * s.theta_dot * s.theta_dot;
    const double pe = m * p.gravity * l * std::cos(s.theta);
    return ke + pe;
}

void write_trajectory_csv(const Trajectory& traj, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << std::setprecision(17);
    out << "t,x,x_dot,theta,theta_dot,u\n";
    for (std::size_t i = 0; i < traj.states.size(); ++i) {
        const PlantState& s = traj.states[i];
        out << traj.times[i] << ',' << s.x << ',' << s.x_dot << ','
            << s.theta << ',' << s.theta_dot << ',';
        if (i < traj.controls.size()) out << traj.controls[i];
        out << '\n';
    }
}

} // namespace pidtune

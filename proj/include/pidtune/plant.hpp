#ifndef PIDTUNE_PLANT_HPP
#define PIDTUNE_PLANT_HPP

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace pidtune {

using Vec4 = Eigen::Vector4d;

// Cart-pole state. theta = 0 is the upright (unstable) equilibrium and is
// kept unwrapped so derivative features stay continuous.
struct PlantState {
    double x = 0.0;         // cart position (m)
    double x_dot = 0.0;     // cart velocity (m/s)
    double theta = 0.0;     // pole angle from upright (rad)
    double theta_dot = 0.0; // pole angular velocity (rad/s)

    PlantState() = default;
    PlantState(double x_, double xd_, double th_, double thd_)
        : x(x_), x_dot(xd_), theta(th_), theta_dot(thd_) {}
    explicit PlantState(const Vec4& v) : x(v[0]), x_dot(v[1]), theta(v[2]), theta_dot(v[3]) {}

    Vec4 vec() const { return Vec4(x, x_dot, theta, theta_dot); }
    bool finite() const { return vec().allFinite(); }
};

struct PlantParams {
    double cart_mass = 0.5;     // kg
    double pendulum_mass = 0.2; // kg
    double pole_length = 0.5;   // m, pivot to point mass
    double gravity = 9.81;      // m/s^2
    double cart_friction = 0.1; // N s/m
    Vec4 noise_cov = Vec4::Zero(); // per-state process noise variance
    double dt = 0.05;           // s
    double u_max = 10.0;        // N
    int substeps = 32;          // RK4 sub-steps per dt

    void validate() const;
};

struct Disturbance {
    enum class Channel { Matched, Unmatched }; // cart force vs. pole torque
    enum class Profile { Impulse, Step };
    Channel channel = Channel::Matched;
    Profile profile = Profile::Impulse;
    double magnitude = 0.0;  // N (matched) or N m (unmatched)
    double start_time = 0.0; // s
    double duration = 0.0;   // s, step profile only

    // Force/torque active on the step starting at time t.
    bool active(double t, double dt) const;
};

struct Trajectory {
    std::vector<PlantState> states;  // length n+1
    std::vector<double> controls;    // length n
    std::vector<double> times;       // length n+1
    PlantParams params_used;

    std::size_t steps() const { return controls.size(); }
};

// Numerical blow-up during integration.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const PlantState& s, long step_index)
        : std::runtime_error("plant state diverged at step " + std::to_string(step_index)),
          state(s), step(step_index) {}
    PlantState state;
    long step;
};

// Continuous-time accelerations (x_ddot, theta_ddot) for the point-mass
// cart-pole with an optional torque on the pole pivot.
Eigen::Vector2d accelerations(const PlantState& s, double force, double pole_torque,
                              const PlantParams& p);

// One discrete step: clamp u to [-u_max, u_max], add the matched disturbance
// to the cart force, integrate the ODE over dt with RK4, then add noise_draw.
PlantState step(const PlantState& state, double u, const PlantParams& params,
                double matched_force = 0.0, double unmatched_torque = 0.0,
                const Vec4& noise_draw = Vec4::Zero());

// Draw (m, l) from N(mean, diag(var_m, var_l)), rejecting non-positive
// samples (at most 100 draws). Other fields are copied from mean.
PlantParams sample_params(const PlantParams& mean, double var_m, double var_l,
                          std::mt19937_64& rng);

using Controller = std::function<double(const PlantState&)>;

Trajectory rollout(const Controller& controller, const PlantState& x0, int horizon,
                   const PlantParams& params,
                   const std::optional<Disturbance>& disturbance, std::uint64_t seed);

// Kinetic plus potential energy; zero potential at theta = pi/2 height.
double mechanical_energy(const PlantState& s, const PlantParams& p);

void write_trajectory_csv(const Trajectory& traj, const std::string& path);

} // namespace pidtune

#endif

#ifndef PIDTUNE_POLICY_HPP
#define PIDTUNE_POLICY_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "pidtune/gp.hpp"
#include "pidtune/plant.hpp"

namespace pidtune {

// RBF-network policy squashed into [-u_max, u_max].
struct PolicyParams {
    Eigen::MatrixXd centers;      // n_basis x 4
    Eigen::VectorXd weights;      // n_basis
    Eigen::VectorXd lengthscales; // 4, per state dimension
    double u_max = 10.0;

    void validate() const;
    void save(const std::string& path) const;
    static PolicyParams load(const std::string& path);
};

// Smooth saturator: (9 sin z + sin 3z) / 8, bounded in [-1, 1].
double squash(double z);

double policy_eval(const PolicyParams& policy, const PlantState& state);

struct CostConfig {
    PlantState target;         // x_des
    double cost_width = 0.25;  // m, saturating-cost width on tip distance
    int horizon = 80;          // steps T; J sums tau = 0..T
    PlantState init_mean;
    Eigen::Matrix4d init_cov = 1e-4 * Eigen::Matrix4d::Identity();
    double pole_length = 0.5;  // m, used in the tip-distance weight matrix
};

// Weight matrix over (x, x_dot, theta, theta_dot) for the squared cost
// distance d^2 = x^2 + (x + l*theta)^2 (cart position plus pole tip offset).
Eigen::Matrix4d cost_weight_matrix(const CostConfig& cost);

// E[1 - exp(-0.5 d^T W d / sigma_c^2)] under x ~ N(mean, cov), closed form.
double expected_cost(const Eigen::Vector4d& mean, const Eigen::Matrix4d& cov,
                     const CostConfig& cost);

// Deterministic immediate cost of a single state.
double state_cost(const PlantState& s, const CostConfig& cost);

// Mean, variance and state-control cross-covariance of the squashed policy
// output for a Gaussian state.
struct ControlMoments {
    double mean = 0.0;
    double variance = 0.0;
    Eigen::Vector4d cross = Eigen::Vector4d::Zero(); // Cov(x, u)
};
ControlMoments policy_moments(const PolicyParams& policy, const Eigen::Vector4d& mean,
                              const Eigen::Matrix4d& cov);

class PropagationError : public std::runtime_error {
public:
    PropagationError(const std::string& what, int step_index)
        : std::runtime_error(what), step(step_index) {}
    int step;
};

struct RolloutPrediction {
    std::vector<Eigen::Vector4d> means;  // horizon + 1 entries
    std::vector<Eigen::Matrix4d> covs;
    double J = 0.0;
};
RolloutPrediction predict_rollout(const GPModel& gp, const PolicyParams& policy,
                                  const CostConfig& cost);

struct PolicyOptConfig {
    int max_iters = 40;
    double grad_tol = 1e-2;   // on ||dJ/dphi|| / (1 + |J|)
    double fd_step = 1e-4;    // central-difference step per parameter
    bool optimize_centers = false;
    bool optimize_lengthscales = false;
};

struct PolicyOptResult {
    PolicyParams policy;
    std::vector<double> trace; // accepted J values, non-increasing
    bool stalled = false;
};
PolicyOptResult optimize_policy(const GPModel& gp, const PolicyParams& policy0,
                                const CostConfig& cost, const PolicyOptConfig& opt);

struct PilcoConfig {
    PlantParams plant;           // nominal parameters (mean of the sampler)
    double param_var_m = 0.0025; // pendulum mass variance
    double param_var_l = 0.005;  // pole length variance
    bool randomize_params = true;
    CostConfig cost;
    int n_basis = 50;
    double init_policy_std = 0.1; // weights drawn from N(0, sigma^2)
    Eigen::Vector4d policy_lengthscales = Eigen::Vector4d(1.0, 2.0, 0.3, 1.0);
    Eigen::Vector4d center_spread = Eigen::Vector4d(0.5, 1.0, 0.25, 1.0);
    int max_outer_iters = 15;
    double task_threshold = 0.2; // mean realized per-step cost
    FitOptions gp_fit;
    PolicyOptConfig opt;
};

struct PilcoResult {
    PolicyParams policy;
    std::vector<Trajectory> data;
    struct IterLog {
        int iter;
        double J_predicted;
        double J_realized; // sum of realized per-step costs
    };
    std::vector<IterLog> log;
    bool task_learned = false;
    bool aborted = false;
    std::string abort_reason;
};
PilcoResult pilco_loop(const PilcoConfig& config, std::uint64_t seed);

void write_jlog_csv(const std::vector<PilcoResult::IterLog>& log, const std::string& path);

} // namespace pidtune

#endif

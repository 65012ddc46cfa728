#ifndef PIDTUNE_DISTILL_HPP
#define PIDTUNE_DISTILL_HPP

#include <Eigen/Dense>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pidtune/dataset.hpp"
#include "pidtune/plant.hpp"
#include "pidtune/policy.hpp"

namespace pidtune {

// Gain matrix layout follows the feature ordering [e_1..C, i_1..C, d_1..C].
// Coupled: one input row, all entries free. Decoupled: C input rows, row r
// only acts on channel r's features (fixed zero pattern elsewhere).
enum class PIDStructure { Coupled, Decoupled };

struct PIDGains {
    PIDStructure structure = PIDStructure::Coupled;
    Eigen::MatrixXd K;     // N x 3C
    Eigen::VectorXd sigma; // control-noise std per input, > 0

    Eigen::Index n_channels() const { return K.cols() / 3; }
    Eigen::Index n_inputs() const { return K.rows(); }
    bool entry_free(Eigen::Index row, Eigen::Index col) const;
    void enforce_pattern(); // zero the off-pattern entries
    void validate() const;

    void save(const std::string& path) const;
    static PIDGains load(const std::string& path);
};

PIDGains random_gains(PIDStructure structure, Eigen::Index n_channels, Eigen::Index n_inputs,
                      double sigma, std::mt19937_64& rng);

struct DistillConfig {
    double epsilon = 1e-8; // stop when the per-iteration decrease falls below
    int max_iters = 2000;
    bool learn_sigma = false;
};

// Negative log-likelihood of the controls under u ~ N(K e~, sigma^2); the
// phi-dependent part of the forward-KLD cross-entropy.
double pid_nll(const AugmentedDataset& data, const PIDGains& gains);

// Analytic gradient over the free entries of K (row-major), then log sigma
// per input when learn_sigma.
Eigen::VectorXd pid_nll_gradient(const AugmentedDataset& data, const PIDGains& gains,
                                 bool learn_sigma = false);

struct DistillResult {
    PIDGains gains;
    std::vector<double> trace; // objective per accepted iteration, non-increasing
    bool converged = false;    // decrease fell below epsilon
    int iterations = 0;
};
DistillResult minimize_kld(const AugmentedDataset& data, const PIDGains& gains0,
                           const DistillConfig& config);

// Structured least squares per input channel; the independent oracle for
// minimize_kld. sigma is the per-channel residual MLE (floored).
PIDGains closed_form_gains(const AugmentedDataset& data, PIDStructure structure);

// Expert data collection: rollouts of the learned policy with varied initial
// conditions and optional parameter randomization.
struct ExpertConfig {
    PlantParams plant;
    double param_var_m = 0.0025;
    double param_var_l = 0.005;
    bool randomize_params = true;
    PlantState x_des;
    std::vector<int> channels = {0, 2}; // x and theta feedback
    int horizon = 80;
    Eigen::Vector4d init_std = Eigen::Vector4d(0.1, 0.1, 0.1, 0.1);
    PlantState init_mean;
};
struct ExpertData {
    AugmentedDataset data;
    std::vector<Trajectory> trajectories;
    int dropped = 0; // diverged rollouts
};
ExpertData collect_expert_data(const ExpertConfig& config, const PolicyParams& policy,
                               int n_rollouts, std::uint64_t seed);

// --- KDE diagnostics -------------------------------------------------------

struct GridSpec {
    double a_min = 0, a_max = 1;
    double b_min = 0, b_max = 1;
    int na = 64, nb = 64;

    double cell_area() const {
        return (a_max - a_min) / na * ((b_max - b_min) / nb);
    }
    double a_center(int i) const { return a_min + (i + 0.5) * (a_max - a_min) / na; }
    double b_center(int j) const { return b_min + (j + 0.5) * (b_max - b_min) / nb; }
};

struct DensityGrid {
    Eigen::MatrixXd density; // na x nb, integrates to 1 over the grid
    GridSpec spec;
};

// 2-D Gaussian KDE normalized so density * cell_area sums to one.
// Bandwidths default to Silverman's rule per axis with a small floor.
DensityGrid kde_joint(const std::vector<double>& samples_a, const std::vector<double>& samples_b,
                      const GridSpec& grid, std::optional<double> bandwidth = std::nullopt);

// KLD between two discrete distributions given as normalized mass matrices.
double kld_discrete(const Eigen::MatrixXd& p, const Eigen::MatrixXd& q);
double kld_discrete(const DensityGrid& p, const DensityGrid& q);

void write_density_csv(const DensityGrid& grid, const std::string& path);

// --- Online PID ------------------------------------------------------------

struct PidControllerState {
    Eigen::VectorXd integral;
    Eigen::VectorXd prev_error;
    bool has_prev = false;
};

struct PidOptions {
    double u_max = 10.0;
    bool anti_windup = false; // freeze the integral while clamped
};

// One control update; returns u clamped per input and advances the state.
Eigen::VectorXd pid_control(const PIDGains& gains, PidControllerState& state,
                            const Eigen::VectorXd& e, double dt, const PidOptions& opts);

// Closed-loop controller closure for plant rollouts (first gain row drives
// the single plant input). zero_integral gives the PD-only variant.
Controller make_pid_controller(const PIDGains& gains, const PlantState& x_des,
                               const std::vector<int>& channels, double dt,
                               const PidOptions& opts, bool zero_integral = false);

} // namespace pidtune

#endif

#ifndef PIDTUNE_DATASET_HPP
#define PIDTUNE_DATASET_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "pidtune/plant.hpp"

namespace pidtune {

// PID error features for one time step across the feedback channels.
// Feature row layout is [e_1..e_C, i_1..i_C, d_1..d_C], matching the
// gain-matrix column order [K_p | K_i | K_d].
struct ErrorRecord {
    Eigen::VectorXd e; // proportional error per channel
    Eigen::VectorXd i; // dt-scaled running sum
    Eigen::VectorXd d; // backward difference / dt

    Eigen::VectorXd row() const;
};

struct AugmentedDataset {
    Eigen::MatrixXd features;   // n x 3C
    Eigen::MatrixXd controls;   // n x N
    std::vector<int> channels;  // state indices feeding the controller
    double dt = 0.0;
    std::vector<int> source;    // trajectory index per row

    Eigen::Index rows() const { return features.rows(); }
};

// Error features along a trajectory, one record per recorded state.
// e = x_des - x on the selected channels; integral is the running
// dt-weighted sum from step 0; derivative uses the e_{-1} := e_0 convention.
std::vector<ErrorRecord> compute_errors(const Trajectory& traj, const PlantState& x_des,
                                        const std::vector<int>& channels, double dt);

// Concatenates (error features before u_tau, u_tau) pairs over all
// trajectories; integral/derivative state resets at trajectory boundaries.
AugmentedDataset augment(const std::vector<Trajectory>& trajectories, const PlantState& x_des,
                         const std::vector<int>& channels, double dt);

// (x, u) rows and state-difference targets for GP training.
struct GpPairs {
    Eigen::MatrixXd inputs;  // n x 5
    Eigen::MatrixXd targets; // n x 4
};
GpPairs gp_training_pairs(const std::vector<Trajectory>& trajectories);

void write_dataset_csv(const AugmentedDataset& data, const std::string& path);

} // namespace pidtune

#endif

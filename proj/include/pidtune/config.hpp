#ifndef PIDTUNE_CONFIG_HPP
#define PIDTUNE_CONFIG_HPP

#include <string>

#include "pidtune/distill.hpp"
#include "pidtune/plant.hpp"
#include "pidtune/policy.hpp"
#include "pidtune/roa.hpp"

namespace pidtune {

// Whole-experiment configuration; one human-editable JSON file.
struct ExperimentConfig {
    PlantParams plant;
    bool randomize_params = true;
    double param_var_m = 0.0025;
    double param_var_l = 0.005;

    CostConfig cost;

    // policy search
    int n_basis = 50;
    double init_policy_std = 0.1;
    int max_outer_iters = 15;
    double task_threshold = 0.2;
    int gp_restarts = 2;
    int gp_max_points = 250;
    int opt_max_iters = 40;
    Eigen::Vector4d policy_lengthscales = Eigen::Vector4d(1.0, 2.0, 0.3, 1.0);
    Eigen::Vector4d center_spread = Eigen::Vector4d(0.5, 1.0, 0.25, 1.0);

    // distillation
    PIDStructure structure = PIDStructure::Coupled;
    double distill_epsilon = 1e-8;
    int distill_max_iters = 2000;
    bool learn_sigma = false;
    int expert_rollouts = 25;
    Eigen::Vector4d expert_init_std = Eigen::Vector4d(0.1, 0.1, 0.15, 0.3);
    std::vector<int> channels = {0, 2};

    RoaConfig roa;

    Disturbance matched_default;
    Disturbance unmatched_default;
    double evaluate_seconds = 10.0;
    double settle_tol = 0.05;

    int kde_resolution = 60;

    std::uint64_t seed = 1;
    std::string out_dir = "out";

    PilcoConfig pilco_config() const;
    ExpertConfig expert_config() const;

    void save(const std::string& path) const;
    static ExperimentConfig load(const std::string& path);
};

ExperimentConfig default_config();

} // namespace pidtune

#endif

#ifndef PIDTUNE_HARNESS_HPP
#define PIDTUNE_HARNESS_HPP

#include <string>
#include <vector>

#include "pidtune/config.hpp"
#include "pidtune/distill.hpp"
#include "pidtune/roa.hpp"

namespace pidtune {

// Closed-loop evaluation of distilled gains under one scenario:
// nominal | matched | unmatched | param_sweep.
struct ScenarioRun {
    std::string label;
    Trajectory trajectory;
    bool converged = false;
    double settling_time = -1.0;   // s, -1 when never settled
    double peak_deviation = 0.0;   // max ||s - s_des||
    double recovery_time = -1.0;   // s after the disturbance, -1 when n/a
};

struct ScenarioResult {
    std::string scenario;
    std::vector<ScenarioRun> runs;
    bool all_converged = false;
};

ScenarioResult evaluate_scenario(const ExperimentConfig& config, const PIDGains& gains,
                                 const std::string& scenario, bool zero_integral = false);

void write_scenario(const ScenarioResult& result, const std::string& dir);

// Full distillation pipeline: expert data, random initial gains, KLD
// minimization, and the joint-pdf diagnostics for (u, x) and (u, theta).
struct DistillArtifacts {
    ExpertData expert;
    PIDGains initial_gains;
    DistillResult result;
    DensityGrid expert_x, initial_x, final_x;
    DensityGrid expert_theta, initial_theta, final_theta;
    double kld_x_initial = 0.0, kld_x_final = 0.0;
    double kld_theta_initial = 0.0, kld_theta_final = 0.0;
};

DistillArtifacts run_distillation(const ExperimentConfig& config, const PolicyParams& policy,
                                  std::uint64_t seed);

void write_distill_artifacts(const DistillArtifacts& art, const std::string& dir);

// ROA pipeline plus boundary verification.
struct RoaArtifacts {
    RoaResult roa;
    BoundaryReport boundary;
};
RoaArtifacts run_roa(const ExperimentConfig& config, const PIDGains& gains);
void write_roa_artifacts(const RoaArtifacts& art, const std::string& dir);

// 20-trial stabilization check of a learned policy on noisy rollouts:
// |theta| < theta_tol over the final tail_seconds of total_seconds.
struct StabilizationReport {
    int trials = 0;
    int successes = 0;
};
StabilizationReport check_policy_stabilization(const ExperimentConfig& config,
                                               const PolicyParams& policy, int trials,
                                               double total_seconds, double tail_seconds,
                                               double theta_tol, std::uint64_t seed);

} // namespace pidtune

#endif

#include "pidtune/harness.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>

#include <json.hpp>

namespace pidtune {

namespace {

ScenarioRun analyze_run(const std::string& label, Trajectory traj,
                        const ExperimentConfig& config, double disturbance_time) {
    const Vec4 des = config.cost.target.vec();
    ScenarioRun run;
    run.label = label;

    // settle index: first step after which the deviation stays below tol
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(traj.states.size());
    std::ptrdiff_t settle_idx = -1;
    for (std::ptrdiff_t i = n - 1; i >= 0; --i) {
        if ((traj.states[i].vec() - des).norm() < config.settle_tol)
            settle_idx = i;
        else
            break;
    }
    for (const PlantState& s : traj.states)
        run.peak_deviation = std::max(run.peak_deviation, (s.vec() - des).norm());
    // converged = settled and held over at least the final second
    const int tail = static_cast<int>(std::lround(1.0 / config.plant.dt));
    run.converged = settle_idx >= 0 &&
                    settle_idx + tail <= static_cast<std::ptrdiff_t>(traj.states.size()) - 1;
    if (settle_idx >= 0) {
        run.settling_time = traj.times[settle_idx];
        if (disturbance_time >= 0)
            run.recovery_time = std::max(run.settling_time - disturbance_time, 0.0);
    }
    run.trajectory = std::move(traj);
    return run;
}

Trajectory pid_rollout(const ExperimentConfig& config, const PIDGains& gains,
                       bool zero_integral, const PlantState& x0, const PlantParams& params,
                       const std::optional<Disturbance>& dist, int horizon) {
    PlantParams det = params;
    det.noise_cov.setZero(); // evaluation runs are deterministic
    PidOptions opts;
    opts.u_max = det.u_max;
    return rollout(make_pid_controller(gains, config.cost.target, config.channels, det.dt, opts,
                                       zero_integral),
                   x0, horizon, det, dist, 0);
}

} // namespace

ScenarioResult evaluate_scenario(const ExperimentConfig& config, const PIDGains& gains,
                                 const std::string& scenario, bool zero_integral) {
    const int horizon = static_cast<int>(std::lround(config.evaluate_seconds / config.plant.dt));
    const PlantState perturbed(0.0, 0.0, 0.1, 0.0);

    ScenarioResult result;
    result.scenario = scenario;

    if (scenario == "nominal") {
        result.runs.push_back(analyze_run(
            "nominal",
            pid_rollout(config, gains, zero_integral, perturbed, config.plant, std::nullopt,
                        horizon),
            config, -1.0));
    } else if (scenario == "matched" || scenario == "unmatched") {
        const Disturbance& d =
            scenario == "matched" ? config.matched_default : config.unmatched_default;
        result.runs.push_back(analyze_run(
            scenario,
            pid_rollout(config, gains, zero_integral, config.cost.target, config.plant, d,
                        horizon),
            config, d.start_time));
    } else if (scenario == "param_sweep") {
        const std::vector<std::pair<double, double>> pairs = {
            {0.15, 0.5}, {0.2, 0.6}, {0.3, 0.75}};
        for (const auto& [m, l] : pairs) {
            PlantParams params = config.plant;
            params.pendulum_mass = m;
            params.pole_length = l;
            result.runs.push_back(analyze_run(
                "m" + std::to_string(m) + "_l" + std::to_string(l),
                pid_rollout(config, gains, zero_integral, perturbed, params, std::nullopt,
                            horizon),
                config, -1.0));
        }
    } else {
        throw std::invalid_argument("unknown scenario: " + scenario);
    }

    result.all_converged = true;
    for (const ScenarioRun& r : result.runs) result.all_converged &= r.converged;
    return result;
}

void write_scenario(const ScenarioResult& result, const std::string& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json summary;
    summary["scenario"] = result.scenario;
    summary["all_converged"] = result.all_converged;
    for (const ScenarioRun& run : result.runs) {
        write_trajectory_csv(run.trajectory,
                             dir + "/" + result.scenario + "_" + run.label + ".csv");
        summary["runs"].push_back({{"label", run.label},
                                   {"converged", run.converged},
                                   {"settling_time", run.settling_time},
                                   {"peak_deviation", run.peak_deviation},
                                   {"recovery_time", run.recovery_time}});
    }
    std::ofstream out(dir + "/" + result.scenario + "_summary.json");
    out << summary.dump(2) << '\n';
}

DistillArtifacts run_distillation(const ExperimentConfig& config, const PolicyParams& policy,
                                  std::uint64_t seed) {
    std::mt19937_64 rng(seed);

    // Demonstrations are deterministic: diversity comes from the randomized
    // initial states, while process noise would enter the backward-difference
    // derivative features amplified by 1/dt and attenuate the regressed gains.
    ExpertConfig ec = config.expert_config();
    ec.plant.noise_cov.setZero();

    DistillArtifacts art;
    art.expert = collect_expert_data(ec, policy, config.expert_rollouts, rng());

    // Keep only successful demonstrations: a rollout whose initial state falls
    // outside the expert's capture region ends with the pole spinning, and a
    // handful of such trajectories dominate the control-matching regression.
    {
        std::vector<Trajectory> kept;
        for (Trajectory& t : art.expert.trajectories) {
            const PlantState& tail = t.states.back();
            if (std::abs(tail.theta) < 0.3 && tail.vec().norm() < 1.0)
                kept.push_back(std::move(t));
        }
        art.expert.dropped +=
            static_cast<int>(art.expert.trajectories.size() - kept.size());
        art.expert.trajectories = std::move(kept);
        if (art.expert.trajectories.empty())
            throw std::runtime_error("run_distillation: no successful demonstrations");
        art.expert.data = augment(art.expert.trajectories, ec.x_des, ec.channels, ec.plant.dt);
    }

    const Eigen::Index C = static_cast<Eigen::Index>(config.channels.size());
    const Eigen::Index N = config.structure == PIDStructure::Coupled ? 1 : C;
    art.initial_gains =
        random_gains(config.structure, C, N, 0.1 * config.plant.u_max, rng);

    DistillConfig dc;
    dc.epsilon = config.distill_epsilon;
    dc.max_iters = config.distill_max_iters;
    dc.learn_sigma = config.learn_sigma;
    art.result = minimize_kld(art.expert.data, art.initial_gains, dc);
    if (!config.learn_sigma) {
        // refit sigma as the residual MLE once K is fixed
        art.result.gains.sigma = closed_form_gains(art.expert.data, config.structure).sigma;
    }

    // Joint-pdf diagnostics: (u, x) and (u, theta) under the expert policy,
    // the random initial gains, and the distilled gains.
    auto collect_pid = [&](const PIDGains& gains, std::uint64_t s) {
        std::mt19937_64 local(s);
        std::normal_distribution<double> unit(0.0, 1.0);
        std::vector<Trajectory> trajs;
        for (int i = 0; i < config.expert_rollouts; ++i) {
            PlantParams params = ec.plant;
            if (ec.randomize_params)
                params = sample_params(ec.plant, ec.param_var_m, ec.param_var_l, local);
            Eigen::Vector4d x0 = ec.init_mean.vec();
            for (int j = 0; j < 4; ++j) x0[j] += ec.init_std[j] * unit(local);
            PidOptions opts;
            opts.u_max = params.u_max;
            trajs.push_back(rollout(
                make_pid_controller(gains, ec.x_des, ec.channels, params.dt, opts),
                PlantState(x0), ec.horizon, params, std::nullopt, local()));
        }
        return trajs;
    };

    auto samples = [](const std::vector<Trajectory>& trajs, int state_index) {
        std::pair<std::vector<double>, std::vector<double>> out; // (u, state)
        for (const Trajectory& t : trajs)
            for (std::size_t k = 0; k < t.controls.size(); ++k) {
                out.first.push_back(t.controls[k]);
                out.second.push_back(t.states[k].vec()[state_index]);
            }
        return out;
    };

    const std::uint64_t pid_seed = rng();
    const auto initial_trajs = collect_pid(art.initial_gains, pid_seed);
    const auto final_trajs = collect_pid(art.result.gains, pid_seed + 1);

    const auto [eu, ex] = samples(art.expert.trajectories, 0);
    const auto [eu2, eth] = samples(art.expert.trajectories, 2);

    // Common grids anchored on the expert support so KLDs are comparable.
    auto bounds = [](const std::vector<double>& v, double pad) {
        double lo = *std::min_element(v.begin(), v.end());
        double hi = *std::max_element(v.begin(), v.end());
        const double w = std::max(hi - lo, 1e-3);
        return std::pair<double, double>{lo - pad * w, hi + pad * w};
    };
    GridSpec grid_x, grid_th;
    grid_x.na = grid_x.nb = config.kde_resolution;
    grid_th.na = grid_th.nb = config.kde_resolution;
    std::tie(grid_x.a_min, grid_x.a_max) = bounds(eu, 0.25);
    std::tie(grid_x.b_min, grid_x.b_max) = bounds(ex, 0.25);
    grid_th.a_min = grid_x.a_min;
    grid_th.a_max = grid_x.a_max;
    std::tie(grid_th.b_min, grid_th.b_max) = bounds(eth, 0.25);

    auto grid_of = [&](const std::vector<Trajectory>& trajs, int state_index,
                       const GridSpec& spec) {
        std::pair<std::vector<double>, std::vector<double>> s = samples(trajs, state_index);
        return kde_joint(s.first, s.second, spec);
    };

    art.expert_x = kde_joint(eu, ex, grid_x);
    art.expert_theta = kde_joint(eu2, eth, grid_th);
    art.initial_x = grid_of(initial_trajs, 0, grid_x);
    art.initial_theta = grid_of(initial_trajs, 2, grid_th);
    art.final_x = grid_of(final_trajs, 0, grid_x);
    art.final_theta = grid_of(final_trajs, 2, grid_th);

    art.kld_x_initial = kld_discrete(art.expert_x, art.initial_x);
    art.kld_x_final = kld_discrete(art.expert_x, art.final_x);
    art.kld_theta_initial = kld_discrete(art.expert_theta, art.initial_theta);
    art.kld_theta_final = kld_discrete(art.expert_theta, art.final_theta);
    return art;
}

void write_distill_artifacts(const DistillArtifacts& art, const std::string& dir) {
    std::filesystem::create_directories(dir);
    art.result.gains.save(dir + "/gains.json");
    art.initial_gains.save(dir + "/initial_gains.json");
    write_dataset_csv(art.expert.data, dir + "/expert_dataset.csv");

    std::ofstream trace(dir + "/distill_trace.csv");
    trace << std::setprecision(17) << "iter,objective\n";
    for (std::size_t i = 0; i < art.result.trace.size(); ++i)
        trace << i << ',' << art.result.trace[i] << '\n';

    write_density_csv(art.expert_x, dir + "/pdf_expert_x.csv");
    write_density_csv(art.initial_x, dir + "/pdf_initial_x.csv");
    write_density_csv(art.final_x, dir + "/pdf_final_x.csv");
    write_density_csv(art.expert_theta, dir + "/pdf_expert_theta.csv");
    write_density_csv(art.initial_theta, dir + "/pdf_initial_theta.csv");
    write_density_csv(art.final_theta, dir + "/pdf_final_theta.csv");

    nlohmann::json summary;
    summary["iterations"] = art.result.iterations;
    summary["converged"] = art.result.converged;
    summary["objective"] = art.result.trace.empty() ? 0.0 : art.result.trace.back();
    summary["dropped_rollouts"] = art.expert.dropped;
    summary["kld"] = {{"x_initial", art.kld_x_initial},
                      {"x_final", art.kld_x_final},
                      {"theta_initial", art.kld_theta_initial},
                      {"theta_final", art.kld_theta_final}};
    std::ofstream out(dir + "/distill_summary.json");
    out << summary.dump(2) << '\n';
}

RoaArtifacts run_roa(const ExperimentConfig& config, const PIDGains& gains) {
    RoaArtifacts art;
    art.roa = estimate_roa(config.plant, gains, config.cost.target, config.channels, config.roa);
    const int horizon =
        static_cast<int>(std::lround(config.roa.horizon_seconds / config.plant.dt));
    art.boundary = verify_boundary(config.plant, gains, config.cost.target, config.channels,
                                   art.roa.estimate.boundary_points, horizon,
                                   config.roa.tail_tol);

    // The grid level set is exact only at the sampled nodes; the quadratic fit
    // can bulge into unsampled non-converging territory between them. Shrink
    // the certified level until every contour rollout actually converges, so
    // the reported region is backed by verification rather than the fit alone.
    double level = art.roa.estimate.level;
    for (int attempt = 0; attempt < 25 && art.boundary.fraction_converged < 1.0; ++attempt) {
        level *= 0.8;
        const auto contour = level_contour(
            art.roa.estimate.lyapunov, level,
            static_cast<int>(art.roa.estimate.boundary_points.size()));
        if (contour.empty()) break;
        art.roa.estimate.level = level;
        art.roa.estimate.boundary_points = contour;
        art.boundary = verify_boundary(config.plant, gains, config.cost.target, config.channels,
                                       contour, horizon, config.roa.tail_tol);
    }
    return art;
}

void write_roa_artifacts(const RoaArtifacts& art, const std::string& dir) {
    std::filesystem::create_directories(dir);
    write_roa_csv(art.roa.samples, dir + "/roa_grid.csv");

    nlohmann::json summary;
    summary["lyapunov_coeffs"] = std::vector<double>(art.roa.estimate.lyapunov.coeffs.begin(),
                                                     art.roa.estimate.lyapunov.coeffs.end());
    summary["r_squared"] = art.roa.estimate.lyapunov.r_squared;
    summary["level"] = art.roa.estimate.level;
    summary["boundary_fraction_converged"] = art.boundary.fraction_converged;
    for (const Eigen::Vector2d& p : art.roa.estimate.boundary_points)
        summary["boundary_points"].push_back({p[0], p[1]});
    std::ofstream out(dir + "/roa_summary.json");
    out << summary.dump(2) << '\n';
}

StabilizationReport check_policy_stabilization(const ExperimentConfig& config,
                                               const PolicyParams& policy, int trials,
                                               double total_seconds, double tail_seconds,
                                               double theta_tol, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    const int horizon = static_cast<int>(std::lround(total_seconds / config.plant.dt));
    const int tail = static_cast<int>(std::lround(tail_seconds / config.plant.dt));

    StabilizationReport report;
    report.trials = trials;
    for (int t = 0; t < trials; ++t) {
        Eigen::Vector4d x0 = config.cost.init_mean.vec();
        for (int j = 0; j < 4; ++j)
            x0[j] += std::sqrt(std::max(config.cost.init_cov(j, j), 0.0)) * unit(rng);
        bool ok = true;
        try {
            const Trajectory traj =
                rollout([&policy](const PlantState& s) { return policy_eval(policy, s); },
                        PlantState(x0), horizon, config.plant, std::nullopt, rng());
            for (std::size_t i = traj.states.size() - tail; i < traj.states.size(); ++i)
                if (std::abs(traj.states[i].theta) >= theta_tol) ok = false;
        } catch (const DivergenceError&) {
            ok = false;
        }
        if (ok) ++report.successes;
    }
    return report;
}

} // namespace pidtune

// Command-line harness: policy search, PID distillation, closed-loop
// evaluation, and region-of-attraction certification for the cart-pole.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pidtune/config.hpp"
#include "pidtune/harness.hpp"

using namespace pidtune;

namespace {

ExperimentConfig load_config(const std::string& path, std::optional<std::uint64_t> seed,
                             const std::string& out_dir) {
    ExperimentConfig cfg = path.empty() ? default_config() : ExperimentConfig::load(path);
    if (seed) cfg.seed = *seed;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    std::filesystem::create_directories(cfg.out_dir);
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"PID auto-tuning via model-based policy search and KLD distillation"};
    app.require_subcommand(1);

    std::string config_path, out_dir, policy_path, gains_path, scenario = "nominal";
    std::optional<std::uint64_t> seed;
    bool zero_integral = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "experiment config JSON");
        cmd->add_option("--seed", seed, "RNG seed override");
        cmd->add_option("--out", out_dir, "output directory override");
    };

    CLI::App* cmd_config = app.add_subcommand("config", "write a full default config file");
    std::string config_out = "config.json";
    cmd_config->add_option("path", config_out, "destination file");

    CLI::App* cmd_pilco = app.add_subcommand("pilco", "run the model-based policy search loop");
    add_common(cmd_pilco);

    CLI::App* cmd_distill =
        app.add_subcommand("distill", "distill a learned policy into PID gains");
    add_common(cmd_distill);
    cmd_distill->add_option("--policy", policy_path, "policy checkpoint")->required();

    CLI::App* cmd_evaluate = app.add_subcommand("evaluate", "closed-loop PID evaluation");
    add_common(cmd_evaluate);
    cmd_evaluate->add_option("--gains", gains_path, "gains file")->required();
    cmd_evaluate->add_option("--scenario", scenario,
                             "nominal | matched | unmatched | param_sweep");
    cmd_evaluate->add_flag("--zero-integral", zero_integral, "PD mode (zero integral gains)");

    CLI::App* cmd_roa = app.add_subcommand("roa", "region-of-attraction estimate and check");
    add_common(cmd_roa);
    cmd_roa->add_option("--gains", gains_path, "gains file")->required();

    CLI::App* cmd_simulate = app.add_subcommand("simulate", "raw closed- or open-loop rollout");
    add_common(cmd_simulate);
    cmd_simulate->add_option("--gains", gains_path, "optional gains file (open loop otherwise)");
    cmd_simulate->add_flag("--zero-integral", zero_integral, "PD mode (zero integral gains)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : 1;
    }

    try {
        if (cmd_config->parsed()) {
            default_config().save(config_out);
            std::cout << "wrote " << config_out << "\n";
            return 0;
        }

        if (cmd_pilco->parsed()) {
            const ExperimentConfig cfg = load_config(config_path, seed, out_dir);
            const PilcoResult res = pilco_loop(cfg.pilco_config(), cfg.seed);
            if (res.aborted) {
                write_jlog_csv(res.log, cfg.out_dir + "/jlog.csv");
                throw std::runtime_error("policy search aborted: " + res.abort_reason);
            }
            res.policy.save(cfg.out_dir + "/policy.json");
            write_jlog_csv(res.log, cfg.out_dir + "/jlog.csv");
            std::cout << "task_learned=" << (res.task_learned ? "true" : "false")
                      << " iterations=" << res.log.size() << "\n";
            return 0;
        }

        if (cmd_distill->parsed()) {
            const ExperimentConfig cfg = load_config(config_path, seed, out_dir);
            const PolicyParams policy = PolicyParams::load(policy_path);
            const DistillArtifacts art = run_distillation(cfg, policy, cfg.seed);
            write_distill_artifacts(art, cfg.out_dir);
            std::cout << "converged=" << (art.result.converged ? "true" : "false")
                      << " iterations=" << art.result.iterations
                      << " kld_x " << art.kld_x_initial << " -> " << art.kld_x_final
                      << " kld_theta " << art.kld_theta_initial << " -> "
                      << art.kld_theta_final << "\n";
            return 0;
        }

        if (cmd_evaluate->parsed()) {
            const ExperimentConfig cfg = load_config(config_path, seed, out_dir);
            const PIDGains gains = PIDGains::load(gains_path);
            const ScenarioResult res = evaluate_scenario(cfg, gains, scenario, zero_integral);
            write_scenario(res, cfg.out_dir);
            std::cout << "scenario=" << scenario
                      << " all_converged=" << (res.all_converged ? "true" : "false") << "\n";
            return 0;
        }

        if (cmd_roa->parsed()) {
            const ExperimentConfig cfg = load_config(config_path, seed, out_dir);
            const PIDGains gains = PIDGains::load(gains_path);
            const RoaArtifacts art = run_roa(cfg, gains);
            write_roa_artifacts(art, cfg.out_dir);
            std::cout << "level=" << art.roa.estimate.level << " boundary_fraction="
                      << art.boundary.fraction_converged << "\n";
            return 0;
        }

        if (cmd_simulate->parsed()) {
            const ExperimentConfig cfg = load_config(config_path, seed, out_dir);
            const int horizon =
                static_cast<int>(std::lround(cfg.evaluate_seconds / cfg.plant.dt));
            Controller controller = [](const PlantState&) { return 0.0; };
            if (!gains_path.empty()) {
                const PIDGains gains = PIDGains::load(gains_path);
                PidOptions opts;
                opts.u_max = cfg.plant.u_max;
                controller = make_pid_controller(gains, cfg.cost.target, cfg.channels,
                                                 cfg.plant.dt, opts, zero_integral);
            }
            const Trajectory traj = rollout(controller, PlantState(0, 0, 0.1, 0), horizon,
                                            cfg.plant, std::nullopt, cfg.seed);
            write_trajectory_csv(traj, cfg.out_dir + "/simulate.csv");
            std::cout << "wrote " << cfg.out_dir << "/simulate.csv\n";
            return 0;
        }
    } catch (const std::exception& e) {
        nlohmann::json err{{"error", e.what()}};
        std::cerr << err.dump() << "\n";
        return 2;
    }
    return 1;
}

#include "pidtune/config.hpp"

#include <fstream>

#include <json.hpp>

namespace pidtune {

namespace {

std::vector<double> to_vec(const Eigen::Vector4d& v) {
    return {v[0], v[1], v[2], v[3]};
}

Eigen::Vector4d from_vec(const std::vector<double>& v) {
    if (v.size() != 4) throw std::invalid_argument("config: expected 4 entries");
    return Eigen::Vector4d(v[0], v[1], v[2], v[3]);
}

nlohmann::json disturbance_json(const Disturbance& d) {
    return {{"channel", d.channel == Disturbance::Channel::Matched ? "matched" : "unmatched"},
            {"profile", d.profile == Disturbance::Profile::Impulse ? "impulse" : "step"},
            {"magnitude", d.magnitude},
            {"start_time", d.start_time},
            {"duration", d.duration}};
}

Disturbance disturbance_from_json(const nlohmann::json& j) {
    Disturbance d;
    d.channel = j["channel"] == "matched" ? Disturbance::Channel::Matched
                                          : Disturbance::Channel::Unmatched;
    d.profile = j["profile"] == "impulse" ? Disturbance::Profile::Impulse
                                          : Disturbance::Profile::Step;
    d.magnitude = j["magnitude"].get<double>();
    d.start_time = j["start_time"].get<double>();
    d.duration = j["duration"].get<double>();
    return d;
}

} // namespace

ExperimentConfig default_config() {
    ExperimentConfig c;
    c.plant.noise_cov = Eigen::Vector4d::Constant(1e-4);
    c.cost.init_cov = 0.01 * Eigen::Matrix4d::Identity();
    c.matched_default.channel = Disturbance::Channel::Matched;
    c.matched_default.profile = Disturbance::Profile::Impulse;
    c.matched_default.magnitude = 5.0;
    c.matched_default.start_time = 2.0;
    c.unmatched_default.channel = Disturbance::Channel::Unmatched;
    c.unmatched_default.profile = Disturbance::Profile::Impulse;
    c.unmatched_default.magnitude = 0.5;
    c.unmatched_default.start_time = 2.0;
    return c;
}

PilcoConfig ExperimentConfig::pilco_config() const {
    PilcoConfig p;
    p.plant = plant;
    p.param_var_m = param_var_m;
    p.param_var_l = param_var_l;
    p.randomize_params = randomize_params;
    p.cost = cost;
    p.n_basis = n_basis;
    p.init_policy_std = init_policy_std;
    p.policy_lengthscales = policy_lengthscales;
    p.center_spread = center_spread;
    p.max_outer_iters = max_outer_iters;
    p.task_threshold = task_threshold;
    p.gp_fit.restarts = gp_restarts;
    p.gp_fit.max_points = gp_max_points;
    p.opt.max_iters = opt_max_iters;
    return p;
}

ExpertConfig ExperimentConfig::expert_config() const {
    ExpertConfig e;
    e.plant = plant;
    e.param_var_m = param_var_m;
    e.param_var_l = param_var_l;
    e.randomize_params = randomize_params;
    e.x_des = cost.target;
    e.channels = channels;
    e.horizon = cost.horizon;
    e.init_std = expert_init_std;
    e.init_mean = cost.init_mean;
    return e;
}

void ExperimentConfig::save(const std::string& path) const {
    nlohmann::json j;
    j["plant"] = {{"cart_mass", plant.cart_mass},
                  {"pendulum_mass", plant.pendulum_mass},
                  {"pole_length", plant.pole_length},
                  {"gravity", plant.gravity},
                  {"cart_friction", plant.cart_friction},
                  {"noise_cov", to_vec(plant.noise_cov)},
                  {"dt", plant.dt},
                  {"u_max", plant.u_max},
                  {"substeps", plant.substeps}};
    j["sampler"] = {{"randomize", randomize_params},
                    {"var_m", param_var_m},
                    {"var_l", param_var_l}};
    j["cost"] = {{"target", to_vec(cost.target.vec())},
                 {"width", cost.cost_width},
                 {"horizon", cost.horizon},
                 {"init_mean", to_vec(cost.init_mean.vec())},
                 {"init_cov_diag", to_vec(cost.init_cov.diagonal())},
                 {"pole_length", cost.pole_length}};
    j["policy_search"] = {{"n_basis", n_basis},
                          {"init_policy_std", init_policy_std},
                          {"max_outer_iters", max_outer_iters},
                          {"task_threshold", task_threshold},
                          {"gp_restarts", gp_restarts},
                          {"gp_max_points", gp_max_points},
                          {"opt_max_iters", opt_max_iters},
                          {"policy_lengthscales", to_vec(policy_lengthscales)},
                          {"center_spread", to_vec(center_spread)}};
    j["distill"] = {{"structure", structure == PIDStructure::Coupled ? "coupled" : "decoupled"},
                    {"epsilon", distill_epsilon},
                    {"max_iters", distill_max_iters},
                    {"learn_sigma", learn_sigma},
                    {"expert_rollouts", expert_rollouts},
                    {"expert_init_std", to_vec(expert_init_std)},
                    {"channels", channels}};
    j["roa"] = {{"theta_range", roa.theta_range},
                {"theta_dot_range", roa.theta_dot_range},
                {"resolution", roa.resolution},
                {"horizon_seconds", roa.horizon_seconds},
                {"tail_tol", roa.tail_tol}};
    j["disturbances"] = {{"matched", disturbance_json(matched_default)},
                         {"unmatched", disturbance_json(unmatched_default)}};
    j["evaluate"] = {{"seconds", evaluate_seconds}, {"settle_tol", settle_tol}};
    j["kde_resolution"] = kde_resolution;
    j["seed"] = seed;
    j["out_dir"] = out_dir;

    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << j.dump(2) << '\n';
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    nlohmann::json j;
    in >> j;

    ExperimentConfig c;
    const auto& p = j["plant"];
    c.plant.cart_mass = p["cart_mass"].get<double>();
    c.plant.pendulum_mass = p["pendulum_mass"].get<double>();
    c.plant.pole_length = p["pole_length"].get<double>();
    c.plant.gravity = p["gravity"].get<double>();
    c.plant.cart_friction = p["cart_friction"].get<double>();
    c.plant.noise_cov = from_vec(p["noise_cov"].get<std::vector<double>>());
    c.plant.dt = p["dt"].get<double>();
    c.plant.u_max = p["u_max"].get<double>();
    c.plant.substeps = p["substeps"].get<int>();
    c.plant.validate();

    c.randomize_params = j["sampler"]["randomize"].get<bool>();
    c.param_var_m = j["sampler"]["var_m"].get<double>();
    c.param_var_l = j["sampler"]["var_l"].get<double>();

    const auto& cost = j["cost"];
    c.cost.target = PlantState(from_vec(cost["target"].get<std::vector<double>>()));
    c.cost.cost_width = cost["width"].get<double>();
    c.cost.horizon = cost["horizon"].get<int>();
    c.cost.init_mean = PlantState(from_vec(cost["init_mean"].get<std::vector<double>>()));
    c.cost.init_cov = from_vec(cost["init_cov_diag"].get<std::vector<double>>()).asDiagonal();
    c.cost.pole_length = cost["pole_length"].get<double>();

    const auto& ps = j["policy_search"];
    c.n_basis = ps["n_basis"].get<int>();
    c.init_policy_std = ps["init_policy_std"].get<double>();
    c.max_outer_iters = ps["max_outer_iters"].get<int>();
    c.task_threshold = ps["task_threshold"].get<double>();
    c.gp_restarts = ps["gp_restarts"].get<int>();
    c.gp_max_points = ps["gp_max_points"].get<int>();
    c.opt_max_iters = ps["opt_max_iters"].get<int>();
    c.policy_lengthscales = from_vec(ps["policy_lengthscales"].get<std::vector<double>>());
    c.center_spread = from_vec(ps["center_spread"].get<std::vector<double>>());

    const auto& d = j["distill"];
    c.structure = d["structure"] == "coupled" ? PIDStructure::Coupled : PIDStructure::Decoupled;
    c.distill_epsilon = d["epsilon"].get<double>();
    c.distill_max_iters = d["max_iters"].get<int>();
    c.learn_sigma = d["learn_sigma"].get<bool>();
    c.expert_rollouts = d["expert_rollouts"].get<int>();
    c.expert_init_std = from_vec(d["expert_init_std"].get<std::vector<double>>());
    c.channels = d["channels"].get<std::vector<int>>();

    const auto& r = j["roa"];
    c.roa.theta_range = r["theta_range"].get<double>();
    c.roa.theta_dot_range = r["theta_dot_range"].get<double>();
    c.roa.resolution = r["resolution"].get<int>();
    c.roa.horizon_seconds = r["horizon_seconds"].get<double>();
    c.roa.tail_tol = r["tail_tol"].get<double>();

    c.matched_default = disturbance_from_json(j["disturbances"]["matched"]);
    c.unmatched_default = disturbance_from_json(j["disturbances"]["unmatched"]);
    c.evaluate_seconds = j["evaluate"]["seconds"].get<double>();
    c.settle_tol = j["evaluate"]["settle_tol"].get<double>();

    c.kde_resolution = j["kde_resolution"].get<int>();
    c.seed = j["seed"].get<std::uint64_t>();
    c.out_dir = j["out_dir"].get<std::string>();
    return c;
}

} // namespace pidtune

#include "pidtune/policy.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>

#include "pidtune/dataset.hpp"
#include "pidtune/optimize.hpp"
#include <json.hpp>

namespace pidtune {

void PolicyParams::validate() const {
    if (centers.rows() < 1) throw std::invalid_argument("policy: need at least one basis");
    if (centers.cols() != 4 || lengthscales.size() != 4 || weights.size() != centers.rows())
        throw std::invalid_argument("policy: shape mismatch");
    if ((lengthscales.array() <= 0).any())
        throw std::invalid_argument("policy: lengthscales must be positive");
    if (u_max <= 0) throw std::invalid_argument("policy: u_max must be positive");
}

double squash(double z) { return (9.0 * std::sin(z) + std::sin(3.0 * z)) / 8.0; }

double policy_eval(const PolicyParams& policy, const PlantState& state) {
    const Eigen::Vector4d s = state.vec();
    double z = 0.0;
    for (Eigen::Index i = 0; i < policy.centers.rows(); ++i) {
        const double d2 = ((policy.centers.row(i).transpose() - s).array() /
                           policy.lengthscales.array()).square().sum();
        z += policy.weights[i] * std::exp(-0.5 * d2);
    }
    return policy.u_max * squash(z);
}

Eigen::Matrix4d cost_weight_matrix(const CostConfig& cost) {
    const double l = cost.pole_length;
    Eigen::Matrix4d W = Eigen::Matrix4d::Zero();
    W(0, 0) = 2.0;
    W(0, 2) = W(2, 0) = l;
    W(2, 2) = l * l;
    return W;
}

double expected_cost(const Eigen::Vector4d& mean, const Eigen::Matrix4d& cov,
                     const CostConfig& cost) {
    const Eigen::Matrix4d T = cost_weight_matrix(cost) / (cost.cost_width * cost.cost_width);
    const Eigen::Vector4d m = mean - cost.target.vec();
    const Eigen::Matrix4d A = Eigen::Matrix4d::Identity() + cov * T;
    Eigen::PartialPivLU<Eigen::Matrix4d> lu(A);
    const double det = lu.determinant();
    if (!(det > 0)) throw PropagationError("expected_cost: indefinite covariance", -1);
    const double quad = m.dot(T * lu.solve(m));
    const double c = 1.0 - std::exp(-0.5 * quad) / std::sqrt(det);
    return std::clamp(c, 0.0, 1.0);
}

double state_cost(const PlantState& s, const CostConfig& cost) {
    return expected_cost(s.vec(), Eigen::Matrix4d::Zero(), cost);
}

ControlMoments policy_moments(const PolicyParams& policy, const Eigen::Vector4d& mean,
                              const Eigen::Matrix4d& cov) {
    // Pre-squash output z is an RBF network == deterministic SE "GP" head.
    KernelHyperparams hp;
    hp.lengthscales = policy.lengthscales;
    hp.signal_variance = 1.0;
    hp.noise_variance = 0.0;
    std::vector<MomentHead> heads{{&hp, &policy.weights, nullptr}};
    const auto z = moment_match(policy.centers, heads, mean, cov);
    const double mz = z.mean[0];
    const double s = std::max(z.cov(0, 0), 0.0);

    // u = u_max/8 * (9 sin z + sin 3z), z Gaussian:
    //   E[sin az]        = sin(a m) exp(-a^2 s / 2)
    //   E[sin az sin bz] = (cos((a-b)m) e^{-(a-b)^2 s/2} - cos((a+b)m) e^{-(a+b)^2 s/2}) / 2
    //   Cov(x, sin az)   = a Cov(x, z) cos(a m) e^{-a^2 s/2}
    const double e1 = std::exp(-0.5 * s);
    const double e9 = std::exp(-4.5 * s);
    const double k = policy.u_max / 8.0;

    ControlMoments out;
    out.mean = k * (9.0 * std::sin(mz) * e1 + std::sin(3.0 * mz) * e9);

    auto sinsin = [&](double a, double b) {
        return 0.5 * (std::cos((a - b) * mz) * std::exp(-0.5 * (a - b) * (a - b) * s) -
                      std::cos((a + b) * mz) * std::exp(-0.5 * (a + b) * (a + b) * s));
    };
    const double m2 = k * k * (81.0 * sinsin(1, 1) + 18.0 * sinsin(1, 3) + sinsin(3, 3));
    out.variance = std::max(m2 - out.mean * out.mean, 0.0);

    const Eigen::Vector4d cxz = z.cross.col(0).head<4>();
    out.cross = cxz * k * (9.0 * std::cos(mz) * e1 + 3.0 * std::cos(3.0 * mz) * e9);
    return out;
}

namespace {

// Symmetrize and clamp eigenvalues at zero; throws if the repair is large.
Eigen::Matrix4d repair_psd(const Eigen::Matrix4d& S, int step) {
    Eigen::Matrix4d sym = 0.5 * (S + S.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(sym);
    const double min_eig = eig.eigenvalues().minCoeff();
    const double scale = std::max(sym.trace(), 1e-12);
    if (min_eig < -1e-6 * scale)
        throw PropagationError("predict_rollout: covariance lost positive semidefiniteness", step);
    if (min_eig >= 0) return sym;
    const Eigen::Vector4d clamped = eig.eigenvalues().cwiseMax(0.0);
    return eig.eigenvectors() * clamped.asDiagonal() * eig.eigenvectors().transpose();
}

} // namespace

RolloutPrediction predict_rollout(const GPModel& gp, const PolicyParams& policy,
                                  const CostConfig& cost) {
    if (gp.input_dim() != 5 || gp.output_dim() != 4)
        throw std::invalid_argument("predict_rollout: GP must map (state, control) to state difference");
    policy.validate();

    RolloutPrediction out;
    Eigen::Vector4d m = cost.init_mean.vec();
    Eigen::Matrix4d S = repair_psd(cost.init_cov, 0);
    out.means.push_back(m);
    out.covs.push_back(S);
    out.J = expected_cost(m, S, cost);

    for (int tau = 1; tau <= cost.horizon; ++tau) {
        const ControlMoments u = policy_moments(policy, m, S);

        Eigen::VectorXd mu_in(5);
        mu_in << m, u.mean;
        Eigen::MatrixXd cov_in(5, 5);
        cov_in.topLeftCorner<4, 4>() = S;
        cov_in.topRightCorner<4, 1>() = u.cross;
        cov_in.bottomLeftCorner<1, 4>() = u.cross.transpose();
        cov_in(4, 4) = u.variance;

        GPModel::UncertainPrediction delta;
        try {
            delta = gp.predict_uncertain(mu_in, 0.5 * (cov_in + cov_in.transpose()));
        } catch (const ConditioningError& e) {
            throw PropagationError(e.what(), tau);
        }

        const Eigen::Matrix4d cross_x_delta = delta.cross.topRows<4>();
        m = m + delta.mean.head<4>();
        S = repair_psd(S + delta.cov + cross_x_delta + cross_x_delta.transpose(), tau);

        out.means.push_back(m);
        out.covs.push_back(S);
        out.J += expected_cost(m, S, cost);
    }
    return out;
}

namespace {

struct ParamPack {
    Eigen::Index nb = 0;
    bool centers = false, lengthscales = false;

    Eigen::VectorXd pack(const PolicyParams& p) const {
        std::vector<double> v(p.weights.begin(), p.weights.end());
        if (centers)
            for (Eigen::Index i = 0; i < p.centers.size(); ++i) v.push_back(p.centers.data()[i]);
        if (lengthscales)
            for (Eigen::Index i = 0; i < 4; ++i) v.push_back(std::log(p.lengthscales[i]));
        return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }

    PolicyParams unpack(const Eigen::VectorXd& v, const PolicyParams& proto) const {
        PolicyParams p = proto;
        p.weights = v.head(nb);
        Eigen::Index off = nb;
        if (centers) {
            p.centers = Eigen::Map<const Eigen::MatrixXd>(v.data() + off, proto.centers.rows(),
                                                          proto.centers.cols());
            off += proto.centers.size();
        }
        if (lengthscales) p.lengthscales = v.segment(off, 4).array().exp();
        return p;
    }
};

} // namespace

PolicyOptResult optimize_policy(const GPModel& gp, const PolicyParams& policy0,
                                const CostConfig& cost, const PolicyOptConfig& opt) {
    ParamPack pack{policy0.weights.size(), opt.optimize_centers, opt.optimize_lengthscales};

    auto eval_J = [&](const Eigen::VectorXd& v) -> double {
        try {
            return predict_rollout(gp, pack.unpack(v, policy0), cost).J;
        } catch (const PropagationError&) {
            return std::numeric_limits<double>::infinity();
        }
    };

    // Central finite differences over the free parameters.
    Objective objective = [&](const Eigen::VectorXd& v, Eigen::VectorXd* grad) -> double {
        const double J = eval_J(v);
        if (grad) {
            grad->resize(v.size());
            for (Eigen::Index i = 0; i < v.size(); ++i) {
                Eigen::VectorXd vp = v, vm = v;
                vp[i] += opt.fd_step;
                vm[i] -= opt.fd_step;
                (*grad)[i] = (eval_J(vp) - eval_J(vm)) / (2.0 * opt.fd_step);
            }
        }
        return J;
    };

    GdOptions gd;
    gd.max_iters = opt.max_iters;
    gd.grad_tol = opt.grad_tol;
    gd.init_step = 0.1;
    gd.max_step_norm = 0.3; // weight-space trust region per accepted step
    gd.lbfgs_memory = 10;
    const GdResult res = minimize_gd(objective, pack.pack(policy0), gd);

    PolicyOptResult out;
    out.policy = pack.unpack(res.x, policy0);
    out.trace = res.trace;
    out.stalled = res.stalled && res.trace.size() <= 1;
    return out;
}

PilcoResult pilco_loop(const PilcoConfig& config, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);

    PilcoResult result;

    // Basis centers sampled once around the operating region; the policy is
    // refined in its weights across iterations so progress carries over.
    PolicyParams policy;
    policy.centers.resize(config.n_basis, 4);
    const Eigen::Vector4d mu0 = config.cost.init_mean.vec();
    for (int i = 0; i < config.n_basis; ++i)
        for (int j = 0; j < 4; ++j)
            policy.centers(i, j) = mu0[j] + config.center_spread[j] * unit(rng);
    policy.weights.resize(config.n_basis);
    for (int i = 0; i < config.n_basis; ++i)
        policy.weights[i] = config.init_policy_std * unit(rng);
    policy.lengthscales = config.policy_lengthscales;
    policy.u_max = config.plant.u_max;

    auto sample_x0 = [&]() {
        Eigen::Vector4d x0 = mu0;
        for (int j = 0; j < 4; ++j)
            x0[j] += std::sqrt(std::max(config.cost.init_cov(j, j), 0.0)) * unit(rng);
        return PlantState(x0);
    };

    auto run_rollout = [&](const PolicyParams& pol) -> Trajectory {
        for (int attempt = 0; attempt < 5; ++attempt) {
            PlantParams params = config.plant;
            if (config.randomize_params)
                params = sample_params(config.plant, config.param_var_m, config.param_var_l, rng);
            const PlantState x0 = sample_x0();
            const std::uint64_t roll_seed = rng();
            try {
                return rollout([&pol](const PlantState& s) { return policy_eval(pol, s); },
                               x0, config.cost.horizon, params, std::nullopt, roll_seed);
            } catch (const DivergenceError&) {
                continue;
            }
        }
        throw std::runtime_error("pilco_loop: repeated rollout divergence");
    };

    auto realized_cost = [&](const Trajectory& traj) {
        double total = 0.0;
        for (const PlantState& s : traj.states) total += state_cost(s, config.cost);
        return total;
    };

    try {
        result.data.push_back(run_rollout(policy)); // random-policy rollout

        for (int iter = 0; iter < config.max_outer_iters; ++iter) {
            const GpPairs pairs = gp_training_pairs(result.data);
            const GPModel gp = fit_gp(pairs.inputs, pairs.targets, config.gp_fit, rng());

            const PolicyOptResult opt = optimize_policy(gp, policy, config.cost, config.opt);
            policy = opt.policy;
            const double j_pred = opt.trace.empty() ? 0.0 : opt.trace.back();

            const Trajectory traj = run_rollout(policy);
            const double j_real = realized_cost(traj);
            result.data.push_back(traj);
            result.log.push_back({iter, j_pred, j_real});

            if (j_real / (config.cost.horizon + 1) < config.task_threshold) {
                result.task_learned = true;
                break;
            }
        }
    } catch (const std::exception& e) {
        result.aborted = true;
        result.abort_reason = e.what();
    }
    result.policy = policy;
    return result;
}

void PolicyParams::save(const std::string& path) const {
    nlohmann::json j;
    j["u_max"] = u_max;
    j["lengthscales"] = std::vector<double>(lengthscales.begin(), lengthscales.end());
    j["weights"] = std::vector<double>(weights.begin(), weights.end());
    for (Eigen::Index i = 0; i < centers.rows(); ++i)
        j["centers"].push_back(std::vector<double>(centers.row(i).begin(), centers.row(i).end()));
    { const auto parent = std::filesystem::path(path).parent_path();
      if (!parent.empty()) std::filesystem::create_directories(parent); }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << j.dump(2) << '\n';
}

PolicyParams PolicyParams::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    nlohmann::json j;
    in >> j;
    PolicyParams p;
    p.u_max = j["u_max"].get<double>();
    const auto ls = j["lengthscales"].get<std::vector<double>>();
    p.lengthscales = Eigen::Map<const Eigen::VectorXd>(ls.data(), ls.size());
    const auto w = j["weights"].get<std::vector<double>>();
    p.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), w.size());
    p.centers.resize(static_cast<Eigen::Index>(j["centers"].size()), 4);
    for (Eigen::Index i = 0; i < p.centers.rows(); ++i)
        for (Eigen::Index c = 0; c < 4; ++c) p.centers(i, c) = j["centers"][i][c].get<double>();
    p.validate();
    return p;
}

void write_jlog_csv(const std::vector<PilcoResult::IterLog>& log, const std::string& path) {
    const std::filesystem::path parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << std::setprecision(17);
    out << "iter,J_predicted,J_realized\n";
    for (const auto& row : log)
        out << row.iter << ',' << row.J_predicted << ',' << row.J_realized << '\n';
}

} // namespace pidtune

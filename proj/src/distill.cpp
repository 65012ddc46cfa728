#include "pidtune/distill.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>

#include "pidtune/gp.hpp"
#include "pidtune/optimize.hpp"
#include <json.hpp>

namespace pidtune {

bool PIDGains::entry_free(Eigen::Index row, Eigen::Index col) const {
    if (structure == PIDStructure::Coupled) return true;
    return col % n_channels() == row;
}

void PIDGains::enforce_pattern() {
    for (Eigen::Index r = 0; r < K.rows(); ++r)
        for (Eigen::Index c = 0; c < K.cols(); ++c)
            if (!entry_free(r, c)) K(r, c) = 0.0;
}

void PIDGains::validate() const {
    if (K.cols() % 3 != 0) throw std::invalid_argument("gains: K must have 3C columns");
    if (sigma.size() != K.rows()) throw std::invalid_argument("gains: one sigma per input");
    if ((sigma.array() <= 0).any()) throw std::domain_error("gains: sigma must be positive");
    if (structure == PIDStructure::Decoupled) {
        if (K.rows() != n_channels())
            throw std::invalid_argument("gains: decoupled needs one row per channel");
        for (Eigen::Index r = 0; r < K.rows(); ++r)
            for (Eigen::Index c = 0; c < K.cols(); ++c)
                if (!entry_free(r, c) && K(r, c) != 0.0)
                    throw std::invalid_argument("gains: zero-pattern entry is non-zero");
    }
}

PIDGains random_gains(PIDStructure structure, Eigen::Index n_channels, Eigen::Index n_inputs,
                      double sigma, std::mt19937_64& rng) {
    std::normal_distribution<double> unit(0.0, 1.0);
    PIDGains g;
    g.structure = structure;
    g.K.resize(n_inputs, 3 * n_channels);
    for (Eigen::Index r = 0; r < g.K.rows(); ++r)
        for (Eigen::Index c = 0; c < g.K.cols(); ++c)
            g.K(r, c) = g.entry_free(r, c) ? unit(rng) : 0.0;
    g.sigma = Eigen::VectorXd::Constant(n_inputs, sigma);
    g.validate();
    return g;
}

double pid_nll(const AugmentedDataset& data, const PIDGains& gains) {
    gains.validate();
    if (data.features.cols() != gains.K.cols() || data.controls.cols() != gains.K.rows())
        throw std::invalid_argument("pid_nll: dataset/gains dimension mismatch");

    double nll = 0.0;
    const double n = static_cast<double>(data.rows());
    for (Eigen::Index r = 0; r < gains.K.rows(); ++r) {
        const double s2 = gains.sigma[r] * gains.sigma[r];
        const Eigen::VectorXd res = data.controls.col(r) - data.features * gains.K.row(r).transpose();
        nll += 0.5 * n * std::log(2.0 * std::numbers::pi * s2) + res.squaredNorm() / (2.0 * s2);
    }
    return nll;
}

namespace {

std::vector<std::pair<Eigen::Index, Eigen::Index>> free_entries(const PIDGains& g) {
    std::vector<std::pair<Eigen::Index, Eigen::Index>> out;
    for (Eigen::Index r = 0; r < g.K.rows(); ++r)
        for (Eigen::Index c = 0; c < g.K.cols(); ++c)
            if (g.entry_free(r, c)) out.emplace_back(r, c);
    return out;
}

} // namespace

Eigen::VectorXd pid_nll_gradient(const AugmentedDataset& data, const PIDGains& gains,
                                 bool learn_sigma) {
    gains.validate();
    const auto entries = free_entries(gains);
    const Eigen::Index nk = static_cast<Eigen::Index>(entries.size());
    Eigen::VectorXd grad(nk + (learn_sigma ? gains.K.rows() : 0));

    std::vector<Eigen::VectorXd> residuals;
    for (Eigen::Index r = 0; r < gains.K.rows(); ++r)
        residuals.push_back(data.controls.col(r) - data.features * gains.K.row(r).transpose());

    for (Eigen::Index k = 0; k < nk; ++k) {
        const auto [r, c] = entries[k];
        const double s2 = gains.sigma[r] * gains.sigma[r];
        grad[k] = -residuals[r].dot(data.features.col(c)) / s2;
    }
    if (learn_sigma) {
        for (Eigen::Index r = 0; r < gains.K.rows(); ++r) {
            const double s2 = gains.sigma[r] * gains.sigma[r];
            grad[nk + r] = static_cast<double>(data.rows()) - residuals[r].squaredNorm() / s2;
        }
    }
    return grad;
}

DistillResult minimize_kld(const AugmentedDataset& data, const PIDGains& gains0,
                           const DistillConfig& config) {
    if (data.rows() == 0) throw std::invalid_argument("minimize_kld: empty dataset");
    if (config.epsilon <= 0 || config.max_iters < 1)
        throw std::invalid_argument("minimize_kld: bad config");
    gains0.validate();

    const auto entries = free_entries(gains0);
    const Eigen::Index nk = static_cast<Eigen::Index>(entries.size());

    // Diagonal preconditioner from feature column scales; descent runs in the
    // scaled space, the objective and reported gains stay in the original one.
    Eigen::VectorXd col_scale(gains0.K.cols());
    for (Eigen::Index c = 0; c < gains0.K.cols(); ++c)
        col_scale[c] = std::max(std::sqrt(data.features.col(c).squaredNorm() /
                                          static_cast<double>(data.rows())), 1e-8);

    auto unpack = [&](const Eigen::VectorXd& v) {
        PIDGains g = gains0;
        for (Eigen::Index k = 0; k < nk; ++k) {
            const auto [r, c] = entries[k];
            g.K(r, c) = v[k] / col_scale[c];
        }
        if (config.learn_sigma)
            for (Eigen::Index r = 0; r < g.sigma.size(); ++r)
                g.sigma[r] = std::exp(v[nk + r]);
        return g;
    };

    Eigen::VectorXd x0(nk + (config.learn_sigma ? gains0.sigma.size() : 0));
    for (Eigen::Index k = 0; k < nk; ++k) {
        const auto [r, c] = entries[k];
        x0[k] = gains0.K(r, c) * col_scale[c];
    }
    if (config.learn_sigma)
        for (Eigen::Index r = 0; r < gains0.sigma.size(); ++r)
            x0[nk + r] = std::log(gains0.sigma[r]);

    Objective objective = [&](const Eigen::VectorXd& v, Eigen::VectorXd* grad) -> double {
        const PIDGains g = unpack(v);
        const double value = pid_nll(data, g);
        if (!std::isfinite(value))
            throw std::runtime_error("minimize_kld: non-finite objective, check dataset");
        if (grad) {
            const Eigen::VectorXd raw = pid_nll_gradient(data, g, config.learn_sigma);
            grad->resize(v.size());
            for (Eigen::Index k = 0; k < nk; ++k) (*grad)[k] = raw[k] / col_scale[entries[k].second];
            if (config.learn_sigma) grad->tail(gains0.sigma.size()) = raw.tail(gains0.sigma.size());
        }
        return value;
    };

    GdOptions gd;
    gd.max_iters = config.max_iters;
    gd.abs_decrease_tol = config.epsilon;
    gd.grad_tol = 0.0; // run to the epsilon decrease criterion
    gd.init_step = 1.0 / static_cast<double>(data.rows());
    const GdResult res = minimize_gd(objective, x0, gd);

    DistillResult out;
    out.gains = unpack(res.x);
    out.trace = res.trace;
    out.iterations = static_cast<int>(res.trace.size()) - 1;
    out.converged = !res.stalled && res.iters < config.max_iters;
    if (res.stalled) out.converged = true; // no further decrease possible
    return out;
}

PIDGains closed_form_gains(const AugmentedDataset& data, PIDStructure structure) {
    const Eigen::Index C = static_cast<Eigen::Index>(data.channels.size());
    const Eigen::Index N = data.controls.cols();
    PIDGains g;
    g.structure = structure;
    g.K = Eigen::MatrixXd::Zero(N, 3 * C);
    g.sigma.resize(N);

    for (Eigen::Index r = 0; r < N; ++r) {
        std::vector<Eigen::Index> cols;
        for (Eigen::Index c = 0; c < g.K.cols(); ++c)
            if (g.entry_free(r, c)) cols.push_back(c);

        Eigen::MatrixXd A(data.rows(), static_cast<Eigen::Index>(cols.size()));
        for (std::size_t j = 0; j < cols.size(); ++j) A.col(j) = data.features.col(cols[j]);
        const Eigen::VectorXd b = data.controls.col(r);

        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
        Eigen::VectorXd k;
        if (qr.rank() == A.cols()) {
            k = qr.solve(b);
        } else {
            Eigen::MatrixXd G = A.transpose() * A;
            G.diagonal().array() += 1e-8;
            Eigen::LDLT<Eigen::MatrixXd> ldlt(G);
            if (ldlt.info() != Eigen::Success)
                throw ConditioningError("closed_form_gains: rank-deficient features after ridge");
            k = ldlt.solve(A.transpose() * b);
        }
        for (std::size_t j = 0; j < cols.size(); ++j) g.K(r, cols[j]) = k[j];
        const double mse = (b - A * k).squaredNorm() / static_cast<double>(data.rows());
        g.sigma[r] = std::sqrt(std::max(mse, 1e-16));
    }
    return g;
}

ExpertData collect_expert_data(const ExpertConfig& config, const PolicyParams& policy,
                               int n_rollouts, std::uint64_t seed) {
    if (n_rollouts < 1) throw std::invalid_argument("collect_expert_data: n_rollouts >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);

    ExpertData out;
    for (int i = 0; i < n_rollouts; ++i) {
        PlantParams params = config.plant;
        if (config.randomize_params)
            params = sample_params(config.plant, config.param_var_m, config.param_var_l, rng);
        Eigen::Vector4d x0 = config.init_mean.vec();
        for (int j = 0; j < 4; ++j) x0[j] += config.init_std[j] * unit(rng);
        const std::uint64_t roll_seed = rng();
        try {
            out.trajectories.push_back(
                rollout([&policy](const PlantState& s) { return policy_eval(policy, s); },
                        PlantState(x0), config.horizon, params, std::nullopt, roll_seed));
        } catch (const DivergenceError&) {
            ++out.dropped;
        }
    }
    if (out.trajectories.empty())
        throw std::runtime_error("collect_expert_data: all rollouts diverged");
    out.data = augment(out.trajectories, config.x_des, config.channels, config.plant.dt);
    return out;
}

DensityGrid kde_joint(const std::vector<double>& samples_a, const std::vector<double>& samples_b,
                      const GridSpec& grid, std::optional<double> bandwidth) {
    if (samples_a.size() != samples_b.size() || samples_a.size() < 2)
        throw std::invalid_argument("kde_joint: need >= 2 paired samples");
    if (bandwidth && *bandwidth <= 0) throw std::invalid_argument("kde_joint: bandwidth > 0");
    const std::size_t n = samples_a.size();

    auto silverman = [n](const std::vector<double>& s, double cell) {
        double mean = 0;
        for (double v : s) mean += v;
        mean /= static_cast<double>(s.size());
        double var = 0;
        for (double v : s) var += (v - mean) * (v - mean);
        var /= static_cast<double>(s.size());
        const double h = 1.06 * std::sqrt(var) * std::pow(static_cast<double>(n), -1.0 / 6.0);
        // Degenerate-sample floor at half a grid cell so the mass still
        // registers on the grid.
        return std::max({h, 0.5 * cell, 1e-12});
    };
    const double cell_a = (grid.a_max - grid.a_min) / grid.na;
    const double cell_b = (grid.b_max - grid.b_min) / grid.nb;
    const double ha = bandwidth ? *bandwidth : silverman(samples_a, cell_a);
    const double hb = bandwidth ? *bandwidth : silverman(samples_b, cell_b);

    DensityGrid out;
    out.spec = grid;
    out.density.setZero(grid.na, grid.nb);
    for (int i = 0; i < grid.na; ++i) {
        const double a = grid.a_center(i);
        for (int j = 0; j < grid.nb; ++j) {
            const double b = grid.b_center(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                const double da = (a - samples_a[k]) / ha;
                const double db = (b - samples_b[k]) / hb;
                acc += std::exp(-0.5 * (da * da + db * db));
            }
            out.density(i, j) = acc;
        }
    }
    const double total = out.density.sum() * grid.cell_area();
    if (total <= 0) throw std::runtime_error("kde_joint: zero density mass on grid");
    out.density /= total;
    return out;
}

double kld_discrete(const Eigen::MatrixXd& p, const Eigen::MatrixXd& q) {
    if (p.rows() != q.rows() || p.cols() != q.cols())
        throw std::invalid_argument("kld_discrete: shape mismatch");
    double d = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double pi = p.data()[i];
        if (pi > 0) d += pi * std::log(pi / std::max(q.data()[i], 1e-12));
    }
    return d;
}

double kld_discrete(const DensityGrid& p, const DensityGrid& q) {
    return kld_discrete((p.density * p.spec.cell_area()).eval(),
                        (q.density * q.spec.cell_area()).eval());
}

void write_density_csv(const DensityGrid& grid, const std::string& path) {
    { const auto parent = std::filesystem::path(path).parent_path();
      if (!parent.empty()) std::filesystem::create_directories(parent); }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << std::setprecision(17);
    out << "# a_min=" << grid.spec.a_min << " a_max=" << grid.spec.a_max
        << " b_min=" << grid.spec.b_min << " b_max=" << grid.spec.b_max
        << " na=" << grid.spec.na << " nb=" << grid.spec.nb << '\n';
    for (Eigen::Index i = 0; i < grid.density.rows(); ++i) {
        for (Eigen::Index j = 0; j < grid.density.cols(); ++j) {
            out << grid.density(i, j);
            if (j + 1 < grid.density.cols()) out << ',';
        }
        out << '\n';
    }
}

Eigen::VectorXd pid_control(const PIDGains& gains, PidControllerState& state,
                            const Eigen::VectorXd& e, double dt, const PidOptions& opts) {
    if (dt <= 0) throw std::invalid_argument("pid_control: dt must be positive");
    const Eigen::Index C = e.size();
    if (state.integral.size() == 0) state.integral = Eigen::VectorXd::Zero(C);
    if (!state.has_prev) {
        state.prev_error = e;
        state.has_prev = true;
    }

    const Eigen::VectorXd prev_integral = state.integral;
    state.integral += dt * e;
    Eigen::VectorXd feat(3 * C);
    feat.segment(0, C) = e;
    feat.segment(C, C) = state.integral;
    feat.segment(2 * C, C) = (e - state.prev_error) / dt;
    state.prev_error = e;

    Eigen::VectorXd u = gains.K * feat;
    bool clamped = false;
    for (Eigen::Index r = 0; r < u.size(); ++r) {
        if (std::abs(u[r]) > opts.u_max) {
            u[r] = std::copysign(opts.u_max, u[r]);
            clamped = true;
        }
    }
    if (clamped && opts.anti_windup) state.integral = prev_integral;
    return u;
}

Controller make_pid_controller(const PIDGains& gains, const PlantState& x_des,
                               const std::vector<int>& channels, double dt,
                               const PidOptions& opts, bool zero_integral) {
    PIDGains g = gains;
    if (zero_integral) {
        const Eigen::Index C = g.n_channels();
        g.K.middleCols(C, C).setZero();
    }
    const Vec4 des = x_des.vec();
    auto state = std::make_shared<PidControllerState>();
    return [g, des, channels, dt, opts, state](const PlantState& s) -> double {
        Eigen::VectorXd e(static_cast<Eigen::Index>(channels.size()));
        const Vec4 v = s.vec();
        for (std::size_t k = 0; k < channels.size(); ++k) e[k] = des[channels[k]] - v[channels[k]];
        return pid_control(g, *state, e, dt, opts)[0];
    };
}

void PIDGains::save(const std::string& path) const {
    nlohmann::json j;
    j["structure"] = structure == PIDStructure::Coupled ? "coupled" : "decoupled";
    j["feature_ordering"] = "e_x,e_theta,i_x,i_theta,d_x,d_theta";
    j["K"] = std::vector<std::vector<double>>();
    for (Eigen::Index r = 0; r < K.rows(); ++r)
        j["K"].push_back(std::vector<double>(K.row(r).begin(), K.row(r).end()));
    j["sigma"] = std::vector<double>(sigma.begin(), sigma.end());
    { const auto parent = std::filesystem::path(path).parent_path();
      if (!parent.empty()) std::filesystem::create_directories(parent); }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << j.dump(2) << '\n';
}

PIDGains PIDGains::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    nlohmann::json j;
    in >> j;
    PIDGains g;
    g.structure = j["structure"] == "coupled" ? PIDStructure::Coupled : PIDStructure::Decoupled;
    const auto rows = j["K"].get<std::vector<std::vector<double>>>();
    g.K.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (Eigen::Index r = 0; r < g.K.rows(); ++r)
        for (Eigen::Index c = 0; c < g.K.cols(); ++c) g.K(r, c) = rows[r][c];
    const auto sig = j["sigma"].get<std::vector<double>>();
    g.sigma = Eigen::Map<const Eigen::VectorXd>(sig.data(), sig.size());
    g.validate();
    return g;
}

} // namespace pidtune

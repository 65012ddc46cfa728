#include "pidtune/gp.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "pidtune/optimize.hpp"
#include <json.hpp>

namespace pidtune {

namespace {

// K_se(i,j) = s2 * exp(-0.5 * sum_d ((a_d - b_d)/l_d)^2), no noise term.
Eigen::MatrixXd se_kernel_matrix(const Eigen::MatrixXd& X, const KernelHyperparams& hp) {
    const Eigen::Index n = X.rows();
    const Eigen::MatrixXd Xs = X * hp.lengthscales.cwiseInverse().asDiagonal();
    const Eigen::VectorXd sq = Xs.rowwise().squaredNorm();
    Eigen::MatrixXd D2 = sq.replicate(1, n) + sq.transpose().replicate(n, 1) - 2.0 * Xs * Xs.transpose();
    D2 = D2.cwiseMax(0.0);
    return hp.signal_variance * (-0.5 * D2.array()).exp().matrix();
}

} // namespace

Eigen::VectorXd KernelHyperparams::log_vector() const {
    Eigen::VectorXd v(lengthscales.size() + 2);
    v.head(lengthscales.size()) = lengthscales.array().log();
    v[lengthscales.size()] = std::log(signal_variance);
    v[lengthscales.size() + 1] = std::log(noise_variance);
    return v;
}

KernelHyperparams KernelHyperparams::from_log_vector(const Eigen::VectorXd& v) {
    KernelHyperparams hp;
    const Eigen::Index d = v.size() - 2;
    hp.lengthscales = v.head(d).array().exp();
    hp.signal_variance = std::exp(v[d]);
    hp.noise_variance = std::exp(v[d + 1]);
    return hp;
}

double kernel_eval(const KernelHyperparams& hp, const Eigen::VectorXd& a,
                   const Eigen::VectorXd& b) {
    if (a.size() != b.size() || a.size() != hp.lengthscales.size())
        throw std::invalid_argument("kernel_eval: dimension mismatch");
    const double d2 = ((a - b).array() / hp.lengthscales.array()).square().sum();
    return hp.signal_variance * std::exp(-0.5 * d2);
}

Eigen::LLT<Eigen::MatrixXd> chol_with_jitter(const Eigen::MatrixXd& K) {
    const double scale = K.diagonal().mean();
    for (double level : {0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6}) {
        Eigen::MatrixXd Kj = K;
        Kj.diagonal().array() += level * scale;
        Eigen::LLT<Eigen::MatrixXd> llt(Kj);
        if (llt.info() == Eigen::Success) return llt;
    }
    throw ConditioningError("kernel matrix not positive definite after maximum jitter");
}

GPModel::GPModel(Eigen::MatrixXd inputs, Eigen::MatrixXd targets,
                 std::vector<KernelHyperparams> hp)
    : inputs_(std::move(inputs)), targets_(std::move(targets)), hp_(std::move(hp)) {
    if (static_cast<Eigen::Index>(hp_.size()) != targets_.cols())
        throw std::invalid_argument("GPModel: one hyperparameter set per output head");
    refresh();
}

void GPModel::refresh() {
    const Eigen::Index n_rows = inputs_.rows();
    chol_.clear();
    alpha_.clear();
    kinv_.clear();
    for (Eigen::Index m = 0; m < targets_.cols(); ++m) {
        Eigen::MatrixXd K = se_kernel_matrix(inputs_, hp_[m]);
        K.diagonal().array() += hp_[m].noise_variance;
        auto llt = chol_with_jitter(K);
        alpha_.push_back(llt.solve(targets_.col(m)));
        kinv_.push_back(llt.solve(Eigen::MatrixXd::Identity(n_rows, n_rows)));
        chol_.push_back(std::move(llt));
    }
}

GPModel::Prediction GPModel::predict(const Eigen::VectorXd& x) const {
    const Eigen::Index n_rows = n();
    Prediction out;
    out.mean.resize(output_dim());
    out.variance.resize(output_dim());
    for (Eigen::Index m = 0; m < output_dim(); ++m) {
        Eigen::VectorXd k(n_rows);
        for (Eigen::Index i = 0; i < n_rows; ++i)
            k[i] = kernel_eval(hp_[m], inputs_.row(i).transpose(), x);
        out.mean[m] = k.dot(alpha_[m]);
        const double reduction = k.dot(chol_[m].solve(k));
        out.variance[m] = std::max(hp_[m].signal_variance + hp_[m].noise_variance - reduction, 0.0);
    }
    return out;
}

Evidence log_marginal_likelihood(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets,
                                 const KernelHyperparams& hp) {
    const Eigen::Index n = inputs.rows();
    const Eigen::Index d = inputs.cols();
    const Eigen::MatrixXd Kse = se_kernel_matrix(inputs, hp);
    Eigen::MatrixXd K = Kse;
    K.diagonal().array() += hp.noise_variance;

    auto llt = chol_with_jitter(K);
    const Eigen::VectorXd alpha = llt.solve(targets);
    const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();

    Evidence ev;
    ev.value = -0.5 * targets.dot(alpha) - 0.5 * logdet -
               0.5 * n * std::log(2.0 * std::numbers::pi);

    // dL/dtheta = 0.5 tr((alpha alpha^T - K^-1) dK/dtheta)
    const Eigen::MatrixXd kinv = llt.solve(Eigen::MatrixXd::Identity(n, n));
    const Eigen::MatrixXd W = alpha * alpha.transpose() - kinv;

    ev.grad.resize(d + 2);
    for (Eigen::Index j = 0; j < d; ++j) {
        const Eigen::VectorXd xj = inputs.col(j);
        const double il2 = 1.0 / (hp.lengthscales[j] * hp.lengthscales[j]);
        const Eigen::MatrixXd diff = xj.replicate(1, n) - xj.transpose().replicate(n, 1);
        // dK/dlog l_j = Kse .* (x_i - x_j)^2 / l_j^2
        ev.grad[j] = 0.5 * (W.array() * Kse.array() * diff.array().square() * il2).sum();
    }
    ev.grad[d] = 0.5 * (W.array() * Kse.array()).sum();          // dK/dlog s2 = Kse
    ev.grad[d + 1] = 0.5 * hp.noise_variance * W.trace();        // dK/dlog n2 = n2 I
    return ev;
}

GPModel fit_gp(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
               const FitOptions& opts, std::uint64_t seed) {
    if (inputs.rows() < 2) throw std::invalid_argument("fit_gp: need at least 2 points");
    if (inputs.rows() != targets.rows()) throw std::invalid_argument("fit_gp: row mismatch");

    std::mt19937_64 rng(seed);

    Eigen::MatrixXd X = inputs;
    Eigen::MatrixXd Y = targets;
    if (X.rows() > opts.max_points) {
        // uniform subsample without replacement (Fisher-Yates prefix)
        std::vector<Eigen::Index> idx(X.rows());
        for (Eigen::Index i = 0; i < X.rows(); ++i) idx[i] = i;
        for (int i = 0; i < opts.max_points; ++i) {
            std::uniform_int_distribution<Eigen::Index> pick(i, X.rows() - 1);
            std::swap(idx[i], idx[pick(rng)]);
        }
        Eigen::MatrixXd Xs(opts.max_points, X.cols()), Ys(opts.max_points, Y.cols());
        for (int i = 0; i < opts.max_points; ++i) {
            Xs.row(i) = X.row(idx[i]);
            Ys.row(i) = Y.row(idx[i]);
        }
        X = std::move(Xs);
        Y = std::move(Ys);
    }

    const Eigen::Index d = X.cols();
    std::vector<KernelHyperparams> fitted;
    for (Eigen::Index m = 0; m < Y.cols(); ++m) {
        const Eigen::VectorXd y = Y.col(m);

        KernelHyperparams init;
        init.lengthscales.resize(d);
        for (Eigen::Index j = 0; j < d; ++j) {
            const double sd = std::sqrt((X.col(j).array() - X.col(j).mean()).square().mean());
            init.lengthscales[j] = std::max(sd, 1e-3);
        }
        const double yvar = std::max((y.array() - y.mean()).square().mean(), 1e-8);
        init.signal_variance = yvar;
        init.noise_variance = 0.01 * yvar + 1e-10;

        auto objective = [&](const Eigen::VectorXd& logv, Eigen::VectorXd* grad) -> double {
            try {
                const Evidence ev = log_marginal_likelihood(X, y, KernelHyperparams::from_log_vector(logv));
                if (grad) *grad = -ev.grad;
                return -ev.value;
            } catch (const ConditioningError&) {
                if (grad) grad->setZero(logv.size());
                return std::numeric_limits<double>::infinity();
            }
        };

        double best = std::numeric_limits<double>::infinity();
        Eigen::VectorXd best_log;
        std::normal_distribution<double> unit(0.0, 1.0);
        for (int r = 0; r < opts.restarts; ++r) {
            Eigen::VectorXd start = init.log_vector();
            if (r > 0)
                for (Eigen::Index j = 0; j < start.size(); ++j) start[j] += 0.5 * unit(rng);
            if (!std::isfinite(objective(start, nullptr))) continue;
            GdOptions gd;
            gd.max_iters = opts.max_iters;
            gd.grad_tol = 1e-5;
            gd.init_step = 0.1;
            const GdResult res = minimize_gd(objective, start, gd);
            if (res.value < best) {
                best = res.value;
                best_log = res.x;
            }
        }
        if (!std::isfinite(best))
            throw std::runtime_error("fit_gp: all restarts failed for head " + std::to_string(m));
        fitted.push_back(KernelHyperparams::from_log_vector(best_log));
    }
    return GPModel(std::move(X), std::move(Y), std::move(fitted));
}

GPModel::UncertainPrediction moment_match(const Eigen::MatrixXd& centers,
                                          const std::vector<MomentHead>& heads,
                                          const Eigen::VectorXd& mean,
                                          const Eigen::MatrixXd& cov) {
    const Eigen::Index n = centers.rows();
    const Eigen::Index d = centers.cols();
    const Eigen::Index h = static_cast<Eigen::Index>(heads.size());
    if (mean.size() != d || cov.rows() != d || cov.cols() != d)
        throw std::invalid_argument("moment_match: dimension mismatch");

    const Eigen::MatrixXd nu = centers.rowwise() - mean.transpose(); // n x d

    // Per-head quantities.
    std::vector<Eigen::VectorXd> ilam2(h), q(h), logk(h);
    std::vector<Eigen::MatrixXd> V(h);
    GPModel::UncertainPrediction out;
    out.mean.setZero(h);
    out.cov.setZero(h, h);
    out.cross.setZero(d, h);

    for (Eigen::Index a = 0; a < h; ++a) {
        const KernelHyperparams& hp = *heads[a].hp;
        ilam2[a] = hp.lengthscales.array().square().inverse();
        V[a] = nu * ilam2[a].asDiagonal();

        Eigen::MatrixXd B = cov;
        B.diagonal() += ilam2[a].cwiseInverse();
        Eigen::LLT<Eigen::MatrixXd> llt(B);
        if (llt.info() != Eigen::Success)
            throw ConditioningError("moment_match: covariance-plus-lengthscale matrix singular");
        const double logdetB = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
        const double logdet_lam = -ilam2[a].array().log().sum();

        const Eigen::MatrixXd Binv_nu = llt.solve(nu.transpose()); // d x n
        const Eigen::VectorXd quad = (nu.array() * Binv_nu.transpose().array()).rowwise().sum();
        q[a] = (std::log(hp.signal_variance) - 0.5 * (logdetB - logdet_lam) -
                0.5 * quad.array()).exp();
        logk[a] = std::log(hp.signal_variance) -
                  0.5 * (nu.array().square().matrix() * ilam2[a]).array();

        const Eigen::VectorXd& beta = *heads[a].beta;
        out.mean[a] = beta.dot(q[a]);
        const Eigen::VectorXd w = nu.transpose() * beta.cwiseProduct(q[a]); // d
        out.cross.col(a) = cov * llt.solve(w);
    }

    for (Eigen::Index a = 0; a < h; ++a) {
        for (Eigen::Index b = a; b < h; ++b) {
            Eigen::MatrixXd R = cov * (ilam2[a] + ilam2[b]).asDiagonal();
            R.diagonal().array() += 1.0;
            Eigen::PartialPivLU<Eigen::MatrixXd> lu(R);
            const double detR = lu.determinant();
            if (!(detR > 0))
                throw ConditioningError("moment_match: non-positive determinant in pair term");
            const Eigen::MatrixXd T = lu.solve(cov); // R^-1 Sigma

            const Eigen::MatrixXd VaT = V[a] * T; // n x d
            const Eigen::MatrixXd VbT = V[b] * T;
            const Eigen::VectorXd ra = 0.5 * (VaT.array() * V[a].array()).rowwise().sum();
            const Eigen::VectorXd rb = 0.5 * (VbT.array() * V[b].array()).rowwise().sum();
            const Eigen::MatrixXd cross_term = VaT * V[b].transpose(); // n x n

            Eigen::MatrixXd logQ = cross_term;
            logQ.colwise() += (logk[a] + ra);
            logQ.rowwise() += (logk[b] + rb).transpose();
            logQ.array() -= 0.5 * std::log(detR);
            const Eigen::MatrixXd Q = logQ.array().exp();

            double c = heads[a].beta->dot(Q * (*heads[b].beta)) - out.mean[a] * out.mean[b];
            if (a == b && heads[a].kinv != nullptr) {
                c += heads[a].hp->signal_variance -
                     (heads[a].kinv->array() * Q.array()).sum() +
                     heads[a].hp->noise_variance;
            }
            out.cov(a, b) = c;
            out.cov(b, a) = c;
        }
    }
    return out;
}

GPModel::UncertainPrediction GPModel::predict_uncertain(const Eigen::VectorXd& mean,
                                                        const Eigen::MatrixXd& cov) const {
    std::vector<MomentHead> heads;
    for (Eigen::Index m = 0; m < output_dim(); ++m)
        heads.push_back({&hp_[m], &alpha_[m], &kinv_[m]});
    return moment_match(inputs_, heads, mean, cov);
}

void GPModel::save(const std::string& path) const {
    nlohmann::json j;
    j["input_dim"] = input_dim();
    j["output_dim"] = output_dim();
    j["inputs"] = std::vector<std::vector<double>>();
    j["targets"] = std::vector<std::vector<double>>();
    for (Eigen::Index i = 0; i < n(); ++i) {
        j["inputs"].push_back(std::vector<double>(inputs_.row(i).begin(), inputs_.row(i).end()));
        j["targets"].push_back(std::vector<double>(targets_.row(i).begin(), targets_.row(i).end()));
    }
    for (const KernelHyperparams& hp : hp_) {
        nlohmann::json head;
        head["lengthscales"] = std::vector<double>(hp.lengthscales.begin(), hp.lengthscales.end());
        head["signal_variance"] = hp.signal_variance;
        head["noise_variance"] = hp.noise_variance;
        j["heads"].push_back(head);
    }
    { const auto parent = std::filesystem::path(path).parent_path();
      if (!parent.empty()) std::filesystem::create_directories(parent); }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << j.dump(2) << '\n';
}

GPModel GPModel::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    nlohmann::json j;
    in >> j;
    const Eigen::Index rows = static_cast<Eigen::Index>(j["inputs"].size());
    const Eigen::Index din = j["input_dim"].get<Eigen::Index>();
    const Eigen::Index dout = j["output_dim"].get<Eigen::Index>();
    Eigen::MatrixXd X(rows, din), Y(rows, dout);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index c = 0; c < din; ++c) X(i, c) = j["inputs"][i][c].get<double>();
        for (Eigen::Index c = 0; c < dout; ++c) Y(i, c) = j["targets"][i][c].get<double>();
    }
    std::vector<KernelHyperparams> hps;
    for (const auto& head : j["heads"]) {
        KernelHyperparams hp;
        const auto ls = head["lengthscales"].get<std::vector<double>>();
        hp.lengthscales = Eigen::Map<const Eigen::VectorXd>(ls.data(), ls.size());
        hp.signal_variance = head["signal_variance"].get<double>();
        hp.noise_variance = head["noise_variance"].get<double>();
        hps.push_back(std::move(hp));
    }
    return GPModel(std::move(X), std::move(Y), std::move(hps));
}

} // namespace pidtune

#ifndef PIDTUNE_GP_HPP
#define PIDTUNE_GP_HPP

#include <Eigen/Dense>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace pidtune {

class ConditioningError : public std::runtime_error {
public:
    explicit ConditioningError(const std::string& what) : std::runtime_error(what) {}
};

// Squared-exponential ARD kernel hyperparameters, one set per output head.
struct KernelHyperparams {
    Eigen::VectorXd lengthscales; // per input dimension
    double signal_variance = 1.0;
    double noise_variance = 1e-2;

    Eigen::VectorXd log_vector() const;
    static KernelHyperparams from_log_vector(const Eigen::VectorXd& v);
};

double kernel_eval(const KernelHyperparams& hp, const Eigen::VectorXd& a,
                   const Eigen::VectorXd& b);

// Independent GP per output dimension over shared inputs. Cached Cholesky
// factorization, weights and explicit inverse per head.
class GPModel {
public:
    GPModel() = default;
    GPModel(Eigen::MatrixXd inputs, Eigen::MatrixXd targets,
            std::vector<KernelHyperparams> hp);

    Eigen::Index n() const { return inputs_.rows(); }
    Eigen::Index input_dim() const { return inputs_.cols(); }
    Eigen::Index output_dim() const { return targets_.cols(); }
    const Eigen::MatrixXd& inputs() const { return inputs_; }
    const Eigen::MatrixXd& targets() const { return targets_; }
    const std::vector<KernelHyperparams>& hyperparams() const { return hp_; }
    const Eigen::VectorXd& weights(int head) const { return alpha_[head]; }
    const Eigen::MatrixXd& kinv(int head) const { return kinv_[head]; }

    struct Prediction {
        Eigen::VectorXd mean;
        Eigen::VectorXd variance; // includes noise variance
    };
    Prediction predict(const Eigen::VectorXd& x) const;

    struct UncertainPrediction {
        Eigen::VectorXd mean;  // M
        Eigen::MatrixXd cov;   // M x M, symmetric
        Eigen::MatrixXd cross; // D x M input-output covariance
    };
    // Exact SE-kernel moment matching for a Gaussian input N(mean, cov).
    UncertainPrediction predict_uncertain(const Eigen::VectorXd& mean,
                                          const Eigen::MatrixXd& cov) const;

    void save(const std::string& path) const;
    static GPModel load(const std::string& path);

private:
    void refresh();

    Eigen::MatrixXd inputs_;  // n x D
    Eigen::MatrixXd targets_; // n x M
    std::vector<KernelHyperparams> hp_;
    std::vector<Eigen::LLT<Eigen::MatrixXd>> chol_;
    std::vector<Eigen::VectorXd> alpha_;
    std::vector<Eigen::MatrixXd> kinv_;
};

struct Evidence {
    double value = 0.0;
    Eigen::VectorXd grad; // w.r.t. log-hyperparameters [log l_1..D, log s2, log n2]
};
// Log marginal likelihood of one head and its analytic gradient.
Evidence log_marginal_likelihood(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets,
                                 const KernelHyperparams& hp);

struct FitOptions {
    int restarts = 3;
    int max_iters = 200;
    int max_points = 400; // uniform subsample cap
};
GPModel fit_gp(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
               const FitOptions& opts, std::uint64_t seed);

// Moment matching for a bank of SE-kernel heads sharing centers. A head with
// kinv == nullptr is a deterministic RBF function (no model variance, no
// noise) — used for the RBF policy network.
struct MomentHead {
    const KernelHyperparams* hp = nullptr;
    const Eigen::VectorXd* beta = nullptr;
    const Eigen::MatrixXd* kinv = nullptr;
};
GPModel::UncertainPrediction moment_match(const Eigen::MatrixXd& centers,
                                          const std::vector<MomentHead>& heads,
                                          const Eigen::VectorXd& mean,
                                          const Eigen::MatrixXd& cov);

// Cholesky with escalating jitter (up to 1e-6 relative to the mean diagonal).
Eigen::LLT<Eigen::MatrixXd> chol_with_jitter(const Eigen::MatrixXd& K);

} // namespace pidtune

#endif

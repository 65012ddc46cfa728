#include "pidtune/optimize.hpp"

#include <cmath>
#include <deque>
#include <stdexcept>

namespace pidtune {

namespace {

// L-BFGS two-loop recursion; falls back to steepest descent with no memory.
Eigen::VectorXd search_direction(const Eigen::VectorXd& grad,
                                 const std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>>&
                                     memory) {
    Eigen::VectorXd q = grad;
    if (memory.empty()) return q;
    std::vector<double> alpha(memory.size());
    std::vector<double> rho(memory.size());
    for (std::size_t i = memory.size(); i-- > 0;) {
        const auto& [s, y] = memory[i];
        rho[i] = 1.0 / y.dot(s);
        alpha[i] = rho[i] * s.dot(q);
        q -= alpha[i] * y;
    }
    const auto& [s_last, y_last] = memory.back();
    q *= s_last.dot(y_last) / y_last.squaredNorm();
    for (std::size_t i = 0; i < memory.size(); ++i) {
        const auto& [s, y] = memory[i];
        const double beta = rho[i] * y.dot(q);
        q += (alpha[i] - beta) * s;
    }
    return q;
}

} // namespace

GdResult minimize_gd(const Objective& f, const Eigen::VectorXd& x0, const GdOptions& opts) {
    GdResult res;
    res.x = x0;
    Eigen::VectorXd grad(x0.size());
    res.value = f(res.x, &grad);
    if (!std::isfinite(res.value))
        throw std::runtime_error("minimize_gd: objective not finite at start");
    res.trace.push_back(res.value);
    res.grad_norm = grad.norm();

    std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> memory;

    double step = opts.init_step;
    for (res.iters = 0; res.iters < opts.max_iters; ++res.iters) {
        if (res.grad_norm < opts.grad_tol * (1.0 + std::abs(res.value))) return res;

        Eigen::VectorXd dir = search_direction(grad, memory);
        double slope = grad.dot(dir); // descent requires > 0 for x - step*dir
        if (!(slope > 0) || !dir.allFinite()) {
            dir = grad;
            slope = grad.squaredNorm();
            memory.clear();
        }
        double trial = memory.empty() ? step : 1.0;
        // Keep individual steps inside the trust region; gradient magnitudes
        // can be wildly out of scale with the parameters.
        const double dir_norm = dir.norm();
        if (opts.max_step_norm > 0 && trial * dir_norm > opts.max_step_norm)
            trial = opts.max_step_norm / dir_norm;

        bool accepted = false;
        for (int ls = 0; ls < opts.max_line_search; ++ls) {
            const Eigen::VectorXd cand = res.x - trial * dir;
            const double v = f(cand, nullptr);
            if (std::isfinite(v) && v <= res.value - opts.armijo * trial * slope) {
                const double decrease = res.value - v;
                Eigen::VectorXd new_grad(res.x.size());
                const double new_value = f(cand, &new_grad);
                const Eigen::VectorXd s = cand - res.x;
                const Eigen::VectorXd y = new_grad - grad;
                if (opts.lbfgs_memory > 0 && y.dot(s) > 1e-12 * s.norm() * y.norm()) {
                    memory.emplace_back(s, y);
                    while (memory.size() > static_cast<std::size_t>(opts.lbfgs_memory))
                        memory.pop_front();
                }
                res.x = cand;
                res.value = new_value;
                grad = new_grad;
                res.grad_norm = grad.norm();
                res.trace.push_back(res.value);
                if (memory.empty()) step = trial * opts.step_grow;
                accepted = true;
                if (opts.abs_decrease_tol > 0 && decrease < opts.abs_decrease_tol) return res;
                break;
            }
            trial *= opts.step_shrink;
        }
        if (!accepted) {
            if (!memory.empty()) {
                // Quasi-Newton direction failed; retry from steepest descent.
                memory.clear();
                continue;
            }
            res.stalled = true;
            return res;
        }
    }
    return res;
}

} // namespace pidtune

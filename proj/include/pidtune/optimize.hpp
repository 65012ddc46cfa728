#ifndef PIDTUNE_OPTIMIZE_HPP
#define PIDTUNE_OPTIMIZE_HPP

#include <Eigen/Dense>
#include <functional>
#include <vector>

namespace pidtune {

// f(x, grad_out) -> value; grad_out may be null when only the value is needed.
using Objective = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>;

struct GdOptions {
    int max_iters = 200;
    double grad_tol = 1e-5;        // stop when ||g|| < grad_tol * (1 + |f|)
    double abs_decrease_tol = 0.0; // stop when an accepted step decreases f by less
    double init_step = 1.0;
    double step_shrink = 0.5;
    double step_grow = 2.0;
    int max_line_search = 40;
    double armijo = 1e-4;
    double max_step_norm = 0.0; // cap on ||x_next - x||, 0 = unlimited
    int lbfgs_memory = 0;       // quasi-Newton memory, 0 = steepest descent
};

struct GdResult {
    Eigen::VectorXd x;
    double value = 0.0;
    std::vector<double> trace; // accepted objective values, non-increasing
    bool stalled = false;      // line search found no decrease
    int iters = 0;
    double grad_norm = 0.0;
};

// Steepest descent with backtracking (Armijo) line search and adaptive step.
GdResult minimize_gd(const Objective& f, const Eigen::VectorXd& x0, const GdOptions& opts);

} // namespace pidtune

#endif

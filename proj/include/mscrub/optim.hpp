#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace mscrub {

/// Objective callback: returns f(x) and writes ∇f(x) into `grad`.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct LbfgsOptions {
    int history = 10;
    int max_iterations = 500;
    int max_evaluations = 5000;
    double gradient_tolerance = 1e-8; // on ‖∇f‖_∞
    double function_tolerance = 0.0;  // relative decrease; 0 disables
    double wolfe_c1 = 1e-4;
    double wolfe_c2 = 0.9;
};

struct MinimizeResult {
    Eigen::VectorXd x;
    double value = 0.0;
    double gradient_norm = 0.0;
    std::vector<double> trajectory; // f at the start and after every accepted step
    int iterations = 0;
    int evaluations = 0;
    int fallback_steps = 0;
    bool converged = false;
};

/// Limited-memory BFGS with a strong-Wolfe line search (bracketing + cubic
/// zoom). When the line search cannot satisfy the curvature condition the
/// step falls back to steepest descent with Armijo backtracking. Every
/// accepted step strictly decreases f.
[[nodiscard]] MinimizeResult minimize_lbfgs(const Objective& objective, Eigen::VectorXd x0,
                                            const LbfgsOptions& options = {});

} // namespace mscrub

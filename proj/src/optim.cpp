#include "mscrub/optim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace mscrub {

namespace {

using Eigen::VectorXd;

struct Probe {
    double step;
    double value;
    double slope; // directional derivative
    VectorXd x;
    VectorXd grad;
};

// Minimizer of the cubic interpolating (a, fa, ga) and (b, fb, gb), safeguarded
// into the interior of [lo, hi].
double cubic_step(double a, double fa, double ga, double b, double fb, double gb) {
    const double lo = std::min(a, b);
    const double hi = std::max(a, b);
    const double d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
    const double disc = d1 * d1 - ga * gb;
    double t = 0.5 * (lo + hi);
    if (disc >= 0.0) {
        const double d2 = std::copysign(std::sqrt(disc), b - a);
        const double denom = gb - ga + 2.0 * d2;
        if (denom != 0.0) {
            const double c = b - (b - a) * (gb + d2 - d1) / denom;
            if (std::isfinite(c)) {
                t = c;
            }
        }
    }
    const double margin = 0.1 * (hi - lo);
    return std::clamp(t, lo + margin, hi - margin);
}

class LineSearch {
public:
    LineSearch(const Objective& f, const VectorXd& x, double fx, const VectorXd& dir, double slope0,
               const LbfgsOptions& opt, int& evaluations)
        : f_(f), x_(x), fx_(fx), dir_(dir), slope0_(slope0), opt_(opt), evaluations_(evaluations) {}

    // Returns true and fills `out` when a strong-Wolfe point is found.
    bool run(double step0, Probe& out) {
        Probe prev{0.0, fx_, slope0_, x_, VectorXd()};
        double step = step0;
        for (int i = 0; i < 25; ++i) {
            Probe cur = evaluate(step);
            if (!std::isfinite(cur.value) || cur.value > fx_ + opt_.wolfe_c1 * step * slope0_ ||
                (i > 0 && cur.value >= prev.value)) {
                return zoom(prev, cur, out);
            }
            if (std::abs(cur.slope) <= -opt_.wolfe_c2 * slope0_) {
                out = std::move(cur);
                return true;
            }
            if (cur.slope >= 0.0) {
                return zoom(cur, prev, out);
            }
            prev = std::move(cur);
            step *= 2.0;
        }
        return false;
    }

private:
    Probe evaluate(double step) {
        Probe p;
        p.step = step;
        p.x = x_ + step * dir_;
        p.grad.resize(x_.size());
        p.value = f_(p.x, p.grad);
        ++evaluations_;
        p.slope = std::isfinite(p.value) ? p.grad.dot(dir_) : std::numeric_limits<double>::quiet_NaN();
        return p;
    }

    bool zoom(Probe lo, Probe hi, Probe& out) {
        for (int i = 0; i < 30; ++i) {
            double step;
            if (std::isfinite(hi.value) && std::isfinite(hi.slope)) {
                step = cubic_step(lo.step, lo.value, lo.slope, hi.step, hi.value, hi.slope);
            } else {
                step = 0.5 * (lo.step + hi.step);
            }
            if (std::abs(hi.step - lo.step) <= 1e-14 * std::max(1.0, std::abs(lo.step))) {
                break;
            }
            Probe cur = evaluate(step);
            if (!std::isfinite(cur.value) || cur.value > fx_ + opt_.wolfe_c1 * step * slope0_ ||
                cur.value >= lo.value) {
                hi = std::move(cur);
                continue;
            }
            if (std::abs(cur.slope) <= -opt_.wolfe_c2 * slope0_) {
                out = std::move(cur);
                return true;
            }
            if (cur.slope * (hi.step - lo.step) >= 0.0) {
                hi = std::move(lo);
            }
            lo = std::move(cur);
        }
        // Sufficient decrease without curvature: still usable as a step, the
        // caller decides whether to keep it.
        if (lo.step > 0.0 && lo.value < fx_) {
            out = std::move(lo);
            partial_ = true;
            return true;
        }
        return false;
    }

public:
    bool partial_ = false;

private:
    const Objective& f_;
    const VectorXd& x_;
    double fx_;
    const VectorXd& dir_;
    double slope0_;
    const LbfgsOptions& opt_;
    int& evaluations_;
};

// Armijo backtracking along −∇f.
bool backtrack(const Objective& f, const VectorXd& x, double fx, const VectorXd& grad, int& evaluations,
               const LbfgsOptions& opt, Probe& out) {
    const VectorXd dir = -grad;
    const double slope = -grad.squaredNorm();
    double step = 1.0 / std::max(1.0, grad.lpNorm<Eigen::Infinity>());
    for (int i = 0; i < 60 && evaluations < opt.max_evaluations; ++i) {
        Probe p;
        p.step = step;
        p.x = x + step * dir;
        p.grad.resize(x.size());
        p.value = f(p.x, p.grad);
        ++evaluations;
        if (std::isfinite(p.value) && p.value <= fx + opt.wolfe_c1 * step * slope && p.value < fx) {
            out = std::move(p);
            return true;
        }
        step *= 0.5;
    }
    return false;
}

} // namespace

MinimizeResult minimize_lbfgs(const Objective& objective, VectorXd x0, const LbfgsOptions& options) {
    MinimizeResult res;
    res.x = std::move(x0);
    VectorXd grad(res.x.size());
    res.value = objective(res.x, grad);
    res.evaluations = 1;
    res.trajectory.push_back(res.value);
    res.gradient_norm = grad.size() > 0 ? grad.lpNorm<Eigen::Infinity>() : 0.0;

    std::deque<VectorXd> s_hist;
    std::deque<VectorXd> y_hist;
    std::deque<double> rho_hist;

    while (true) {
        if (res.gradient_norm <= options.gradient_tolerance) {
            res.converged = true;
            break;
        }
        if (res.iterations >= options.max_iterations || res.evaluations >= options.max_evaluations) {
            break;
        }

        // Two-loop recursion for d = −H ∇f.
        VectorXd q = grad;
        std::vector<double> alpha(s_hist.size());
        for (std::size_t i = s_hist.size(); i-- > 0;) {
            alpha[i] = rho_hist[i] * s_hist[i].dot(q);
            q -= alpha[i] * y_hist[i];
        }
        if (!s_hist.empty()) {
            q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
        }
        for (std::size_t i = 0; i < s_hist.size(); ++i) {
            const double beta = rho_hist[i] * y_hist[i].dot(q);
            q += (alpha[i] - beta) * s_hist[i];
        }
        VectorXd dir = -q;
        double slope = grad.dot(dir);
        if (!(slope < 0.0)) {
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            dir = -grad;
            slope = -grad.squaredNorm();
        }

        const double step0 = s_hist.empty() ? std::min(1.0, 1.0 / std::max(1e-300, grad.lpNorm<Eigen::Infinity>())) : 1.0;
        Probe next;
        LineSearch search(objective, res.x, res.value, dir, slope, options, res.evaluations);
        bool ok = search.run(step0, next);
        if (!ok || search.partial_) {
            Probe fallback;
            if (backtrack(objective, res.x, res.value, grad, res.evaluations, options, fallback) &&
                (!ok || fallback.value < next.value)) {
                next = std::move(fallback);
                ok = true;
                ++res.fallback_steps;
                s_hist.clear();
                y_hist.clear();
                rho_hist.clear();
            }
        }
        if (!ok || !(next.value < res.value)) {
            break;
        }

        const VectorXd s = next.x - res.x;
        const VectorXd y = next.grad - grad;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm() && sy > 0.0) {
            s_hist.push_back(s);
            y_hist.push_back(y);
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > options.history) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }

        const double previous = res.value;
        res.x = std::move(next.x);
        grad = std::move(next.grad);
        res.value = next.value;
        res.gradient_norm = grad.lpNorm<Eigen::Infinity>();
        res.trajectory.push_back(res.value);
        ++res.iterations;

        if (options.function_tolerance > 0.0 &&
            previous - res.value <= options.function_tolerance * std::max(1.0, std::abs(res.value))) {
            res.converged = true;
            break;
        }
    }
    return res;
}

} // namespace mscrub

#include "steerlab/optim.hpp"

#include <cmath>
#include <deque>

#include "steerlab/errors.hpp"

namespace steerlab {

namespace {

double vdot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double max_abs(const std::vector<double>& a) {
    double m = 0.0;
    for (double v : a) m = std::max(m, std::fabs(v));
    return m;
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

LbfgsResult lbfgs_minimize(const ValueGrad& fg, std::vector<double> x0,
                           const LbfgsOptions& opts) {
    if (x0.empty()) throw argument_error("lbfgs_minimize: empty parameter vector");
    const size_t n = x0.size();

    LbfgsResult res;
    res.x = std::move(x0);

    std::vector<double> g(n, 0.0), g_new(n, 0.0), d(n, 0.0), x_new(n, 0.0);
    double f = fg(res.x, g);
    if (!finite(f)) throw eval_error("lbfgs_minimize: objective non-finite at the start point");

    struct Pair {
        std::vector<double> s, y;
        double rho;
    };
    std::deque<Pair> mem;

    auto direction = [&](const std::vector<double>& grad, std::vector<double>& out) {
        out = grad;
        std::vector<double> alpha(mem.size());
        for (size_t i = mem.size(); i-- > 0;) {
            alpha[i] = mem[i].rho * vdot(mem[i].s, out);
            for (size_t k = 0; k < n; ++k) out[k] -= alpha[i] * mem[i].y[k];
        }
        if (!mem.empty()) {
            const Pair& last = mem.back();
            const double yy = vdot(last.y, last.y);
            const double gamma = yy > 0.0 ? 1.0 / (last.rho * yy) : 1.0;
            for (double& v : out) v *= gamma;
        }
        for (size_t i = 0; i < mem.size(); ++i) {
            const double beta = mem[i].rho * vdot(mem[i].y, out);
            for (size_t k = 0; k < n; ++k) out[k] += mem[i].s[k] * (alpha[i] - beta);
        }
        for (double& v : out) v = -v;
    };

    // Backtracking Armijo search along d with quadratic interpolation;
    // returns the accepted step or 0 on failure.
    auto line_search = [&](const std::vector<double>& grad, double& f_out) -> double {
        const double slope = vdot(grad, d);
        if (!(slope < 0.0)) return 0.0;  // not a descent direction
        double t = 1.0;
        for (int b = 0; b < opts.max_backtracks; ++b) {
            for (size_t k = 0; k < n; ++k) x_new[k] = res.x[k] + t * d[k];
            const double ft = fg(x_new, g_new);
            if (finite(ft) && ft <= f + opts.armijo_c * t * slope) {
                f_out = ft;
                return t;
            }
            double t_next = t * opts.step_shrink;
            if (finite(ft)) {
                // minimizer of the quadratic through f, slope, and ft
                const double denom = 2.0 * (ft - f - slope * t);
                if (denom > 0.0) {
                    const double t_quad = -slope * t * t / denom;
                    if (t_quad > 0.01 * t && t_quad < 0.9 * t) t_next = t_quad;
                }
            }
            t = t_next;
        }
        return 0.0;
    };

    for (res.iters = 0; res.iters < opts.max_iters; ++res.iters) {
        if (max_abs(g) <= opts.grad_tol * std::max(1.0, std::fabs(f))) {
            res.converged = true;
            break;
        }
        direction(g, d);
        double f_new = 0.0;
        double t = line_search(g, f_new);
        if (t == 0.0) {
            // Quasi-Newton direction failed; retry once with steepest descent.
            mem.clear();
            for (size_t k = 0; k < n; ++k) d[k] = -g[k];
            t = line_search(g, f_new);
            if (t == 0.0) {
                // No progress possible at machine precision.
                res.converged = true;
                break;
            }
        }
        Pair pr;
        pr.s.resize(n);
        pr.y.resize(n);
        for (size_t k = 0; k < n; ++k) {
            pr.s[k] = x_new[k] - res.x[k];
            pr.y[k] = g_new[k] - g[k];
        }
        const double sy = vdot(pr.s, pr.y);
        const double ss = std::sqrt(vdot(pr.s, pr.s));
        const double yy = std::sqrt(vdot(pr.y, pr.y));
        if (sy > 1e-12 * ss * yy && finite(sy)) {
            pr.rho = 1.0 / sy;
            mem.push_back(std::move(pr));
            if (static_cast<int>(mem.size()) > opts.memory) mem.pop_front();
        }
        const double f_prev = f;
        double step_inf = 0.0, x_inf = 0.0;
        for (size_t k = 0; k < n; ++k) {
            step_inf = std::max(step_inf, std::fabs(x_new[k] - res.x[k]));
            x_inf = std::max(x_inf, std::fabs(res.x[k]));
        }
        res.x = x_new;
        g = g_new;
        f = f_new;
        if (std::fabs(f_prev - f) <= 1e-16 * std::max(1.0, std::fabs(f_prev)) &&
            step_inf <= 1e-14 * std::max(1.0, x_inf)) {
            res.converged = true;
            ++res.iters;
            break;
        }
    }
    res.f = f;
    return res;
}

}  // namespace steerlab

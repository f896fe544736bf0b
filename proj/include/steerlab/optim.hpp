#pragma once

#include <functional>
#include <vector>

namespace steerlab {

// Value-and-gradient callback: returns f(x) and writes df/dx into grad
// (which is pre-sized to x.size()). Non-finite values are treated as
// out-of-domain by the line search.
using ValueGrad = std::function<double(const std::vector<double>& x, std::vector<double>& grad)>;

struct LbfgsOptions {
    int max_iters = 300;
    int memory = 8;
    double grad_tol = 1e-9;       // relative to max(1, |f|)
    double armijo_c = 1e-4;
    double step_shrink = 0.5;
    int max_backtracks = 40;
};

struct LbfgsResult {
    std::vector<double> x;
    double f = 0.0;
    int iters = 0;
    // True when the run ended at a gradient-tolerance or numerical-stagnation
    // point; false only when the iteration budget ran out first.
    bool converged = false;
};

// Minimizes fg starting from x0 using limited-memory BFGS with Armijo
// backtracking. Deterministic: no randomness, no threading.
LbfgsResult lbfgs_minimize(const ValueGrad& fg, std::vector<double> x0,
                           const LbfgsOptions& opts = {});

}  // namespace steerlab

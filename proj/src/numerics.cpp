#include "steerlab/numerics.hpp"

#include <algorithm>
#include <cmath>

#include "steerlab/errors.hpp"
#include "steerlab/util.hpp"

namespace steerlab {

Tensor affine_apply(const Tensor& W, const Tensor& h, const Tensor& b) {
    if (h.rows != 1 || b.rows != 1)
        throw dim_error("affine_apply: h and b must be row vectors");
    if (W.cols != h.cols)
        throw dim_error("affine_apply: W is " + W.shape_str() + " but h has " +
                        std::to_string(h.cols) + " entries");
    if (W.rows != b.cols)
        throw dim_error("affine_apply: W is " + W.shape_str() + " but b has " +
                        std::to_string(b.cols) + " entries");
    Tensor out(1, W.rows);
    matmul_nt(h, W, out);  // out = h W^T, i.e. (W h)^T as a row vector
    add_inplace(out, b);
    return out;
}

double log_softmax_cross_entropy(const Tensor& logits, size_t target) {
    if (logits.rows != 1) throw dim_error("log_softmax_cross_entropy: logits must be a row");
    const size_t V = logits.cols;
    if (V < 2) throw dim_error("log_softmax_cross_entropy: need at least 2 classes");
    if (target >= V) throw index_error("log_softmax_cross_entropy: target out of range");
    double mx = logits[0];
    for (size_t j = 1; j < V; ++j) mx = std::max(mx, logits[j]);
    double denom = 0.0;
    for (size_t j = 0; j < V; ++j) denom += std::exp(logits[j] - mx);
    return std::log(denom) - (logits[target] - mx);
}

double relu(double x) { return x > 0.0 ? x : 0.0; }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double logsumexp(const std::vector<double>& xs) {
    if (xs.empty()) throw argument_error("logsumexp: empty input");
    double mx = xs[0];
    for (double x : xs) mx = std::max(mx, x);
    if (!std::isfinite(mx)) return mx;  // all -inf (or contains +inf/NaN) propagates
    double acc = 0.0;
    for (double x : xs) acc += std::exp(x - mx);
    return mx + std::log(acc);
}

GradCheckReport grad_check(const std::function<double()>& f_value,
                           const std::function<double(std::vector<Tensor>&)>& f_grad,
                           const std::vector<Tensor*>& params, double step, double tol,
                           size_t max_coords, uint64_t seed, double denom_floor) {
    if (step <= 0.0) throw argument_error("grad_check: step must be positive");
    std::vector<Tensor> grads;
    const double f0 = f_grad(grads);
    if (!std::isfinite(f0)) throw eval_error("grad_check: objective is non-finite");
    if (grads.size() != params.size())
        throw argument_error("grad_check: gradient count does not match parameter count");

    GradCheckReport rep;
    Rng rng(seed);
    for (size_t p = 0; p < params.size(); ++p) {
        Tensor& t = *params[p];
        if (!grads[p].same_shape(t))
            throw dim_error("grad_check: gradient shape mismatch for parameter " +
                            std::to_string(p));
        std::vector<size_t> coords(t.size());
        for (size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        if (coords.size() > max_coords) {
            rng.shuffle(coords);
            coords.resize(max_coords);
            std::sort(coords.begin(), coords.end());
        }
        for (size_t i : coords) {
            const double orig = t.data[i];
            t.data[i] = orig + step;
            const double fp = f_value();
            t.data[i] = orig - step;
            const double fm = f_value();
            t.data[i] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw eval_error("grad_check: objective is non-finite at a probe point");
            const double fd = (fp - fm) / (2.0 * step);
            const double an = grads[p].data[i];
            const double rel =
                std::fabs(an - fd) / std::max({std::fabs(an), std::fabs(fd), denom_floor});
            rep.max_rel_err = std::max(rep.max_rel_err, rel);
            ++rep.n_checked;
        }
    }
    rep.pass = rep.max_rel_err <= tol;
    return rep;
}

}  // namespace steerlab

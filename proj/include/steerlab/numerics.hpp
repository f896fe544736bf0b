#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "steerlab/tensor.hpp"

namespace steerlab {

// y = W h + b with W: [d_out, d_in], h: [1, d_in] (row vector), b: [1, d_out].
Tensor affine_apply(const Tensor& W, const Tensor& h, const Tensor& b);

// -log softmax(logits)[target], numerically stable via max subtraction.
// logits is a [1, V] row vector.
double log_softmax_cross_entropy(const Tensor& logits, size_t target);

double relu(double x);
double sigmoid(double x);

// log(sum_i exp(x_i)) computed stably.
double logsumexp(const std::vector<double>& xs);

struct GradCheckReport {
    double max_rel_err = 0.0;
    bool pass = false;
    size_t n_checked = 0;
};

// Compares analytic gradients against central finite differences.
//
//   f_value: evaluates the scalar objective at the current *params values.
//   f_grad:  evaluates the objective and fills `grads` (one Tensor per param,
//            same shapes, same order) with analytic gradients.
//   params:  the tensors being perturbed, in place.
//
// Relative error per coordinate is |a-d| / max(|a|, |d|, denom_floor); the
// floor turns the comparison absolute for gradients smaller than the floor,
// where central differences are dominated by floating-point cancellation.  If
// max_coords is smaller than a parameter's size, a deterministic subsample of
// coordinates (from `seed`) is checked instead of every coordinate.
// Throws eval_error if the objective is non-finite at any probe point.
GradCheckReport grad_check(const std::function<double()>& f_value,
                           const std::function<double(std::vector<Tensor>&)>& f_grad,
                           const std::vector<Tensor*>& params, double step, double tol,
                           size_t max_coords = static_cast<size_t>(-1), uint64_t seed = 0,
                           double denom_floor = 1e-6);

}  // namespace steerlab

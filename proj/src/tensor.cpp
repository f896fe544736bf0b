#include "steerlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "steerlab/errors.hpp"

namespace steerlab {

Tensor::Tensor(size_t r, size_t c, std::vector<double> v) : rows(r), cols(c), data(std::move(v)) {
    if (data.size() != r * c) throw dim_error("Tensor init: data size does not match shape");
}

std::string Tensor::shape_str() const {
    std::ostringstream ss;
    ss << rows << "x" << cols;
    return ss.str();
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* where) {
    if (!a.same_shape(b)) {
        throw dim_error(std::string(where) + ": shape mismatch " + a.shape_str() + " vs " +
                        b.shape_str());
    }
}

namespace {
void check_mm(size_t ak, size_t bk, const Tensor& out, size_t m, size_t n, const char* where) {
    if (ak != bk) {
        std::ostringstream ss;
        ss << where << ": inner dims differ (" << ak << " vs " << bk << ")";
        throw dim_error(ss.str());
    }
    if (out.rows != m || out.cols != n) {
        std::ostringstream ss;
        ss << where << ": output is " << out.shape_str() << ", expected " << m << "x" << n;
        throw dim_error(ss.str());
    }
}

// Shared kernel: out (m x n) {=, +=} a * b with a row-major m x k, b row-major
// k x n.  Loop order i-k-j keeps the inner loop streaming over contiguous rows
// of b and out, which is the main thing that matters for a naive kernel.
template <bool Accumulate>
void mm(const Tensor& a, const Tensor& b, Tensor& out) {
    const size_t m = a.rows, k = a.cols, n = b.cols;
    if (!Accumulate) std::fill(out.data.begin(), out.data.end(), 0.0);
    for (size_t i = 0; i < m; ++i) {
        const double* arow = &a.data[i * k];
        double* orow = &out.data[i * n];
        for (size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = &b.data[p * n];
            for (size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

// out {=, +=} a * b^T with a: m x k, b: n x k. Rows of both operands are
// contiguous, so this is a dot product per output element.
template <bool Accumulate>
void mm_nt(const Tensor& a, const Tensor& b, Tensor& out) {
    const size_t m = a.rows, k = a.cols, n = b.rows;
    for (size_t i = 0; i < m; ++i) {
        const double* arow = &a.data[i * k];
        double* orow = &out.data[i * n];
        for (size_t j = 0; j < n; ++j) {
            const double* brow = &b.data[j * k];
            double acc = 0.0;
            for (size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            if (Accumulate)
                orow[j] += acc;
            else
                orow[j] = acc;
        }
    }
}

// out {=, +=} a^T * b with a: k x m, b: k x n.
template <bool Accumulate>
void mm_tn(const Tensor& a, const Tensor& b, Tensor& out) {
    const size_t k = a.rows, m = a.cols, n = b.cols;
    if (!Accumulate) std::fill(out.data.begin(), out.data.end(), 0.0);
    for (size_t p = 0; p < k; ++p) {
        const double* arow = &a.data[p * m];
        const double* brow = &b.data[p * n];
        for (size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* orow = &out.data[i * n];
            for (size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}
}  // namespace

void matmul(const Tensor& a, const Tensor& b, Tensor& out) {
    check_mm(a.cols, b.rows, out, a.rows, b.cols, "matmul");
    mm<false>(a, b, out);
}

void matmul_acc(const Tensor& a, const Tensor& b, Tensor& out) {
    check_mm(a.cols, b.rows, out, a.rows, b.cols, "matmul_acc");
    mm<true>(a, b, out);
}

void matmul_nt(const Tensor& a, const Tensor& b, Tensor& out) {
    check_mm(a.cols, b.cols, out, a.rows, b.rows, "matmul_nt");
    mm_nt<false>(a, b, out);
}

void matmul_nt_acc(const Tensor& a, const Tensor& b, Tensor& out) {
    check_mm(a.cols, b.cols, out, a.rows, b.rows, "matmul_nt_acc");
    mm_nt<true>(a, b, out);
}

void matmul_tn(const Tensor& a, const Tensor& b, Tensor& out) {
    check_mm(a.rows, b.rows, out, a.cols, b.cols, "matmul_tn");
    mm_tn<false>(a, b, out);
}

void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& out) {
    check_mm(a.rows, b.rows, out, a.cols, b.cols, "matmul_tn_acc");
    mm_tn<true>(a, b, out);
}

void add_inplace(Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add_inplace");
    for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

void add_scaled_inplace(Tensor& a, const Tensor& b, double s) {
    check_same_shape(a, b, "add_scaled_inplace");
    for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += s * b.data[i];
}

void scale_inplace(Tensor& a, double s) {
    for (double& v : a.data) v *= s;
}

void fill(Tensor& a, double v) { std::fill(a.data.begin(), a.data.end(), v); }

double dot(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "dot");
    double acc = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) acc += a.data[i] * b.data[i];
    return acc;
}

double sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.data) acc += v;
    return acc;
}

double max_abs(const Tensor& a) {
    double m = 0.0;
    for (double v : a.data) m = std::max(m, std::fabs(v));
    return m;
}

}  // namespace steerlab

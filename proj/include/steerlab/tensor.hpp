#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace steerlab {

// Dense row-major matrix of doubles.  A vector is represented as a 1 x n
// tensor (row vector) unless stated otherwise.  All dimension checks throw
// dim_error so that shape bugs surface at the call site instead of as silent
// memory corruption.
struct Tensor {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(size_t r, size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    Tensor(size_t r, size_t c, double fill) : rows(r), cols(c), data(r * c, fill) {}
    Tensor(size_t r, size_t c, std::vector<double> v);

    size_t size() const { return rows * cols; }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    double& at(size_t i, size_t j) { return data[i * cols + j]; }
    double at(size_t i, size_t j) const { return data[i * cols + j]; }
    double& operator[](size_t i) { return data[i]; }
    double operator[](size_t i) const { return data[i]; }

    std::string shape_str() const;
};

// Throws dim_error with a readable message if shapes differ.
void check_same_shape(const Tensor& a, const Tensor& b, const char* where);

// out = a * b           (a: m x k, b: k x n, out: m x n)
void matmul(const Tensor& a, const Tensor& b, Tensor& out);
// out = a * b^T         (a: m x k, b: n x k, out: m x n)
void matmul_nt(const Tensor& a, const Tensor& b, Tensor& out);
// out = a^T * b         (a: k x m, b: k x n, out: m x n)
void matmul_tn(const Tensor& a, const Tensor& b, Tensor& out);

// Accumulating variants: out += ...
void matmul_acc(const Tensor& a, const Tensor& b, Tensor& out);
void matmul_nt_acc(const Tensor& a, const Tensor& b, Tensor& out);
void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& out);

// Elementwise helpers (all shape-checked).
void add_inplace(Tensor& a, const Tensor& b);               // a += b
void add_scaled_inplace(Tensor& a, const Tensor& b, double s);  // a += s * b
void scale_inplace(Tensor& a, double s);                    // a *= s
void fill(Tensor& a, double v);

double dot(const Tensor& a, const Tensor& b);
double sum(const Tensor& a);
double max_abs(const Tensor& a);

}  // namespace steerlab

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <vector>

namespace ink {

// Row-major so that one row is one token position.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using TokenId = std::int32_t;

namespace linalg {

// All kernels sum over the inner dimension in ascending index order, so each output
// row depends only on the matching input row and never on how many rows are packed
// together. Batched and per-sentence evaluation therefore agree bit-for-bit.

// out = a * b
void matmul(const Matrix& a, const Matrix& b, Matrix& out);
// out += a * b
void matmul_acc(const Matrix& a, const Matrix& b, Matrix& out);
// out += a^T * b
void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out);
// out = a * b^T
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out);
// out += a * b^T
void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& out);

double dot(const double* a, const double* b, std::size_t n);
double squared_l2(const double* a, const double* b, std::size_t n);

// log(sum(exp(x))) with max subtraction.
double log_sum_exp(std::span<const double> x);

}  // namespace linalg
}  // namespace ink

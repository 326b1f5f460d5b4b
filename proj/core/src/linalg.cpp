#include <algorithm>
#include <cmath>
#include <limits>

#include "ink/tensor.hpp"

namespace ink::linalg {

namespace {

// Output tile of R rows by C columns kept in registers while p runs over the
// inner dimension in ascending order. Every output element sees the same
// sequence of multiply-adds whatever tile it lands in.
template <int R, int C>
inline void tile(const double* const* a, const double* b, std::ptrdiff_t ldb, double* const* o, std::ptrdiff_t k) {
  double acc[R][C];
  for (int r = 0; r < R; ++r)
    for (int j = 0; j < C; ++j) acc[r][j] = o[r][j];
  for (std::ptrdiff_t p = 0; p < k; ++p) {
    const double* __restrict br = b + p * ldb;
    for (int r = 0; r < R; ++r) {
      const double av = a[r][p];
      for (int j = 0; j < C; ++j) acc[r][j] += av * br[j];
    }
  }
  for (int r = 0; r < R; ++r)
    for (int j = 0; j < C; ++j) o[r][j] = acc[r][j];
}

template <int R>
inline void row_block(const double* const* a, const Matrix& b, double* const* o, std::ptrdiff_t k) {
  const std::ptrdiff_t m = b.cols();
  const double* bd = b.data();
  std::ptrdiff_t j = 0;
  for (; j + 16 <= m; j += 16) {
    double* oj[R];
    for (int r = 0; r < R; ++r) oj[r] = o[r] + j;
    tile<R, 16>(a, bd + j, m, oj, k);
  }
  for (; j + 4 <= m; j += 4) {
    double* oj[R];
    for (int r = 0; r < R; ++r) oj[r] = o[r] + j;
    tile<R, 4>(a, bd + j, m, oj, k);
  }
  for (; j < m; ++j) {
    double* oj[R];
    for (int r = 0; r < R; ++r) oj[r] = o[r] + j;
    tile<R, 1>(a, bd + j, m, oj, k);
  }
}

}  // namespace

void matmul_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  const Eigen::Index n = a.rows(), k = a.cols();
  Eigen::Index i = 0;
  for (; i + 4 <= n; i += 4) {
    const double* ar[4] = {a.row(i).data(), a.row(i + 1).data(), a.row(i + 2).data(), a.row(i + 3).data()};
    double* o[4] = {out.row(i).data(), out.row(i + 1).data(), out.row(i + 2).data(), out.row(i + 3).data()};
    row_block<4>(ar, b, o, k);
  }
  for (; i < n; ++i) {
    const double* ar[1] = {a.row(i).data()};
    double* o[1] = {out.row(i).data()};
    row_block<1>(ar, b, o, k);
  }
}

void matmul(const Matrix& a, const Matrix& b, Matrix& out) {
  out.setZero(a.rows(), b.cols());
  matmul_acc(a, b, out);
}

void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  const Eigen::Index n = a.rows(), k = a.cols(), m = b.cols();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double* ar = a.row(i).data();
    const double* br = b.row(i).data();
    for (Eigen::Index p = 0; p < k; ++p) {
      const double av = ar[p];
      double* o = out.row(p).data();
      for (Eigen::Index j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out) {
  const Matrix bt = b.transpose();
  matmul(a, bt, out);
}

void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  const Matrix bt = b.transpose();
  matmul_acc(a, bt, out);
}

double dot(const double* a, const double* b, std::size_t n) {
  double lanes[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t t = 0;
  for (; t + 8 <= n; t += 8)
    for (std::size_t l = 0; l < 8; ++l) lanes[l] += a[t + l] * b[t + l];
  double s = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
  for (; t < n; ++t) s += a[t] * b[t];
  return s;
}

double squared_l2(const double* a, const double* b, std::size_t n) {
  double lanes[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t t = 0;
  for (; t + 8 <= n; t += 8)
    for (std::size_t l = 0; l < 8; ++l) {
      const double d = a[t + l] - b[t + l];
      lanes[l] += d * d;
    }
  double s = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
  for (; t < n; ++t) {
    const double d = a[t] - b[t];
    s += d * d;
  }
  return s;
}

double log_sum_exp(std::span<const double> x) {
  if (x.empty()) return -std::numeric_limits<double>::infinity();
  const double mx = *std::max_element(x.begin(), x.end());
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double v : x) s += std::exp(v - mx);
  return mx + std::log(s);
}

}  // namespace ink::linalg

#include <gtest/gtest.h>

#include <cmath>

#include "ink/autodiff.hpp"
#include "ink/error.hpp"
#include "test_util.hpp"

namespace ink {
namespace {

using testing::max_relative_error;
using testing::random_matrix;

TEST(Linalg, MatmulMatchesEigenProduct) {
  Rng rng(1);
  for (auto [n, k, m] : {std::tuple{7, 5, 19}, {1, 1, 1}, {9, 64, 33}, {16, 3, 4}}) {
    const Matrix a = random_matrix(rng, n, k);
    const Matrix b = random_matrix(rng, k, m);
    Matrix out;
    linalg::matmul(a, b, out);
    const Matrix ref = a * b;
    EXPECT_LT((out - ref).cwiseAbs().maxCoeff(), 1e-12);
    Matrix nt;
    linalg::matmul_nt(a, Matrix(b.transpose()), nt);
    EXPECT_LT((nt - ref).cwiseAbs().maxCoeff(), 1e-12);
    Matrix tn = Matrix::Zero(k, m);
    const Matrix c = random_matrix(rng, n, m);
    linalg::matmul_tn_acc(a, c, tn);
    EXPECT_LT((tn - a.transpose() * c).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Linalg, RowsAreIndependentOfBatchPacking) {
  Rng rng(2);
  const Matrix a = random_matrix(rng, 13, 37);
  const Matrix b = random_matrix(rng, 37, 70);
  Matrix all;
  linalg::matmul(a, b, all);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    Matrix one;
    linalg::matmul(a.middleRows(i, 1), b, one);
    for (Eigen::Index j = 0; j < b.cols(); ++j) EXPECT_EQ(one(0, j), all(i, j));
  }
}

TEST(Linalg, LogSumExpIsStable) {
  const std::vector<double> big{1000.0, 1000.0};
  EXPECT_NEAR(linalg::log_sum_exp(big), 1000.0 + std::log(2.0), 1e-12);
  EXPECT_TRUE(std::isinf(linalg::log_sum_exp(std::span<const double>())));
}

TEST(Autodiff, ConstantLossHasZeroGradient) {
  Rng rng(3);
  ad::Parameter w("w", random_matrix(rng, 3, 4));
  ad::Parameter* params[] = {&w};
  const auto grads = ad::gradient(params, [](ad::Tape& t) { return t.constant(Matrix::Constant(1, 1, 2.5)); });
  EXPECT_EQ(grads[0].cwiseAbs().maxCoeff(), 0.0);
}

TEST(Autodiff, HalfSquaredNormGradientIsInput) {
  Rng rng(4);
  ad::Parameter h("h", random_matrix(rng, 1, 6));
  ad::Parameter* params[] = {&h};
  const auto grads = ad::gradient(params, [&](ad::Tape& t) {
    const ad::Var x = t.leaf(h);
    return t.scale(t.matmul_nt(x, x), 0.5);
  });
  EXPECT_LT((grads[0] - h.value).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Autodiff, NonFiniteLossIsRejected) {
  ad::Parameter w("w", Matrix::Ones(1, 1));
  ad::Parameter* params[] = {&w};
  EXPECT_THROW(ad::gradient(params,
                            [&](ad::Tape& t) {
                              return t.scale(t.leaf(w), std::numeric_limits<double>::infinity());
                            }),
               NumericError);
}

// Checks d/dp sum(weights .* op(params)) against central differences for every
// parameter entry.
void check_op(const std::vector<ad::Parameter*>& params, const std::function<ad::Var(ad::Tape&)>& op,
              std::uint64_t seed) {
  Rng rng(seed);
  Matrix weights;
  {
    ad::Tape probe(false);
    const Matrix& v = probe.value(op(probe));
    weights = random_matrix(rng, static_cast<int>(v.rows()), static_cast<int>(v.cols()));
  }
  auto loss = [&](ad::Tape& t) {
    const ad::Var y = op(t);
    const double value = t.value(y).cwiseProduct(weights).sum();
    return t.external_loss(y, value, weights);
  };
  const auto analytic = ad::gradient(params, loss);
  auto evaluate = [&] {
    ad::Tape t(false);
    return t.value(loss(t))(0, 0);
  };
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix numeric(params[p]->value.rows(), params[p]->value.cols());
    for (Eigen::Index i = 0; i < numeric.size(); ++i) {
      double& x = params[p]->value.data()[i];
      const double saved = x;
      x = saved + 1e-5;
      const double up = evaluate();
      x = saved - 1e-5;
      const double down = evaluate();
      x = saved;
      numeric.data()[i] = (up - down) / 2e-5;
    }
    EXPECT_LT(max_relative_error(analytic[p], numeric), 1e-4) << params[p]->name;
  }
}

TEST(AutodiffGradcheck, MatmulAndBias) {
  Rng rng(5);
  ad::Parameter a("a", random_matrix(rng, 4, 3)), b("b", random_matrix(rng, 3, 5)), c("c", random_matrix(rng, 1, 5));
  check_op({&a, &b, &c}, [&](ad::Tape& t) { return t.add_row(t.matmul(t.leaf(a), t.leaf(b)), t.leaf(c)); }, 6);
}

TEST(AutodiffGradcheck, MatmulTransposedAddScale) {
  Rng rng(7);
  ad::Parameter a("a", random_matrix(rng, 4, 3)), b("b", random_matrix(rng, 5, 3)), c("c", random_matrix(rng, 4, 5));
  check_op({&a, &b, &c},
           [&](ad::Tape& t) { return t.scale(t.add(t.matmul_nt(t.leaf(a), t.leaf(b)), t.leaf(c)), -1.7); }, 8);
}

TEST(AutodiffGradcheck, ReluAwayFromKink) {
  Rng rng(9);
  Matrix v = random_matrix(rng, 5, 4);
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (std::abs(v.data()[i]) < 0.1) v.data()[i] = 0.5;
  ad::Parameter a("a", v);
  check_op({&a}, [&](ad::Tape& t) { return t.relu(t.leaf(a)); }, 10);
}

TEST(AutodiffGradcheck, LayerNorm) {
  Rng rng(11);
  ad::Parameter x("x", random_matrix(rng, 4, 6)), g("g", random_matrix(rng, 1, 6)), b("b", random_matrix(rng, 1, 6));
  check_op({&x, &g, &b}, [&](ad::Tape& t) { return t.layer_norm(t.leaf(x), t.leaf(g), t.leaf(b)); }, 12);
}

TEST(AutodiffGradcheck, GatherRowsWithRepeats) {
  Rng rng(13);
  ad::Parameter table("table", random_matrix(rng, 6, 4));
  const std::vector<TokenId> ids{3, 1, 3, 0};
  check_op({&table}, [&](ad::Tape& t) { return t.gather_rows(t.leaf(table), ids, 2.0); }, 14);
}

TEST(AutodiffGradcheck, AttentionCausalAndCross) {
  Rng rng(15);
  const std::vector<int> qlen{3, 2}, klen{4, 1};
  const auto qs = ad::Segments::from_lengths(qlen);
  const auto ks = ad::Segments::from_lengths(klen);
  ad::Parameter q("q", random_matrix(rng, 5, 4)), k("k", random_matrix(rng, 5, 4)), v("v", random_matrix(rng, 5, 4));
  check_op({&q, &k, &v},
           [&](ad::Tape& t) { return t.attention(t.leaf(q), t.leaf(k), t.leaf(v), 2, qs, ks, false); }, 16);
  check_op({&q, &k, &v},
           [&](ad::Tape& t) { return t.attention(t.leaf(q), t.leaf(k), t.leaf(v), 2, qs, qs, true); }, 17);
}

TEST(Autodiff, CausalAttentionIgnoresLaterRows) {
  Rng rng(18);
  const std::vector<int> len{5};
  const auto seg = ad::Segments::from_lengths(len);
  Matrix q = random_matrix(rng, 5, 4), k = random_matrix(rng, 5, 4), v = random_matrix(rng, 5, 4);
  ad::Tape t1(false);
  const Matrix base = t1.value(t1.attention(t1.constant(q), t1.constant(k), t1.constant(v), 2, seg, seg, true));
  k.row(3).setConstant(9.0);
  v.row(4).setConstant(-3.0);
  q.row(4).setConstant(1.0);
  ad::Tape t2(false);
  const Matrix changed = t2.value(t2.attention(t2.constant(q), t2.constant(k), t2.constant(v), 2, seg, seg, true));
  for (Eigen::Index r = 0; r < 3; ++r)
    for (Eigen::Index c = 0; c < 4; ++c) EXPECT_EQ(base(r, c), changed(r, c));
}

TEST(Autodiff, FrozenParameterReceivesNoGradient) {
  Rng rng(19);
  ad::Parameter a("a", random_matrix(rng, 2, 2)), b("b", random_matrix(rng, 2, 2), false);
  ad::Parameter* params[] = {&a, &b};
  const auto grads = ad::gradient(params, [&](ad::Tape& t) {
    const ad::Var y = t.matmul(t.leaf(a), t.leaf(b));
    return t.external_loss(y, t.value(y).sum(), Matrix::Ones(2, 2));
  });
  EXPECT_GT(grads[0].cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(grads[1].cwiseAbs().maxCoeff(), 0.0);
}

TEST(Autodiff, ShapeErrorsThrow) {
  ad::Tape t;
  const ad::Var a = t.constant(Matrix::Ones(2, 3));
  const ad::Var b = t.constant(Matrix::Ones(2, 3));
  EXPECT_THROW(t.matmul(a, b), InputError);
  EXPECT_THROW(t.add_row(a, b), InputError);
  EXPECT_THROW(t.external_loss(a, 0.0, Matrix::Ones(1, 1)), InputError);
}

}  // namespace
}  // namespace ink

#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "ink/error.hpp"
#include "ink/smoothing.hpp"
#include "test_util.hpp"

namespace ink {
namespace {

Neighbor make_neighbor(TokenId token, const Vector& key, const Vector& h, std::uint32_t index = 0) {
  return Neighbor{index, token, (key - h).norm(), key};
}

// Direct weighted vote without log-space tricks.
std::map<TokenId, double> direct_vote(const NeighborSet& ns, const Vector& h, const KernelSpec& spec) {
  std::map<TokenId, double> mass;
  double z = 0.0;
  for (const auto& n : ns.items) {
    const double w = spec.kind == KernelSpec::Kind::exp_cosine
                         ? std::exp(h.dot(n.key) / (h.norm() * n.key.norm()))
                         : std::exp(-(h - n.key).norm() / spec.temperature);
    mass[n.token] += w;
    z += w;
  }
  for (auto& [_, m] : mass) m /= z;
  return mass;
}

TEST(Kernel, KnownValues) {
  Vector a(2), b(2);
  a << 1.0, 0.0;
  b << 0.0, 1.0;
  const auto cos_kernel = KernelSpec::exp_cosine();
  EXPECT_NEAR(kernel_eval(cos_kernel, a, a), std::exp(1.0), 1e-12);
  EXPECT_NEAR(kernel_eval(cos_kernel, a, b), 1.0, 1e-12);
  EXPECT_NEAR(kernel_eval(cos_kernel, a, -a), 0.367879441, 1e-9);
  EXPECT_NEAR(kernel_eval(KernelSpec::neg_exp_distance(1.0), a, a), 1.0, 1e-15);
  EXPECT_NEAR(kernel_eval(KernelSpec::neg_exp_distance(2.0), a, b), std::exp(-std::sqrt(2.0) / 2.0), 1e-12);
}

TEST(Kernel, CosineIsScaleInvariant) {
  Rng rng(1);
  const auto spec = KernelSpec::exp_cosine();
  for (int t = 0; t < 50; ++t) {
    const Vector a = testing::random_vector(rng, 6), b = testing::random_vector(rng, 6);
    const double c = 0.01 + 100.0 * rng.uniform();
    EXPECT_NEAR(kernel_eval(spec, c * a, b), kernel_eval(spec, a, b), 1e-12);
    EXPECT_NEAR(kernel_eval(spec, a, c * b), kernel_eval(spec, a, b), 1e-12);
  }
}

TEST(Kernel, RejectsDegenerateInput) {
  EXPECT_THROW(cosine(Vector::Zero(3), Vector::Ones(3)), NumericError);
  EXPECT_THROW(kernel_eval(KernelSpec::neg_exp_distance(0.0), Vector::Ones(2), Vector::Ones(2)), InputError);
  EXPECT_THROW(kernel_eval(KernelSpec::exp_cosine(), Vector::Ones(2), Vector::Ones(3)), InputError);
}

TEST(KnnDistribution, ThreeNeighborExample) {
  const Vector h = Vector::Zero(1);
  NeighborSet ns;
  ns.items = {make_neighbor(10, Vector::Constant(1, 0.0), h, 0), make_neighbor(10, Vector::Constant(1, 1.0), h, 1),
              make_neighbor(11, Vector::Constant(1, -1.0), h, 2)};
  const VocabDistribution p = knn_distribution(ns, h, KernelSpec::neg_exp_distance(1.0));
  ASSERT_EQ(p.support, (std::vector<TokenId>{10, 11}));
  EXPECT_NEAR(p.prob(10), 0.788058, 1e-6);
  EXPECT_NEAR(p.prob(11), 0.211942, 1e-6);
  EXPECT_EQ(p.prob(12), 0.0);
}

TEST(KnnDistribution, MatchesDirectVoteAndSumsToOne) {
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    const int k = 1 + static_cast<int>(rng.below(16));
    const Vector h = testing::random_vector(rng, 5);
    NeighborSet ns;
    for (int j = 0; j < k; ++j)
      ns.items.push_back(make_neighbor(static_cast<TokenId>(4 + rng.below(5)), testing::random_vector(rng, 5), h,
                                       static_cast<std::uint32_t>(j)));
    for (const KernelSpec& spec : {KernelSpec::neg_exp_distance(0.5 + rng.uniform() * 10), KernelSpec::exp_cosine()}) {
      const VocabDistribution p = knn_distribution(ns, h, spec);
      EXPECT_NEAR(p.total(), 1.0, 1e-12);
      const auto oracle = direct_vote(ns, h, spec);
      ASSERT_EQ(p.support.size(), oracle.size());
      for (const auto& [tok, m] : oracle) EXPECT_NEAR(p.prob(tok), m, 1e-12);
      for (double x : p.probs) EXPECT_GT(x, 0.0);
    }
  }
}

TEST(KnnDistribution, IndependentOfNeighborOrder) {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const Vector h = testing::random_vector(rng, 4);
    NeighborSet ns;
    for (int j = 0; j < 8; ++j)
      ns.items.push_back(make_neighbor(static_cast<TokenId>(4 + rng.below(3)), testing::random_vector(rng, 4), h));
    const auto spec = KernelSpec::neg_exp_distance(3.0);
    const VocabDistribution a = knn_distribution(ns, h, spec);
    rng.shuffle(ns.items.begin(), ns.items.end());
    const VocabDistribution b = knn_distribution(ns, h, spec);
    EXPECT_EQ(a.support, b.support);
    EXPECT_EQ(a.probs, b.probs);
  }
}

TEST(KnnDistribution, FarNeighborsDoNotUnderflow) {
  const Vector h = Vector::Zero(1);
  NeighborSet ns;
  ns.items = {make_neighbor(5, Vector::Constant(1, 5000.0), h), make_neighbor(6, Vector::Constant(1, 5001.0), h)};
  const VocabDistribution p = knn_distribution(ns, h, KernelSpec::neg_exp_distance(1.0));
  EXPECT_NEAR(p.prob(5), 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
  EXPECT_THROW(knn_distribution(NeighborSet{}, h, KernelSpec::exp_cosine()), InputError);
}

VocabDistribution full(std::vector<double> probs) {
  VocabDistribution d;
  for (std::size_t i = 0; i < probs.size(); ++i) d.support.push_back(static_cast<TokenId>(i));
  d.probs = std::move(probs);
  return d;
}

TEST(Interpolate, KnownValues) {
  const VocabDistribution nmt = full({0.5, 0.25, 0.25});
  VocabDistribution knn;
  knn.support = {0};
  knn.probs = {1.0};
  // 0.75 * 0.5 + 0.25 * 1 and 0.75 * 0.25 + 0.
  const VocabDistribution mix = interpolate(nmt, knn, 0.25);
  EXPECT_NEAR(mix.prob(0), 0.625, 1e-15);
  EXPECT_NEAR(mix.prob(1), 0.1875, 1e-15);
  const VocabDistribution half = interpolate(full({0.25, 0.25, 0.5}), full({0.0, 0.0, 1.0}), 0.5);
  EXPECT_NEAR(half.prob(0), 0.125, 1e-15);
  EXPECT_NEAR(half.prob(2), 0.75, 1e-15);
  EXPECT_EQ(interpolate(nmt, knn, 0.0).probs, nmt.probs);
  EXPECT_EQ(interpolate(nmt, knn, 1.0).probs, (std::vector<double>{1.0, 0.0, 0.0}));
}

TEST(Interpolate, MonotoneInLambdaAndNormalized) {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> a(6), b(6);
    double za = 0, zb = 0;
    for (int i = 0; i < 6; ++i) {
      za += a[static_cast<std::size_t>(i)] = rng.uniform();
      zb += b[static_cast<std::size_t>(i)] = rng.uniform();
    }
    for (int i = 0; i < 6; ++i) {
      a[static_cast<std::size_t>(i)] /= za;
      b[static_cast<std::size_t>(i)] /= zb;
    }
    const VocabDistribution nmt = full(a), knn = full(b);
    double prev = interpolate(nmt, knn, 0.0).prob(2);
    for (double lambda = 0.1; lambda <= 1.0; lambda += 0.1) {
      const VocabDistribution m = interpolate(nmt, knn, lambda);
      EXPECT_NEAR(m.total(), 1.0, 1e-12);
      const double p = m.prob(2);
      if (b[2] >= a[2])
        EXPECT_GE(p, prev - 1e-15);
      else
        EXPECT_LE(p, prev + 1e-15);
      prev = p;
    }
  }
}

TEST(Interpolate, RejectsBadArguments) {
  const VocabDistribution nmt = full({0.5, 0.5});
  EXPECT_THROW(interpolate(nmt, nmt, 1.5), InputError);
  EXPECT_THROW(interpolate(nmt, nmt, -0.1), InputError);
  VocabDistribution outside;
  outside.support = {9};
  outside.probs = {1.0};
  EXPECT_THROW(interpolate(nmt, outside, 0.5), InputError);
}

}  // namespace
}  // namespace ink

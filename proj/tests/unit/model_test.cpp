#include <gtest/gtest.h>

#include <cmath>

#include "ink/checkpoint.hpp"
#include "ink/error.hpp"
#include "ink/model.hpp"
#include "ink/vocabulary.hpp"
#include "test_util.hpp"

namespace ink {
namespace {

using testing::random_matrix;
using testing::random_pairs;
using testing::tiny_config;

// Straight-line re-evaluation of the network from the raw parameter values.
class Oracle {
 public:
  explicit Oracle(const Model& m) : m_(m), c_(m.config()) {}

  Matrix encode(const std::vector<TokenId>& src) const {
    Matrix x = embed(src);
    for (int l = 0; l < c_.n_enc_layers; ++l) {
      const std::string n = "enc." + std::to_string(l);
      const Matrix h = ln(x, n + ".ln1");
      x += lin(attend(lin(h, n + ".self.q"), lin(h, n + ".self.k"), lin(h, n + ".self.v")), n + ".self.o");
      x += ffn(ln(x, n + ".ln2"), n + ".ffn");
      x = adapter(x, "adapter." + n);
    }
    return ln(x, "enc.ln");
  }

  // State at the last position of `prefix`, computed without any mask by
  // feeding only the prefix.
  Vector last_state(const Matrix& memory, const std::vector<TokenId>& prefix) const {
    Matrix x = embed(prefix);
    for (int l = 0; l < c_.n_dec_layers; ++l) {
      const std::string n = "dec." + std::to_string(l);
      const Matrix h = ln(x, n + ".ln1");
      x += lin(attend(lin(h, n + ".self.q"), lin(h, n + ".self.k"), lin(h, n + ".self.v")), n + ".self.o");
      const Matrix h2 = ln(x, n + ".ln2");
      x += lin(attend(lin(h2, n + ".cross.q"), lin(memory, n + ".cross.k"), lin(memory, n + ".cross.v")),
               n + ".cross.o");
      x += ffn(ln(x, n + ".ln3"), n + ".ffn");
      x = adapter(x, "adapter." + n);
    }
    const Matrix out = ln(x, "dec.ln");
    return out.row(out.rows() - 1).transpose();
  }

 private:
  const Matrix& P(const std::string& name) const { return m_.parameter(name).value; }

  Matrix embed(const std::vector<TokenId>& ids) const {
    const int d = c_.d_model;
    Matrix x(static_cast<Eigen::Index>(ids.size()), d);
    for (std::size_t t = 0; t < ids.size(); ++t)
      for (int i = 0; i < d; ++i) {
        const int even = i - i % 2;
        const double angle = static_cast<double>(t) * std::pow(10000.0, -static_cast<double>(even) / d);
        const double pe = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
        x(static_cast<Eigen::Index>(t), i) = P("embed")(ids[t], i) * std::sqrt(static_cast<double>(d)) + pe;
      }
    return x;
  }

  Matrix ln(const Matrix& x, const std::string& name) const {
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double mean = x.row(r).mean();
      const double var = (x.row(r).array() - mean).square().mean();
      out.row(r) = ((x.row(r).array() - mean) / std::sqrt(var + 1e-5)).matrix().cwiseProduct(P(name + ".g").row(0)) +
                   P(name + ".b").row(0);
    }
    return out;
  }

  Matrix lin(const Matrix& x, const std::string& name) const {
    Matrix y = x * P(name + ".w");
    y.rowwise() += P(name + ".b").row(0);
    return y;
  }

  Matrix ffn(const Matrix& x, const std::string& name) const {
    return lin(lin(x, name + ".1").cwiseMax(0.0), name + ".2");
  }

  Matrix attend(const Matrix& q, const Matrix& k, const Matrix& v) const {
    const int heads = c_.n_heads, dh = c_.d_model / heads;
    Matrix out = Matrix::Zero(q.rows(), q.cols());
    for (int h = 0; h < heads; ++h) {
      const Matrix qh = q.middleCols(h * dh, dh), kh = k.middleCols(h * dh, dh), vh = v.middleCols(h * dh, dh);
      Matrix s = qh * kh.transpose() / std::sqrt(static_cast<double>(dh));
      for (Eigen::Index r = 0; r < s.rows(); ++r) {
        s.row(r).array() = (s.row(r).array() - s.row(r).maxCoeff()).exp();
        s.row(r) /= s.row(r).sum();
      }
      out.middleCols(h * dh, dh) = s * vh;
    }
    return out;
  }

  Matrix adapter(const Matrix& x, const std::string& prefix) const {
    if (!m_.has_adapters()) return x;
    Matrix inner = ln(x, prefix + ".ln") * P(prefix + ".w1");
    inner.rowwise() += P(prefix + ".b1").row(0);
    if (m_.adapter_activation() == AdapterActivation::relu) inner = inner.cwiseMax(0.0);
    Matrix out = inner * P(prefix + ".w2");
    out.rowwise() += P(prefix + ".b2").row(0);
    return out + x;
  }

  const Model& m_;
  ModelConfig c_;
};

void perturb_adapters(Model& m, Rng& rng) {
  for (ad::Parameter* p : m.adapter_parameters()) p->value += random_matrix(rng, p->value.rows(), p->value.cols(), 0.3);
}

TEST(Model, TeacherForcedShapeCountsEndOfSentence) {
  Model m(tiny_config(), 1);
  const SentencePair pair{{5, 6, 7}, {8, 9}};
  const auto reps = forward_teacher_forced(m, pair, 4);
  ASSERT_EQ(reps.size(), 3u);
  for (std::size_t t = 0; t < reps.size(); ++t) {
    EXPECT_EQ(reps[t].values.size(), 8);
    EXPECT_EQ(reps[t].origin, (Origin{4, static_cast<std::uint32_t>(t)}));
  }
}

TEST(Model, RepeatedCallsAreBitIdentical) {
  Model m(tiny_config(), 2);
  const SentencePair pair{{5, 6, 7, 8}, {9, 10, 11}};
  const auto a = forward_teacher_forced(m, pair);
  const auto b = forward_teacher_forced(m, pair);
  for (std::size_t t = 0; t < a.size(); ++t) EXPECT_TRUE((a[t].values.array() == b[t].values.array()).all());
}

TEST(Model, MatchesStraightLineOracle) {
  for (std::uint64_t seed : {3u, 4u, 5u}) {
    Model m(tiny_config(20, 8), seed);
    Rng rng(seed);
    m.attach_adapters(seed + 100);
    perturb_adapters(m, rng);
    const SentencePair pair{{5, 9, 12, 7}, {13, 4, 18}};
    const auto reps = forward_teacher_forced(m, pair);
    Oracle oracle(m);
    std::vector<TokenId> src = pair.source;
    src.push_back(Vocabulary::kEos);
    const Matrix memory = oracle.encode(src);
    std::vector<TokenId> prefix{Vocabulary::kBos};
    for (std::size_t t = 0; t < reps.size(); ++t) {
      const Vector expect = oracle.last_state(memory, prefix);
      EXPECT_LT((reps[t].values - expect).cwiseAbs().maxCoeff(), 1e-12) << "seed " << seed << " step " << t;
      if (t < pair.target.size()) prefix.push_back(pair.target[t]);
    }
  }
}

TEST(Model, BatchedStatesEqualSingleSentenceStates) {
  Model m(tiny_config(), 6);
  Rng rng(6);
  const auto pairs = random_pairs(rng, 7, 20, 1, 9);
  const Matrix batched = teacher_forced_states(m, pairs, 64);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto reps = forward_teacher_forced(m, pairs[i]);
    for (const auto& r : reps) {
      for (Eigen::Index c = 0; c < batched.cols(); ++c) EXPECT_EQ(batched(row, c), r.values(c));
      ++row;
    }
  }
}

TEST(Model, CausalMaskingFutureTargetsDoNotMatter) {
  Model m(tiny_config(), 7);
  const SentencePair a{{5, 6, 7}, {8, 9, 10, 11, 12}};
  SentencePair b = a;
  b.target[3] = 17;
  b.target[4] = 4;
  const auto ra = forward_teacher_forced(m, a);
  const auto rb = forward_teacher_forced(m, b);
  // Position t reads target tokens < t, so positions 0..3 see identical prefixes.
  for (std::size_t t = 0; t <= 3; ++t) EXPECT_TRUE((ra[t].values.array() == rb[t].values.array()).all()) << t;
  EXPECT_FALSE((ra[4].values.array() == rb[4].values.array()).all());
}

TEST(Model, IdentityAdaptersReproduceBaseModel) {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    Model base(tiny_config(), 100 + static_cast<std::uint64_t>(trial));
    Model with = base;
    with.attach_adapters(7 + static_cast<std::uint64_t>(trial));
    const auto pairs = random_pairs(rng, 3, 20, 1, 8);
    const Matrix a = teacher_forced_states(base, pairs);
    const Matrix b = teacher_forced_states(with, pairs);
    EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Model, TiedEmbeddingFeedsInputAndOutput) {
  Model m(tiny_config(), 9);
  const SentencePair pair{{5, 6}, {7, 8}};
  const auto before = forward_teacher_forced(m, pair);
  const VocabDistribution p0 = output_distribution(before[0].values, m.embedding());
  m.parameter("embed").value(7, 0) += 0.5;
  const auto after = forward_teacher_forced(m, pair);
  // Row 7 is the decoder input at step 1 and an output logit everywhere.
  EXPECT_TRUE((before[0].values.array() == after[0].values.array()).all());
  EXPECT_FALSE((before[2].values.array() == after[2].values.array()).all());
  const VocabDistribution p1 = output_distribution(after[0].values, m.embedding());
  EXPECT_NE(p0.probs[7], p1.probs[7]);
}

TEST(OutputDistribution, KnownSoftmaxValues) {
  Matrix emb(3, 1);
  emb << 1.0, 0.0, 0.0;
  Vector h(1);
  h << 1.0;
  const VocabDistribution p = output_distribution(h, emb);
  EXPECT_NEAR(p.probs[0], 0.57611688, 1e-8);
  EXPECT_NEAR(p.probs[1], 0.21194156, 1e-8);
  EXPECT_NEAR(p.probs[2], 0.21194156, 1e-8);
}

TEST(OutputDistribution, SymmetricAndZeroCases) {
  Matrix same(2, 3);
  same << 0.3, -1.0, 2.0, 0.3, -1.0, 2.0;
  Vector h(3);
  h << 1.0, 2.0, -0.5;
  const VocabDistribution p = output_distribution(h, same);
  EXPECT_DOUBLE_EQ(p.probs[0], 0.5);
  EXPECT_DOUBLE_EQ(p.probs[1], 0.5);
  Rng rng(10);
  const Matrix emb = random_matrix(rng, 6, 3);
  const VocabDistribution u = output_distribution(Vector::Zero(3), emb);
  for (double x : u.probs) EXPECT_DOUBLE_EQ(x, 1.0 / 6.0);
}

TEST(OutputDistribution, FullSupportNormalizedPositive) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix emb = random_matrix(rng, 20, 8, 3.0);
    const Vector h = testing::random_vector(rng, 8, 3.0);
    const VocabDistribution p = output_distribution(h, emb);
    ASSERT_EQ(p.support.size(), 20u);
    EXPECT_NEAR(p.total(), 1.0, 1e-9);
    for (double x : p.probs) EXPECT_GT(x, 0.0);
  }
}

TEST(Adapter, ZeroW2IsExactIdentity) {
  Rng rng(12);
  AdapterLayer a = AdapterLayer::identity(6, 3, 5);
  a.b1 = random_matrix(rng, 1, 3);
  a.norm_gain = random_matrix(rng, 1, 6);
  const Vector z = testing::random_vector(rng, 6);
  const Vector out = adapter_forward(a, z);
  EXPECT_TRUE((out.array() == z.array()).all());
}

TEST(Adapter, ZeroInputGivesProjectedShift) {
  Rng rng(13);
  AdapterLayer a = AdapterLayer::identity(4, 2, 6);
  a.w2 = random_matrix(rng, 2, 4);
  a.norm_bias = random_matrix(rng, 1, 4);
  const Vector z = Vector::Zero(4);
  const Matrix shift = a.norm_bias;
  a.activation = AdapterActivation::identity;
  Vector expect = (shift * a.w1 * a.w2).row(0).transpose();
  EXPECT_LT((adapter_forward(a, z) - expect).cwiseAbs().maxCoeff(), 1e-14);
  a.activation = AdapterActivation::relu;
  expect = ((shift * a.w1).cwiseMax(0.0) * a.w2).row(0).transpose();
  EXPECT_LT((adapter_forward(a, z) - expect).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Adapter, MatchesMatrixArithmetic) {
  Rng rng(14);
  AdapterLayer a;
  a.w1 = random_matrix(rng, 4, 2);
  a.b1 = random_matrix(rng, 1, 2);
  a.w2 = random_matrix(rng, 2, 4);
  a.b2 = random_matrix(rng, 1, 4);
  a.norm_gain = random_matrix(rng, 1, 4);
  a.norm_bias = random_matrix(rng, 1, 4);
  const Vector z = testing::random_vector(rng, 4);
  const double mean = z.mean();
  const double var = (z.array() - mean).square().mean();
  Vector f(4);
  for (int i = 0; i < 4; ++i) f(i) = (z(i) - mean) / std::sqrt(var + 1e-5) * a.norm_gain(0, i) + a.norm_bias(0, i);
  Vector inner(2);
  for (int j = 0; j < 2; ++j) {
    double s = a.b1(0, j);
    for (int i = 0; i < 4; ++i) s += f(i) * a.w1(i, j);
    inner(j) = std::max(s, 0.0);
  }
  Vector expect(4);
  for (int i = 0; i < 4; ++i) {
    double s = a.b2(0, i) + z(i);
    for (int j = 0; j < 2; ++j) s += inner(j) * a.w2(j, i);
    expect(i) = s;
  }
  EXPECT_LT((adapter_forward(a, z) - expect).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Model, RejectsBadInput) {
  Model m(tiny_config(), 15);
  EXPECT_THROW(forward_teacher_forced(m, SentencePair{{5}, {99}}), InputError);
  EXPECT_THROW(forward_teacher_forced(m, SentencePair{{}, {5}}), InputError);
  EXPECT_THROW(forward_teacher_forced(m, SentencePair{std::vector<TokenId>(16, 5), {5}}), LengthError);
  ModelConfig bad = tiny_config();
  bad.n_heads = 3;
  EXPECT_THROW(Model(bad, 1), InputError);
}

TEST(Model, FreezeBaseLeavesOnlyAdaptersTrainable) {
  Model m(tiny_config(), 16);
  m.attach_adapters(1);
  m.freeze_base(true);
  for (const ad::Parameter* p : m.trainable_parameters()) EXPECT_TRUE(p->name.starts_with("adapter.")) << p->name;
  EXPECT_EQ(m.trainable_parameters().size(), m.adapter_parameters().size());
  EXPECT_THROW(m.attach_adapters(2), StateError);
}

TEST(Checkpoint, RoundTripPreservesFloatValues) {
  testing::TempDir dir;
  Model m(tiny_config(), 17);
  m.attach_adapters(3);
  Rng rng(17);
  perturb_adapters(m, rng);
  save_checkpoint(m, 42, dir / "model.bin");
  const Model loaded = load_model(dir / "model.bin", 42);
  ASSERT_TRUE(loaded.has_adapters());
  EXPECT_EQ(loaded.config(), m.config());
  for (const ad::Parameter* p : m.parameters()) {
    const Matrix expect = p->value.cast<float>().cast<double>();
    EXPECT_TRUE((loaded.parameter(p->name).value.array() == expect.array()).all()) << p->name;
  }
  EXPECT_THROW(load_model(dir / "model.bin", 43), FormatError);
}

TEST(Checkpoint, AdapterFileInstallsIntoBase) {
  testing::TempDir dir;
  Model m(tiny_config(), 18);
  m.attach_adapters(3);
  Rng rng(18);
  perturb_adapters(m, rng);
  save_checkpoint(m, 7, dir / "adapters.bin", CheckpointContent::adapters_only);
  const CheckpointFile file = read_checkpoint(dir / "adapters.bin");
  for (const auto& [name, value] : file.tensors) EXPECT_TRUE(name.starts_with("adapter.")) << name;
  Model base(tiny_config(), 18);
  load_adapters(base, dir / "adapters.bin", 7);
  for (const ad::Parameter* p : m.adapter_parameters())
    EXPECT_TRUE((base.parameter(p->name).value.array() == p->value.cast<float>().cast<double>().array()).all());
}

TEST(Checkpoint, TruncatedFileIsFormatError) {
  testing::TempDir dir;
  Model m(tiny_config(), 19);
  save_checkpoint(m, 1, dir / "m.bin");
  const auto size = std::filesystem::file_size(dir / "m.bin");
  std::filesystem::resize_file(dir / "m.bin", size - 5);
  EXPECT_THROW(load_model(dir / "m.bin", 1), FormatError);
}

}  // namespace
}  // namespace ink

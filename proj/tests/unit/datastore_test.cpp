#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "ink/datastore.hpp"
#include "ink/error.hpp"
#include "ink/vocabulary.hpp"
#include "test_util.hpp"

namespace ink {
namespace {

Datastore random_store(Rng& rng, std::size_t n, int dim, std::uint64_t version = 1) {
  FloatMatrix keys(static_cast<Eigen::Index>(n), dim);
  std::vector<TokenId> values(n);
  std::vector<Origin> origins(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < dim; ++c) keys(static_cast<Eigen::Index>(i), c) = static_cast<float>(rng.normal());
    values[i] = static_cast<TokenId>(4 + rng.below(50));
    origins[i] = Origin{static_cast<std::uint32_t>(i / 5), static_cast<std::uint32_t>(i % 5)};
  }
  return Datastore(version, std::move(keys), std::move(values), std::move(origins));
}

// Reference: sort every entry by (distance, index).
std::vector<std::uint32_t> brute_force(const Datastore& ds, const Vector& q, int k,
                                       std::optional<Origin> exclude = std::nullopt) {
  std::vector<std::pair<double, std::uint32_t>> all;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (exclude && ds.origins()[i] == *exclude) continue;
    all.emplace_back((ds.key(i) - q).norm(), static_cast<std::uint32_t>(i));
  }
  std::sort(all.begin(), all.end());
  std::vector<std::uint32_t> ids;
  for (int j = 0; j < k && j < static_cast<int>(all.size()); ++j) ids.push_back(all[static_cast<std::size_t>(j)].second);
  return ids;
}

std::vector<std::uint32_t> ids_of(const NeighborSet& ns) {
  std::vector<std::uint32_t> ids;
  for (const auto& n : ns.items) ids.push_back(n.index);
  return ids;
}

TEST(Datastore, OneEntryPerTargetPositionIncludingEos) {
  Model m(testing::tiny_config(), 1);
  const std::vector<SentencePair> corpus{{{5, 6}, {7, 8}}, {{9}, {10, 11, 12}}};
  const Datastore ds = build_datastore(m, corpus);
  ASSERT_EQ(ds.size(), 7u);
  EXPECT_EQ(ds.version(), 1u);
  EXPECT_EQ(ds.values(), (std::vector<TokenId>{7, 8, Vocabulary::kEos, 10, 11, 12, Vocabulary::kEos}));
  EXPECT_EQ(ds.origins()[4], (Origin{1, 1}));
  EXPECT_EQ(ds.origins()[2], (Origin{0, 2}));
}

TEST(Datastore, KeysAreTeacherForcedStates) {
  Model m(testing::tiny_config(), 2);
  Rng rng(2);
  const auto corpus = testing::random_pairs(rng, 40, 20, 1, 7);
  const Datastore ds = build_datastore(m, corpus);
  std::size_t row = 0;
  for (std::size_t s = 0; s < corpus.size(); ++s) {
    for (const Representation& r : forward_teacher_forced(m, corpus[s], static_cast<std::uint32_t>(s))) {
      ASSERT_LT(row, ds.size());
      EXPECT_EQ(ds.origins()[row], r.origin);
      for (int c = 0; c < ds.dim(); ++c)
        EXPECT_EQ(ds.keys()(static_cast<Eigen::Index>(row), c), static_cast<float>(r.values(c)));
      ++row;
    }
  }
  EXPECT_EQ(row, ds.size());
}

TEST(Datastore, OneDimensionalExample) {
  FloatMatrix keys(3, 1);
  keys << 0.0f, 1.0f, 2.0f;
  const Datastore ds(1, keys, {4, 5, 6}, {{0, 0}, {0, 1}, {0, 2}});
  const NeighborSet ns = ds.query(Vector::Constant(1, 0.9), 2);
  ASSERT_EQ(ns.size(), 2u);
  EXPECT_EQ(ns.items[0].index, 1u);
  EXPECT_EQ(ns.items[0].token, 5);
  EXPECT_NEAR(ns.items[0].distance, 0.1, 1e-12);
  EXPECT_EQ(ns.items[1].index, 0u);
  EXPECT_NEAR(ns.items[1].distance, 0.9, 1e-12);
}

TEST(Datastore, TiesKeepLowerIndex) {
  FloatMatrix keys(4, 1);
  keys << 1.0f, -1.0f, 1.0f, -1.0f;
  const Datastore ds(1, keys, {4, 5, 6, 7}, {{0, 0}, {0, 1}, {0, 2}, {0, 3}});
  EXPECT_EQ(ids_of(ds.query(Vector::Zero(1), 4)), (std::vector<std::uint32_t>{0, 1, 2, 3}));
}

TEST(Datastore, ExactSearchMatchesBruteForce) {
  Rng rng(3);
  const Datastore ds = random_store(rng, 10000, 16);
  Matrix queries = testing::random_matrix(rng, 50, 16);
  for (int k : {1, 8, 64}) {
    const auto batch = ds.query_batch(queries, k);
    for (Eigen::Index q = 0; q < queries.rows(); ++q) {
      const Vector h = queries.row(q).transpose();
      const NeighborSet single = ds.query(h, k);
      EXPECT_EQ(ids_of(single), brute_force(ds, h, k)) << "k=" << k;
      ASSERT_EQ(batch[static_cast<std::size_t>(q)].size(), single.size());
      for (std::size_t j = 0; j < single.size(); ++j) {
        EXPECT_EQ(batch[static_cast<std::size_t>(q)].items[j].index, single.items[j].index);
        EXPECT_EQ(batch[static_cast<std::size_t>(q)].items[j].distance, single.items[j].distance);
      }
      for (std::size_t j = 1; j < single.size(); ++j)
        EXPECT_LE(single.items[j - 1].distance, single.items[j].distance);
    }
  }
}

TEST(Datastore, QueryOnStoredKeyReturnsItFirst) {
  Rng rng(4);
  const Datastore ds = random_store(rng, 500, 8);
  for (std::size_t i : {0u, 17u, 499u}) {
    const NeighborSet ns = ds.query(ds.key(i), 3);
    EXPECT_EQ(ns.items[0].index, i);
    EXPECT_EQ(ns.items[0].distance, 0.0);
  }
}

TEST(Datastore, ExclusionSkipsMatchingOrigin) {
  Rng rng(5);
  const Datastore ds = random_store(rng, 400, 8);
  const std::size_t target = 123;
  const Origin o = ds.origins()[target];
  const NeighborSet ns = ds.query(ds.key(target), 10, o);
  for (const auto& n : ns.items) EXPECT_NE(ds.origins()[n.index], o);
  EXPECT_EQ(ids_of(ns), brute_force(ds, ds.key(target), 10, o));
  Matrix q(1, 8);
  q.row(0) = ds.key(target).transpose();
  const std::vector<std::optional<Origin>> ex{o};
  EXPECT_EQ(ids_of(ds.query_batch(q, 10, ex)[0]), ids_of(ns));
}

TEST(Datastore, KLargerThanStoreReturnsAll) {
  Rng rng(6);
  const Datastore ds = random_store(rng, 5, 4);
  EXPECT_EQ(ds.query(Vector::Zero(4), 64).size(), 5u);
}

TEST(Datastore, RejectsBadQueries) {
  Rng rng(7);
  const Datastore ds = random_store(rng, 20, 4);
  EXPECT_THROW(ds.query(Vector::Zero(3), 2), InputError);
  EXPECT_THROW(ds.query(Vector::Zero(4), 0), InputError);
}

TEST(Datastore, SaveLoadRoundTripIsExact) {
  testing::TempDir dir;
  Rng rng(8);
  const Datastore ds = random_store(rng, 10000, 16, 42);
  save_datastore(ds, dir / "ds.bin");
  const Datastore back = load_datastore(dir / "ds.bin");
  EXPECT_EQ(back.version(), 42u);
  EXPECT_EQ(back.values(), ds.values());
  EXPECT_EQ(back.origins(), ds.origins());
  EXPECT_TRUE(back.keys() == ds.keys());
  const Matrix queries = testing::random_matrix(rng, 20, 16);
  const auto a = ds.query_batch(queries, 8), b = back.query_batch(queries, 8);
  for (std::size_t q = 0; q < a.size(); ++q) EXPECT_EQ(ids_of(a[q]), ids_of(b[q]));
}

TEST(Datastore, DetectsCorruptFiles) {
  testing::TempDir dir;
  Rng rng(9);
  save_datastore(random_store(rng, 30, 4), dir / "ds.bin");
  const auto size = std::filesystem::file_size(dir / "ds.bin");
  std::filesystem::copy_file(dir / "ds.bin", dir / "short.bin");
  std::filesystem::resize_file(dir / "short.bin", size - 3);
  EXPECT_THROW(load_datastore(dir / "short.bin"), FormatError);
  {
    std::ofstream out(dir / "junk.bin", std::ios::binary);
    out << "NOPE and some more bytes to read";
  }
  EXPECT_THROW(load_datastore(dir / "junk.bin"), FormatError);
  EXPECT_THROW(load_datastore(dir / "missing.bin"), Error);
}

TEST(Datastore, RefreshWithUnchangedModelKeepsKeys) {
  Model m(testing::tiny_config(), 10);
  m.attach_adapters(3);
  Rng rng(10);
  const auto corpus = testing::random_pairs(rng, 30, 20, 1, 6);
  const Datastore v1 = build_datastore(m, corpus);
  const Datastore v2 = refresh_datastore(v1, m, corpus);
  EXPECT_EQ(v2.version(), v1.version() + 1);
  EXPECT_TRUE(v2.keys() == v1.keys());
  EXPECT_EQ(v2.values(), v1.values());
  EXPECT_EQ(v2.origins(), v1.origins());
}

TEST(Datastore, RefreshFollowsAdapterUpdate) {
  Model m(testing::tiny_config(), 11);
  m.attach_adapters(4);
  Rng rng(11);
  const auto corpus = testing::random_pairs(rng, 30, 20, 1, 6);
  const Datastore v1 = build_datastore(m, corpus);
  ad::Parameter& w2 = *m.adapter_parameters().at(4);
  ASSERT_TRUE(w2.name.ends_with(".w2"));
  w2.value += testing::random_matrix(rng, static_cast<int>(w2.value.rows()), static_cast<int>(w2.value.cols()), 0.1);
  const Datastore v2 = refresh_datastore(v1, m, corpus);
  EXPECT_FALSE(v2.keys() == v1.keys());
  EXPECT_EQ(v2.values(), v1.values());
  const Datastore fresh = build_datastore(m, corpus);
  EXPECT_TRUE(v2.keys() == fresh.keys());
}

TEST(Datastore, RefreshRejectsDifferentCorpus) {
  Model m(testing::tiny_config(), 12);
  Rng rng(12);
  const auto corpus = testing::random_pairs(rng, 10, 20, 1, 6);
  const Datastore v1 = build_datastore(m, corpus);
  auto other = corpus;
  other.pop_back();
  EXPECT_THROW(refresh_datastore(v1, m, other), StateError);
}

TEST(Datastore, IvfWithAllListsProbedIsExact) {
  Rng rng(13);
  Datastore ds = random_store(rng, 4000, 16);
  ds.build_ivf(IvfOptions{32, 4, 10, 7});
  const Matrix queries = testing::random_matrix(rng, 40, 16);
  double hits = 0;
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    const Vector h = queries.row(q).transpose();
    const auto exact = ids_of(ds.query(h, 8));
    EXPECT_EQ(ids_of(ds.query_approximate(h, 8, 32)), exact);
    const auto approx = ids_of(ds.query_approximate(h, 8, 4));
    const std::set<std::uint32_t> truth(exact.begin(), exact.end());
    for (auto id : approx) hits += static_cast<double>(truth.count(id));
  }
  const double recall = hits / (40.0 * 8.0);
  std::printf("IVF recall@8 with 4 of 32 lists: %.3f\n", recall);
  EXPECT_GT(recall, 0.3);
}

TEST(ActiveDatastore, PublishesOnlyNewerVersions) {
  Rng rng(14);
  auto v1 = std::make_shared<const Datastore>(random_store(rng, 10, 4, 1));
  auto v2 = std::make_shared<const Datastore>(random_store(rng, 10, 4, 2));
  ActiveDatastore active(v1);
  EXPECT_EQ(active.acquire()->version(), 1u);
  auto reader = active.acquire();
  active.publish(v2);
  EXPECT_EQ(active.acquire()->version(), 2u);
  EXPECT_EQ(reader->version(), 1u);
  EXPECT_THROW(active.publish(v1), StateError);
  EXPECT_EQ(active.acquire()->version(), 2u);
}

}  // namespace
}  // namespace ink

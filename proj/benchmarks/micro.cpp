#include <benchmark/benchmark.h>

#include "ink/datastore.hpp"
#include "ink/decode.hpp"
#include "ink/losses.hpp"
#include "ink/random.hpp"
#include "ink/runtime.hpp"
#include "ink/vocabulary.hpp"

namespace {

using ink::Datastore;
using ink::FloatMatrix;
using ink::Matrix;
using ink::Rng;

Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

Datastore random_store(std::size_t n, int dim) {
  Rng rng(1);
  FloatMatrix keys(static_cast<Eigen::Index>(n), dim);
  std::vector<ink::TokenId> values(n);
  std::vector<ink::Origin> origins(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < dim; ++c) keys(static_cast<Eigen::Index>(i), c) = static_cast<float>(rng.normal());
    values[i] = static_cast<ink::TokenId>(4 + rng.below(180));
    origins[i] = {static_cast<std::uint32_t>(i), 0};
  }
  return Datastore(1, std::move(keys), std::move(values), std::move(origins));
}

const Datastore& store_50k() {
  static const Datastore ds = random_store(50000, 64);
  return ds;
}

void BM_ExactQuery(benchmark::State& state) {
  const Datastore& ds = store_50k();
  Rng rng(2);
  const ink::Vector q = random_matrix(rng, 64, 1).col(0);
  const int k = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(ds.query(q, k));
}
BENCHMARK(BM_ExactQuery)->Arg(8)->Arg(64);

void BM_QueryBatch(benchmark::State& state) {
  const Datastore& ds = store_50k();
  Rng rng(3);
  const Matrix q = random_matrix(rng, state.range(0), 64);
  for (auto _ : state) benchmark::DoNotOptimize(ds.query_batch(q, 8));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_QueryBatch)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_IvfQuery(benchmark::State& state) {
  static Datastore ds = [] {
    Datastore d = store_50k();
    d.build_ivf(ink::IvfOptions{});
    return d;
  }();
  Rng rng(4);
  const ink::Vector q = random_matrix(rng, 64, 1).col(0);
  const int probe = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(ds.query_approximate(q, 8, probe));
}
BENCHMARK(BM_IvfQuery)->Arg(4)->Arg(16);

void BM_Matmul(benchmark::State& state) {
  Rng rng(5);
  const auto n = state.range(0);
  const Matrix a = random_matrix(rng, n, 64), b = random_matrix(rng, 64, 188);
  Matrix out;
  for (auto _ : state) {
    ink::linalg::matmul(a, b, out);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(512);

ink::ModelConfig bench_config() {
  ink::ModelConfig c;
  c.vocab_size = 188;
  return c;
}

std::vector<ink::SentencePair> random_pairs(int count) {
  Rng rng(6);
  std::vector<ink::SentencePair> pairs(static_cast<std::size_t>(count));
  for (auto& p : pairs) {
    for (int i = 0; i < 6; ++i) p.source.push_back(4 + static_cast<ink::TokenId>(rng.below(180)));
    for (int i = 0; i < 6; ++i) p.target.push_back(4 + static_cast<ink::TokenId>(rng.below(180)));
  }
  return pairs;
}

void BM_TeacherForcedStates(benchmark::State& state) {
  ink::Model m(bench_config(), 1);
  m.attach_adapters(2);
  const auto pairs = random_pairs(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(ink::teacher_forced_states(m, pairs));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TeacherForcedStates)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_DecodeStep(benchmark::State& state) {
  ink::Model m(bench_config(), 1);
  const auto pairs = random_pairs(static_cast<int>(state.range(0)));
  std::vector<std::vector<ink::TokenId>> sources, prefixes;
  std::vector<int> ids;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    sources.push_back(pairs[i].source);
    prefixes.push_back({pairs[i].target.begin(), pairs[i].target.begin() + 3});
    ids.push_back(static_cast<int>(i));
  }
  ink::ModelScorer scorer(m, sources);
  for (auto _ : state) benchmark::DoNotOptimize(scorer.next_log_probs(ids, prefixes));
}
BENCHMARK(BM_DecodeStep)->Arg(1)->Arg(32);

void BM_CombinedLoss(benchmark::State& state) {
  Rng rng(7);
  const Datastore& ds = store_50k();
  const Matrix hidden = random_matrix(rng, 256, 64);
  const Matrix embedding = random_matrix(rng, 188, 64);
  const auto found = ds.query_batch(hidden, 8);
  std::vector<ink::LossPosition> positions;
  for (std::size_t r = 0; r < found.size(); ++r)
    positions.push_back({static_cast<std::uint32_t>(r / 8), found[r].items[0].token, &found[r], nullptr});
  const ink::LossConfig config;
  for (auto _ : state) benchmark::DoNotOptimize(ink::combined_loss(hidden, positions, embedding, config));
}
BENCHMARK(BM_CombinedLoss)->Unit(benchmark::kMillisecond);

}  // namespace

int main(int argc, char** argv) {
  ink::configure_allocator();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}

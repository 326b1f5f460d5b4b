#include "ink/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "ink/error.hpp"
#include "ink/losses.hpp"
#include "ink/vocabulary.hpp"

namespace ink {

FrequencyBuckets FrequencyBuckets::even(int n_ranks, int n_buckets) {
  if (n_ranks <= 0 || n_buckets <= 0 || n_buckets > n_ranks) throw InputError("buckets: invalid rank or bucket count");
  FrequencyBuckets b;
  for (int i = 0; i <= n_buckets; ++i)
    b.boundaries.push_back(static_cast<int>(static_cast<long long>(n_ranks) * i / n_buckets));
  return b;
}

void FrequencyBuckets::validate(int n_ranks) const {
  if (boundaries.size() < 2) throw InputError("buckets: need at least two boundaries");
  if (boundaries.front() != 0 || boundaries.back() != n_ranks)
    throw InputError("buckets: boundaries must cover [0, " + std::to_string(n_ranks) + ")");
  for (std::size_t i = 1; i < boundaries.size(); ++i)
    if (boundaries[i] <= boundaries[i - 1]) throw InputError("buckets: boundaries must be strictly increasing");
}

std::size_t FrequencyBuckets::bucket_of(int rank) const {
  const auto it = std::upper_bound(boundaries.begin(), boundaries.end(), rank);
  if (rank < boundaries.front() || it == boundaries.end()) throw InputError("buckets: rank outside the covered range");
  return static_cast<std::size_t>(it - boundaries.begin()) - 1;
}

double KnnAccuracy::bucket_mean() const {
  double s = 0.0;
  int n = 0;
  for (const auto& b : per_bucket)
    if (b) {
      s += *b;
      ++n;
    }
  return n == 0 ? 0.0 : s / n;
}

std::vector<int> target_frequency_ranks(std::span<const SentencePair> pairs, int vocab_size) {
  if (vocab_size <= 0) throw InputError("frequency ranks: vocabulary size must be positive");
  std::vector<std::size_t> counts(static_cast<std::size_t>(vocab_size), 0);
  auto count = [&](TokenId t) {
    if (t < 0 || t >= vocab_size) throw InputError("frequency ranks: token outside the vocabulary");
    ++counts[static_cast<std::size_t>(t)];
  };
  for (const auto& p : pairs) {
    for (TokenId t : p.target) count(t);
    count(Vocabulary::kEos);
  }
  std::vector<int> order(counts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return counts[a] > counts[b]; });
  std::vector<int> rank(counts.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[static_cast<std::size_t>(order[r])] = static_cast<int>(r);
  return rank;
}

KnnAccuracy mean_knn_accuracy(const Matrix& queries, std::span<const TokenId> gold, const Datastore& ds, int k,
                              const FrequencyBuckets& buckets, std::span<const int> ranks) {
  if (static_cast<std::size_t>(queries.rows()) != gold.size())
    throw InputError("mean_knn_accuracy: one gold token per query is required");
  buckets.validate(static_cast<int>(ranks.size()));
  KnnAccuracy out;
  out.per_bucket.assign(buckets.count(), std::nullopt);
  out.bucket_queries.assign(buckets.count(), 0);
  if (gold.empty()) return out;
  const std::vector<NeighborSet> found = ds.query_batch(queries, k);
  std::vector<double> sums(buckets.count(), 0.0);
  double total = 0.0;
  for (std::size_t q = 0; q < gold.size(); ++q) {
    if (gold[q] < 0 || static_cast<std::size_t>(gold[q]) >= ranks.size())
      throw InputError("mean_knn_accuracy: gold token outside the rank table");
    std::size_t hits = 0;
    for (const Neighbor& n : found[q].items) hits += n.token == gold[q];
    const double share = static_cast<double>(hits) / static_cast<double>(found[q].size());
    const std::size_t b = buckets.bucket_of(ranks[static_cast<std::size_t>(gold[q])]);
    sums[b] += share;
    ++out.bucket_queries[b];
    total += share;
  }
  for (std::size_t b = 0; b < sums.size(); ++b)
    if (out.bucket_queries[b] > 0) out.per_bucket[b] = 100.0 * sums[b] / static_cast<double>(out.bucket_queries[b]);
  out.queries = gold.size();
  out.overall = 100.0 * total / static_cast<double>(gold.size());
  return out;
}

ReferencePositions reference_positions(Model& model, std::span<const SentencePair> pairs) {
  ReferencePositions out;
  out.states = teacher_forced_states(model, pairs);
  out.gold.reserve(static_cast<std::size_t>(out.states.rows()));
  for (const auto& p : pairs) {
    out.gold.insert(out.gold.end(), p.target.begin(), p.target.end());
    out.gold.push_back(Vocabulary::kEos);
  }
  return out;
}

double token_accuracy(const ReferencePositions& positions, const Matrix& embedding) {
  if (positions.gold.empty()) throw InputError("token_accuracy: no positions");
  const Matrix logits = nmt_logits(positions.states, embedding);
  std::size_t correct = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index v = 1; v < logits.cols(); ++v)
      if (logits(r, v) > logits(r, best)) best = v;
    correct += best == positions.gold[static_cast<std::size_t>(r)];
  }
  return static_cast<double>(correct) / static_cast<double>(positions.gold.size());
}

double token_accuracy(Model& model, std::span<const SentencePair> pairs) {
  return token_accuracy(reference_positions(model, pairs), model.embedding());
}

namespace {

template <typename T>
double corpus_bleu(std::span<const std::vector<T>> candidates, std::span<const std::vector<T>> references) {
  if (candidates.size() != references.size()) throw InputError("bleu: candidate and reference counts differ");
  if (candidates.empty()) throw InputError("bleu: empty corpus");
  constexpr std::size_t kOrder = 4;
  double matches[kOrder] = {0, 0, 0, 0};
  double totals[kOrder] = {0, 0, 0, 0};
  double cand_len = 0.0, ref_len = 0.0;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    const auto& c = candidates[s];
    const auto& r = references[s];
    cand_len += static_cast<double>(c.size());
    ref_len += static_cast<double>(r.size());
    for (std::size_t n = 1; n <= kOrder; ++n) {
      if (c.size() < n) continue;
      std::map<std::vector<T>, int> ref_counts;
      if (r.size() >= n)
        for (std::size_t i = 0; i + n <= r.size(); ++i) ++ref_counts[std::vector<T>(r.begin() + i, r.begin() + i + n)];
      std::map<std::vector<T>, int> cand_counts;
      for (std::size_t i = 0; i + n <= c.size(); ++i) ++cand_counts[std::vector<T>(c.begin() + i, c.begin() + i + n)];
      for (const auto& [gram, count] : cand_counts) {
        const auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matches[n - 1] += std::min(count, it->second);
      }
      totals[n - 1] += static_cast<double>(c.size() - n + 1);
    }
  }
  if (cand_len == 0.0 || matches[0] == 0.0) return 0.0;
  double log_sum = std::log(matches[0] / totals[0]);
  for (std::size_t n = 1; n < kOrder; ++n) log_sum += std::log((matches[n] + 1.0) / (totals[n] + 1.0));
  const double bp = cand_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  return 100.0 * bp * std::exp(log_sum / static_cast<double>(kOrder));
}

}  // namespace

double bleu(std::span<const std::vector<std::string>> candidates,
            std::span<const std::vector<std::string>> references) {
  return corpus_bleu(candidates, references);
}

double bleu(std::span<const std::vector<TokenId>> candidates, std::span<const std::vector<TokenId>> references) {
  return corpus_bleu(candidates, references);
}

}  // namespace ink

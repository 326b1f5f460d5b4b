#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ink/datastore.hpp"
#include "ink/model.hpp"

namespace ink {

// Bucket i holds frequency ranks [boundaries[i], boundaries[i+1]).
struct FrequencyBuckets {
  std::vector<int> boundaries;

  // n_buckets equal-width rank ranges over [0, n_ranks).
  static FrequencyBuckets even(int n_ranks, int n_buckets = 4);
  void validate(int n_ranks) const;
  std::size_t count() const { return boundaries.empty() ? 0 : boundaries.size() - 1; }
  std::size_t bucket_of(int rank) const;
};

struct KnnAccuracy {
  // Percent per bucket; empty buckets have no value.
  std::vector<std::optional<double>> per_bucket;
  std::vector<std::size_t> bucket_queries;
  // Percent over all queries.
  double overall = 0.0;
  std::size_t queries = 0;

  // Unweighted mean of the non-empty buckets.
  double bucket_mean() const;
};

// Rank of each token id by its count among the targets of `pairs`, end of
// sentence included. Rank 0 is the most frequent; ties go to the lower id.
std::vector<int> target_frequency_ranks(std::span<const SentencePair> pairs, int vocab_size);

// For each query row, the share of its k nearest entries whose value is the
// gold token, averaged inside the bucket of the gold token's frequency rank.
// `ranks` maps token id to frequency rank.
KnnAccuracy mean_knn_accuracy(const Matrix& queries, std::span<const TokenId> gold, const Datastore& ds, int k,
                              const FrequencyBuckets& buckets, std::span<const int> ranks);

// Teacher-forced states and gold tokens (target plus end-of-sentence) of a corpus.
struct ReferencePositions {
  Matrix states;
  std::vector<TokenId> gold;
};
ReferencePositions reference_positions(Model& model, std::span<const SentencePair> pairs);

// Share of teacher-forced positions whose argmax token is the gold token.
double token_accuracy(Model& model, std::span<const SentencePair> pairs);
double token_accuracy(const ReferencePositions& positions, const Matrix& embedding);

// Corpus BLEU-4 in [0, 100] with brevity penalty. Unigram precision is
// unsmoothed; higher orders use add-one smoothing.
double bleu(std::span<const std::vector<std::string>> candidates,
            std::span<const std::vector<std::string>> references);
double bleu(std::span<const std::vector<TokenId>> candidates, std::span<const std::vector<TokenId>> references);

}  // namespace ink

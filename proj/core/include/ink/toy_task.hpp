#pragma once

#include <cstdint>
#include <vector>

#include "ink/corpus.hpp"

namespace ink {

// Synthetic word-for-word translation task with a general and a shifted domain.
// Both domains share a core lexicon. In the shifted domain a fraction of core
// source words translate differently and domain-only words appear.
struct ToyTaskOptions {
  int core_words = 80;
  int domain_words = 12;
  double remap_fraction = 0.25;
  // Share of shifted-domain tokens drawn from the domain-only words.
  double domain_word_rate = 0.2;
  // Probability that a word takes its secondary translation.
  double ambiguity = 0.1;
  double zipf_exponent = 1.0;
  int min_len = 3;
  int max_len = 8;
  int general_train = 2600;
  int general_dev = 200;
  int domain_train = 1800;
  int domain_dev = 200;
  int domain_test = 200;
  std::uint64_t seed = 2024;

  void validate() const;
};

struct ToyTask {
  std::vector<TextPair> general_train;
  std::vector<TextPair> general_dev;
  std::vector<TextPair> domain_train;
  std::vector<TextPair> domain_dev;
  std::vector<TextPair> domain_test;

  std::vector<TextPair> all() const;
};

ToyTask make_toy_task(const ToyTaskOptions& options = {});

// Extra shifted-domain pairs from the same lexicon, e.g. to grow a datastore.
std::vector<TextPair> make_domain_pairs(const ToyTaskOptions& options, int count, std::uint64_t stream);

}  // namespace ink

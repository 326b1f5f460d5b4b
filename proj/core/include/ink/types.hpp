#pragma once

#include <compare>
#include <cstdint>
#include <vector>

#include "ink/tensor.hpp"

namespace ink {

// Where a representation came from: sentence index in its corpus and target step.
struct Origin {
  std::uint32_t sentence = 0;
  std::uint32_t step = 0;
  auto operator<=>(const Origin&) const = default;
};

// Target excludes the end-of-sentence token; the model appends it, so a pair
// contributes target.size() + 1 decoder positions.
struct SentencePair {
  std::vector<TokenId> source;
  std::vector<TokenId> target;

  std::size_t target_positions() const { return target.size() + 1; }
};

struct Representation {
  Vector values;
  Origin origin;
};

// Probabilities over `support`; the full vocabulary when support is 0..|V|-1.
struct VocabDistribution {
  std::vector<TokenId> support;
  std::vector<double> probs;

  double prob(TokenId token) const;
  double total() const;
};

}  // namespace ink

#pragma once

#include <functional>
#include <span>
#include <vector>

#include "ink/model.hpp"

namespace ink {

enum class DecodeStrategy { greedy, beam };

struct DecodeOptions {
  DecodeStrategy strategy = DecodeStrategy::beam;
  int beam_size = 4;
  double length_penalty = 0.6;
  // Generated tokens including end-of-sentence; 0 means the model's max_len.
  int max_len = 0;
};

// Supplies next-token log-probabilities for a set of partial hypotheses.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual int vocab_size() const = 0;
  // Row i scores the token following prefixes[i] for source sources[i].
  virtual Matrix next_log_probs(std::span<const int> sources, std::span<const std::vector<TokenId>> prefixes) = 0;
};

// Argmax at each step; ties go to the lower token id.
std::vector<std::vector<TokenId>> greedy_search(StepScorer& scorer, int n_sources, int max_len);

// Hypotheses finish on end-of-sentence and are ranked by score / length^penalty,
// where length counts the end-of-sentence token.
std::vector<std::vector<TokenId>> beam_search(StepScorer& scorer, int n_sources, int beam_size, double length_penalty,
                                              int max_len);

// Scores hypotheses with the model. The optional hook may rewrite the per-row
// log-probabilities given the final decoder states (kNN interpolation).
class ModelScorer : public StepScorer {
 public:
  using Adjust = std::function<void(const Matrix& hidden, Matrix& log_probs)>;

  ModelScorer(Model& model, std::span<const std::vector<TokenId>> sources, Adjust adjust = {});

  int vocab_size() const override { return model_.config().vocab_size; }
  Matrix next_log_probs(std::span<const int> sources, std::span<const std::vector<TokenId>> prefixes) override;

 private:
  Model& model_;
  Adjust adjust_;
  ad::Segments memory_segments_;
  std::vector<Matrix> keys_;
  std::vector<Matrix> values_;
};

std::vector<std::vector<TokenId>> decode_batch(Model& model, std::span<const std::vector<TokenId>> sources,
                                               const DecodeOptions& options = {}, ModelScorer::Adjust adjust = {});

std::vector<TokenId> decode(Model& model, const std::vector<TokenId>& source, const DecodeOptions& options = {});

}  // namespace ink

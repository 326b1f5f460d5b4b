#pragma once

#include <span>
#include <string>
#include <vector>

#include "ink/datastore.hpp"
#include "ink/decode.hpp"
#include "ink/smoothing.hpp"

namespace ink {

struct BenchResult {
  std::string system;
  int batch_size = 0;
  double sents_per_sec = 0.0;  // mean over repetitions
  int repetitions = 0;
  int threads = 1;
  std::size_t sentences = 0;
  std::size_t tokens_generated = 0;  // per repetition, end-of-sentence excluded
};

struct BenchOptions {
  std::vector<int> batch_sizes{8, 32, 128};
  int repetitions = 3;
  DecodeOptions decode;
  int knn_k = 8;
  KernelSpec kernel;
  double lambda = 0.5;
  int threads = 1;
};

// Decode-time hook mixing lambda * p_knn into the model distribution. Every
// call runs one exact datastore query per hypothesis.
ModelScorer::Adjust knn_adjust(const Datastore& ds, int k, const KernelSpec& kernel, double lambda);

inline const char* kAdapterSystem = "adapter-only";
inline const char* kKnnSystem = "knn-interpolated";

// Sentences per second for adapter-only decoding (adapter_model, no datastore)
// and kNN-interpolated decoding (knn_model plus ds) at each batch size.
std::vector<BenchResult> throughput_bench(Model& adapter_model, Model& knn_model, const Datastore& ds,
                                          std::span<const std::vector<TokenId>> sources, const BenchOptions& options);

std::string format_bench(const std::vector<BenchResult>& results);

}  // namespace ink

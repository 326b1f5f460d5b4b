#include "ink/bench.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include "ink/error.hpp"

namespace ink {

ModelScorer::Adjust knn_adjust(const Datastore& ds, int k, const KernelSpec& kernel, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InputError("knn_adjust: lambda must lie in [0, 1]");
  kernel.validate();
  if (ds.empty()) throw StateError("knn_adjust: empty datastore");
  return [&ds, k, kernel, lambda](const Matrix& hidden, Matrix& log_probs) {
    const std::vector<NeighborSet> found = ds.query_batch(hidden, k);
    for (Eigen::Index r = 0; r < hidden.rows(); ++r) {
      const VocabDistribution p_knn = knn_distribution(found[static_cast<std::size_t>(r)], hidden.row(r).transpose(), kernel);
      auto row = log_probs.row(r);
      for (Eigen::Index v = 0; v < row.size(); ++v) row(v) = (1.0 - lambda) * std::exp(row(v));
      for (std::size_t i = 0; i < p_knn.support.size(); ++i) row(p_knn.support[i]) += lambda * p_knn.probs[i];
      for (Eigen::Index v = 0; v < row.size(); ++v) row(v) = std::log(row(v));
    }
  };
}

std::vector<BenchResult> throughput_bench(Model& adapter_model, Model& knn_model, const Datastore& ds,
                                          std::span<const std::vector<TokenId>> sources, const BenchOptions& options) {
  if (sources.empty()) throw InputError("throughput_bench: empty test set");
  if (options.repetitions < 1) throw InputError("throughput_bench: repetitions must be >= 1");
  for (int b : options.batch_sizes)
    if (b < 1) throw InputError("throughput_bench: batch sizes must be positive");
  const ModelScorer::Adjust adjust = knn_adjust(ds, options.knn_k, options.kernel, options.lambda);
  std::vector<BenchResult> results;
  for (const bool knn : {false, true}) {
    Model& model = knn ? knn_model : adapter_model;
    for (int batch : options.batch_sizes) {
      BenchResult r;
      r.system = knn ? kKnnSystem : kAdapterSystem;
      r.batch_size = batch;
      r.repetitions = options.repetitions;
      r.threads = options.threads;
      r.sentences = sources.size();
      double rate_sum = 0.0;
      for (int rep = 0; rep < options.repetitions; ++rep) {
        std::size_t tokens = 0;
        const auto t0 = std::chrono::steady_clock::now();
        for (std::size_t b = 0; b < sources.size(); b += static_cast<std::size_t>(batch)) {
          const auto chunk = sources.subspan(b, std::min<std::size_t>(static_cast<std::size_t>(batch), sources.size() - b));
          const auto out = decode_batch(model, chunk, options.decode, knn ? adjust : ModelScorer::Adjust{});
          for (const auto& o : out) tokens += o.size();
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rate_sum += static_cast<double>(sources.size()) / std::max(seconds, 1e-9);
        r.tokens_generated = tokens;
      }
      r.sents_per_sec = rate_sum / options.repetitions;
      results.push_back(r);
    }
  }
  return results;
}

std::string format_bench(const std::vector<BenchResult>& results) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << std::left << std::setw(18) << "system" << std::right << std::setw(7) << "batch" << std::setw(12) << "sents/s"
      << std::setw(6) << "reps" << std::setw(9) << "threads" << std::setw(9) << "tokens" << "\n";
  std::map<int, double> adapter, knn;
  for (const auto& r : results) {
    out << std::left << std::setw(18) << r.system << std::right << std::setw(7) << r.batch_size << std::setw(12)
        << r.sents_per_sec << std::setw(6) << r.repetitions << std::setw(9) << r.threads << std::setw(9)
        << r.tokens_generated << "\n";
    (r.system == kAdapterSystem ? adapter : knn)[r.batch_size] = r.sents_per_sec;
  }
  for (const auto& [batch, rate] : adapter)
    if (knn.contains(batch)) out << "speedup at batch " << batch << ": " << rate / knn[batch] << "x\n";
  return out.str();
}

}  // namespace ink

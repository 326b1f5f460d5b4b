#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ink/error.hpp"
#include "ink/losses.hpp"
#include "ink/model.hpp"
#include "ink/optimizer.hpp"

namespace ink {

struct TrainConfig {
  LossWeights weights;
  int knn_k = 8;
  KernelSpec kernel;  // p_knn kernel of the kNN-to-NMT term
  int epochs = 10;
  int warmup_steps = 4000;
  double peak_lr = 5e-4;
  int batch_tokens = 1024;
  std::uint64_t seed = 1;
  bool refresh_enabled = true;
  bool enable_l_i = true;
  bool enable_l_r = true;
  int patience = 5;
  // Build the next datastore version on a parameter snapshot while the next
  // epoch already trains on the previous version.
  bool overlapped_refresh = false;
  double clamp_epsilon = 1e-12;
  bool per_token_mean = false;
  AdamOptions adam;

  void validate() const;
  LossConfig loss_config() const;
};

struct DevMetrics {
  double token_accuracy = 0.0;
  double knn_accuracy = 0.0;          // percent, mean over frequency quartiles
  double knn_accuracy_overall = 0.0;  // percent, all dev positions
};

struct EpochReport {
  int epoch = 0;
  LossBreakdown loss;  // mean over batches; clamp_hits and positions are totals
  std::uint64_t datastore_version = 0;
  double refresh_seconds = 0.0;
  std::size_t clamp_hits = 0;
  std::optional<DevMetrics> dev;
  std::int64_t steps = 0;
  double learning_rate = 0.0;
};

// Carries the parameters from the start of the epoch that produced a
// non-finite loss.
class DivergenceError : public TrainingError {
 public:
  DivergenceError(const std::string& what, std::shared_ptr<const Model> last_good)
      : TrainingError(what), last_good_(std::move(last_good)) {}
  const std::shared_ptr<const Model>& last_good() const { return last_good_; }

 private:
  std::shared_ptr<const Model> last_good_;
};

using EpochCallback = std::function<void(const EpochReport&, const Model&)>;

// Pairs in shuffled order packed into batches of at most batch_tokens, where a
// pair costs max(|source|, |target|) + 1 tokens.
std::vector<std::vector<std::uint32_t>> make_batches(std::span<const SentencePair> corpus, int batch_tokens,
                                                     std::uint64_t seed);

// Dev token accuracy and kNN accuracy of `dev` against a datastore built from
// `train` with the model's current parameters. Frequency quartiles are ranked
// by target counts in `train`.
DevMetrics evaluate_dev(Model& model, std::span<const SentencePair> train, std::span<const SentencePair> dev, int k,
                        const Datastore* prebuilt = nullptr);

struct PretrainResult {
  Model model;
  std::vector<EpochReport> reports;
};

// Trains every base parameter with the gold cross-entropy only. With a dev set,
// stops after `patience` epochs without a dev token-accuracy gain and returns
// the best parameters.
PretrainResult pretrain_base(const ModelConfig& model_config, std::span<const SentencePair> train,
                             std::span<const SentencePair> dev, const TrainConfig& config,
                             const EpochCallback& on_epoch = {});

struct InkResult {
  Model model;  // frozen base plus trained adapters
  std::vector<EpochReport> reports;
  DevMetrics initial_dev;
  DevMetrics final_dev;
  int best_epoch = 0;
  std::uint64_t last_datastore_version = 0;
};

// Adapter-only training against the active datastore, refreshed at every epoch
// boundary. The base parameters are never modified.
InkResult train_ink(const Model& base, std::span<const SentencePair> train, std::span<const SentencePair> dev,
                    const TrainConfig& config, const EpochCallback& on_epoch = {});

struct AblationArm {
  std::string name;
  std::vector<std::uint64_t> seeds;
  std::vector<DevMetrics> per_seed;
  std::optional<std::string> error;

  double mean_knn_accuracy() const;
  double mean_token_accuracy() const;
  double std_knn_accuracy() const;  // sample standard deviation over seeds
};

struct AblationTable {
  std::vector<AblationArm> arms;  // full, no-refresh, no-L^i, no-L^r, L^a-only

  const AblationArm& arm(const std::string& name) const;
  std::string format() const;
};

// The arm names in table order.
std::vector<std::string> ablation_arm_names();
TrainConfig ablation_config(const TrainConfig& base, const std::string& arm);

AblationTable ablation_suite(const Model& base, std::span<const SentencePair> train,
                             std::span<const SentencePair> dev, const TrainConfig& config,
                             std::span<const std::uint64_t> seeds);

}  // namespace ink

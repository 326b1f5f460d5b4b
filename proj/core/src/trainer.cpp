#include "ink/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "ink/datastore.hpp"
#include "ink/metrics.hpp"
#include "ink/random.hpp"
#include "ink/vocabulary.hpp"

namespace ink {

namespace {

using Clock = std::chrono::steady_clock;

std::size_t pair_cost(const SentencePair& p) { return std::max(p.source.size(), p.target.size()) + 1; }

std::uint64_t epoch_seed(std::uint64_t seed, int epoch) {
  return seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(epoch) * 0xBF58476D1CE4E5B9ULL + 1;
}

void check_corpus(std::span<const SentencePair> train, const TrainConfig& config) {
  if (train.empty()) throw InputError("training corpus is empty");
  for (const auto& p : train)
    if (pair_cost(p) > static_cast<std::size_t>(config.batch_tokens))
      throw InputError("batch_tokens (" + std::to_string(config.batch_tokens) +
                       ") is smaller than the longest sentence (" + std::to_string(pair_cost(p)) + " tokens)");
}

std::vector<SentencePair> gather(std::span<const SentencePair> corpus, const std::vector<std::uint32_t>& ids) {
  std::vector<SentencePair> out;
  out.reserve(ids.size());
  for (std::uint32_t i : ids) out.push_back(corpus[i]);
  return out;
}

std::vector<TokenId> gold_tokens(std::span<const SentencePair> batch) {
  std::vector<TokenId> gold;
  for (const auto& p : batch) {
    gold.insert(gold.end(), p.target.begin(), p.target.end());
    gold.push_back(Vocabulary::kEos);
  }
  return gold;
}

void accumulate(LossBreakdown& acc, const LossBreakdown& b) {
  acc.l_a += b.l_a;
  acc.l_i += b.l_i;
  acc.l_r += b.l_r;
  acc.total += b.total;
  acc.positions += b.positions;
  acc.clamp_hits += b.clamp_hits;
}

void average(LossBreakdown& acc, std::size_t batches) {
  if (batches == 0) return;
  const double n = static_cast<double>(batches);
  acc.l_a /= n;
  acc.l_i /= n;
  acc.l_r /= n;
  acc.total /= n;
}

std::vector<Matrix> snapshot(const std::vector<ad::Parameter*>& params) {
  std::vector<Matrix> out;
  out.reserve(params.size());
  for (const auto* p : params) out.push_back(p->value);
  return out;
}

void restore(const std::vector<ad::Parameter*>& params, const std::vector<Matrix>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

// Gold cross-entropy over the output logits, sum over a pair's positions and
// mean over pairs. Gradient flows through the logits into hidden and embedding.
double pretrain_step(Model& model, Adam& adam, double lr, std::span<const SentencePair> batch, bool per_token_mean) {
  ad::Tape tape;
  const ad::Var hidden = model.teacher_forced(tape, batch);
  const ad::Var logits = model.logits(tape, hidden);
  const Matrix& lv = tape.value(logits);
  const std::vector<TokenId> gold = gold_tokens(batch);
  const double scale = per_token_mean ? 1.0 / static_cast<double>(gold.size()) : 1.0 / static_cast<double>(batch.size());
  Matrix dlogits(lv.rows(), lv.cols());
  double loss = 0.0;
  for (Eigen::Index r = 0; r < lv.rows(); ++r) {
    const double lse = linalg::log_sum_exp(std::span<const double>(lv.row(r).data(), static_cast<std::size_t>(lv.cols())));
    for (Eigen::Index v = 0; v < lv.cols(); ++v) dlogits(r, v) = scale * std::exp(lv(r, v) - lse);
    const TokenId g = gold[static_cast<std::size_t>(r)];
    dlogits(r, g) -= scale;
    loss += scale * (lse - lv(r, g));
  }
  if (!std::isfinite(loss)) throw NumericError("non-finite training loss");
  const ad::Var root = tape.external_loss(logits, loss, std::move(dlogits));
  adam.zero_grad();
  tape.backward(root);
  adam.step(lr);
  return loss;
}

LossBreakdown ink_step(Model& model, Adam& adam, double lr, std::span<const SentencePair> corpus,
                       const std::vector<std::uint32_t>& ids, const Datastore& ds, const TrainConfig& config,
                       const LossConfig& loss_config) {
  const std::vector<SentencePair> batch = gather(corpus, ids);
  ad::Tape tape;
  const ad::Var hidden = model.teacher_forced(tape, batch);
  const Matrix& hv = tape.value(hidden);
  if (!hv.allFinite()) throw NumericError("non-finite representation during training");
  const std::vector<TokenId> gold = gold_tokens(batch);

  std::vector<NeighborSet> neighbors;
  if (loss_config.enable_l_i || loss_config.enable_l_r) {
    std::vector<std::optional<Origin>> exclude;
    exclude.reserve(gold.size());
    for (std::uint32_t s : ids)
      for (std::size_t t = 0; t < corpus[s].target_positions(); ++t)
        exclude.emplace_back(Origin{s, static_cast<std::uint32_t>(t)});
    neighbors = ds.query_batch(hv, config.knn_k, exclude);
  }
  std::vector<LossPosition> positions;
  positions.reserve(gold.size());
  std::size_t row = 0;
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (std::size_t t = 0; t < batch[i].target_positions(); ++t, ++row)
      positions.push_back(LossPosition{static_cast<std::uint32_t>(i), gold[row],
                                       neighbors.empty() ? nullptr : &neighbors[row], nullptr});

  CombinedLoss loss = combined_loss(hv, positions, model.embedding(), loss_config);
  const ad::Var root = tape.external_loss(hidden, loss.breakdown.total, std::move(loss.grad));
  adam.zero_grad();
  tape.backward(root);
  adam.step(lr);
  return loss.breakdown;
}

}  // namespace

void TrainConfig::validate() const {
  weights.validate();
  kernel.validate();
  if (knn_k <= 0) throw InputError("train: knn_k must be positive");
  if (epochs < 0) throw InputError("train: epochs must be non-negative");
  if (warmup_steps <= 0) throw InputError("train: warmup_steps must be positive");
  if (!(peak_lr > 0.0) || !std::isfinite(peak_lr)) throw InputError("train: peak_lr must be positive");
  if (batch_tokens <= 0) throw InputError("train: batch_tokens must be positive");
  if (patience <= 0) throw InputError("train: patience must be positive");
  if (!(clamp_epsilon > 0.0 && clamp_epsilon < 1.0)) throw InputError("train: clamp_epsilon must lie in (0, 1)");
}

LossConfig TrainConfig::loss_config() const {
  LossConfig c;
  c.weights = weights;
  c.knn_kernel = kernel;
  c.clamp_epsilon = clamp_epsilon;
  c.enable_l_i = enable_l_i;
  c.enable_l_r = enable_l_r;
  c.per_token_mean = per_token_mean;
  return c;
}

std::vector<std::vector<std::uint32_t>> make_batches(std::span<const SentencePair> corpus, int batch_tokens,
                                                     std::uint64_t seed) {
  std::vector<std::uint32_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0u);
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  std::vector<std::vector<std::uint32_t>> batches;
  std::vector<std::uint32_t> current;
  std::size_t tokens = 0;
  for (std::uint32_t i : order) {
    const std::size_t c = pair_cost(corpus[i]);
    if (!current.empty() && tokens + c > static_cast<std::size_t>(batch_tokens)) {
      batches.push_back(std::move(current));
      current.clear();
      tokens = 0;
    }
    current.push_back(i);
    tokens += c;
  }
  if (!current.empty()) batches.push_back(std::move(current));
  return batches;
}

DevMetrics evaluate_dev(Model& model, std::span<const SentencePair> train, std::span<const SentencePair> dev, int k,
                        const Datastore* prebuilt) {
  if (dev.empty()) throw InputError("evaluate_dev: empty dev set");
  std::optional<Datastore> own;
  if (prebuilt == nullptr) own.emplace(build_datastore(model, train));
  const Datastore& ds = prebuilt ? *prebuilt : *own;
  const ReferencePositions refs = reference_positions(model, dev);
  DevMetrics m;
  m.token_accuracy = token_accuracy(refs, model.embedding());
  const int vocab = model.config().vocab_size;
  const std::vector<int> ranks = target_frequency_ranks(train, vocab);
  const KnnAccuracy acc = mean_knn_accuracy(refs.states, refs.gold, ds, k, FrequencyBuckets::even(vocab), ranks);
  m.knn_accuracy = acc.bucket_mean();
  m.knn_accuracy_overall = acc.overall;
  return m;
}

PretrainResult pretrain_base(const ModelConfig& model_config, std::span<const SentencePair> train,
                             std::span<const SentencePair> dev, const TrainConfig& config,
                             const EpochCallback& on_epoch) {
  config.validate();
  check_corpus(train, config);
  PretrainResult result{Model(model_config, config.seed), {}};
  Model& model = result.model;
  if (config.epochs == 0) return result;
  Adam adam(model.parameters(), config.adam);
  const LearningRateSchedule schedule{config.warmup_steps, config.peak_lr};
  std::vector<Matrix> best = snapshot(model.parameters());
  double best_acc = -1.0;
  int since_best = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto last_good = std::make_shared<const Model>(model);
    EpochReport report;
    report.epoch = epoch;
    const auto batches = make_batches(train, config.batch_tokens, epoch_seed(config.seed, epoch));
    try {
      for (const auto& ids : batches) {
        const std::vector<SentencePair> batch = gather(train, ids);
        const double lr = schedule.at(adam.steps() + 1);
        report.loss.l_a += pretrain_step(model, adam, lr, batch, config.per_token_mean);
        for (const auto& p : batch) report.loss.positions += p.target_positions();
      }
    } catch (const NumericError& e) {
      throw DivergenceError("pretraining diverged in epoch " + std::to_string(epoch) + ": " + e.what(), last_good);
    }
    report.loss.l_a /= static_cast<double>(batches.size());
    report.loss.total = report.loss.l_a;
    report.steps = adam.steps();
    report.learning_rate = schedule.at(std::max<std::int64_t>(adam.steps(), 1));
    if (!dev.empty()) report.dev = evaluate_dev(model, train, dev, config.knn_k);
    result.reports.push_back(report);
    if (on_epoch) on_epoch(report, model);
    if (!dev.empty()) {
      if (report.dev->token_accuracy > best_acc) {
        best_acc = report.dev->token_accuracy;
        best = snapshot(model.parameters());
        since_best = 0;
      } else if (++since_best >= config.patience) {
        break;
      }
    }
  }
  if (!dev.empty()) restore(model.parameters(), best);
  return result;
}

InkResult train_ink(const Model& base, std::span<const SentencePair> train, std::span<const SentencePair> dev,
                    const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  check_corpus(train, config);
  if (base.has_adapters()) throw StateError("train_ink: the base model already carries adapters");
  InkResult result{base, {}, {}, {}, 0, 0};
  Model& model = result.model;
  model.attach_adapters(epoch_seed(config.seed, 0));
  model.freeze_base(true);
  const std::vector<ad::Parameter*> adapters = model.adapter_parameters();
  Adam adam(adapters, config.adam);
  const LearningRateSchedule schedule{config.warmup_steps, config.peak_lr};
  const LossConfig loss_config = config.loss_config();

  ActiveDatastore active(std::make_shared<const Datastore>(build_datastore(model, train)));
  if (!dev.empty()) result.initial_dev = evaluate_dev(model, train, dev, config.knn_k, active.acquire().get());
  result.final_dev = result.initial_dev;
  std::vector<Matrix> best = snapshot(adapters);
  double best_acc = dev.empty() ? 0.0 : result.initial_dev.token_accuracy;
  int since_best = 0;
  std::future<void> pending;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto last_good = std::make_shared<const Model>(model);
    EpochReport report;
    report.epoch = epoch;
    const auto batches = make_batches(train, config.batch_tokens, epoch_seed(config.seed, epoch));
    try {
      for (const auto& ids : batches) {
        const std::shared_ptr<const Datastore> ds = active.acquire();
        report.datastore_version = std::max(report.datastore_version, ds->version());
        const double lr = schedule.at(adam.steps() + 1);
        accumulate(report.loss, ink_step(model, adam, lr, train, ids, *ds, config, loss_config));
      }
    } catch (const NumericError& e) {
      if (pending.valid()) pending.wait();
      throw DivergenceError("INK training diverged in epoch " + std::to_string(epoch) + ": " + e.what(), last_good);
    }
    average(report.loss, batches.size());
    report.clamp_hits = report.loss.clamp_hits;
    report.steps = adam.steps();
    report.learning_rate = schedule.at(std::max<std::int64_t>(adam.steps(), 1));

    const auto t0 = Clock::now();
    if (config.refresh_enabled) {
      if (config.overlapped_refresh) {
        if (pending.valid()) pending.get();
        auto frozen = std::make_shared<Model>(model);
        pending = std::async(std::launch::async, [frozen, &active, train] {
          const std::shared_ptr<const Datastore> old = active.acquire();
          active.publish(std::make_shared<const Datastore>(refresh_datastore(*old, *frozen, train)));
        });
      } else {
        const std::shared_ptr<const Datastore> old = active.acquire();
        active.publish(std::make_shared<const Datastore>(refresh_datastore(*old, model, train)));
      }
    }
    report.refresh_seconds = std::chrono::duration<double>(Clock::now() - t0).count();

    if (!dev.empty()) {
      const bool current = config.refresh_enabled && !config.overlapped_refresh;
      const std::shared_ptr<const Datastore> ds = current ? active.acquire() : nullptr;
      report.dev = evaluate_dev(model, train, dev, config.knn_k, ds.get());
    }
    result.reports.push_back(report);
    if (on_epoch) on_epoch(report, model);
    if (!dev.empty()) {
      if (report.dev->token_accuracy > best_acc) {
        best_acc = report.dev->token_accuracy;
        best = snapshot(adapters);
        result.best_epoch = epoch;
        result.final_dev = *report.dev;
        since_best = 0;
      } else if (++since_best >= config.patience) {
        break;
      }
    }
  }
  if (pending.valid()) pending.get();
  result.last_datastore_version = active.acquire()->version();
  if (!dev.empty()) {
    restore(adapters, best);
  } else {
    result.best_epoch = static_cast<int>(result.reports.size());
  }
  return result;
}

std::vector<std::string> ablation_arm_names() { return {"full", "no-refresh", "no-L^i", "no-L^r", "L^a-only"}; }

TrainConfig ablation_config(const TrainConfig& base, const std::string& arm) {
  TrainConfig c = base;
  if (arm == "full") return c;
  if (arm == "no-refresh") {
    c.refresh_enabled = false;
  } else if (arm == "no-L^i") {
    c.enable_l_i = false;
  } else if (arm == "no-L^r") {
    c.enable_l_r = false;
  } else if (arm == "L^a-only") {
    c.enable_l_i = false;
    c.enable_l_r = false;
  } else {
    throw InputError("unknown ablation arm '" + arm + "'");
  }
  return c;
}

double AblationArm::mean_knn_accuracy() const {
  if (per_seed.empty()) return std::nan("");
  double s = 0.0;
  for (const auto& m : per_seed) s += m.knn_accuracy;
  return s / static_cast<double>(per_seed.size());
}

double AblationArm::mean_token_accuracy() const {
  if (per_seed.empty()) return std::nan("");
  double s = 0.0;
  for (const auto& m : per_seed) s += m.token_accuracy;
  return s / static_cast<double>(per_seed.size());
}

double AblationArm::std_knn_accuracy() const {
  if (per_seed.size() < 2) return 0.0;
  const double mean = mean_knn_accuracy();
  double s = 0.0;
  for (const auto& m : per_seed) s += (m.knn_accuracy - mean) * (m.knn_accuracy - mean);
  return std::sqrt(s / static_cast<double>(per_seed.size() - 1));
}

const AblationArm& AblationTable::arm(const std::string& name) const {
  for (const auto& a : arms)
    if (a.name == name) return a;
  throw InputError("ablation table has no arm '" + name + "'");
}

std::string AblationTable::format() const {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << std::left << std::setw(12) << "arm" << std::right << std::setw(10) << "knn_acc" << std::setw(9) << "std"
      << std::setw(10) << "tok_acc" << std::setw(11) << "d_knn" << std::setw(11) << "d_tok" << "\n";
  const AblationArm* full = nullptr;
  for (const auto& a : arms)
    if (a.name == "full" && !a.error) full = &a;
  for (const auto& a : arms) {
    out << std::left << std::setw(12) << a.name << std::right;
    if (a.error) {
      out << "  failed: " << *a.error << "\n";
      continue;
    }
    out << std::setw(10) << a.mean_knn_accuracy() << std::setw(9) << a.std_knn_accuracy() << std::setw(10)
        << 100.0 * a.mean_token_accuracy();
    if (full) {
      out << std::showpos << std::setw(11) << a.mean_knn_accuracy() - full->mean_knn_accuracy() << std::setw(11)
          << 100.0 * (a.mean_token_accuracy() - full->mean_token_accuracy()) << std::noshowpos;
    }
    out << "\n";
  }
  return out.str();
}

AblationTable ablation_suite(const Model& base, std::span<const SentencePair> train,
                             std::span<const SentencePair> dev, const TrainConfig& config,
                             std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw InputError("ablation_suite: at least one seed is required");
  if (dev.empty()) throw InputError("ablation_suite: a dev set is required");
  AblationTable table;
  for (const std::string& name : ablation_arm_names()) {
    AblationArm arm;
    arm.name = name;
    try {
      for (std::uint64_t seed : seeds) {
        TrainConfig c = ablation_config(config, name);
        c.seed = seed;
        arm.per_seed.push_back(train_ink(base, train, dev, c).final_dev);
        arm.seeds.push_back(seed);
      }
    } catch (const Error& e) {
      arm.error = e.what();
    }
    table.arms.push_back(std::move(arm));
  }
  return table;
}

}  // namespace ink

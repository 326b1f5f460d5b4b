#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ink/bench.hpp"
#include "ink/checkpoint.hpp"
#include "ink/config.hpp"
#include "ink/corpus.hpp"
#include "ink/datastore.hpp"
#include "ink/decode.hpp"
#include "ink/error.hpp"
#include "ink/metrics.hpp"
#include "ink/runtime.hpp"
#include "ink/toy_task.hpp"
#include "ink/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::string config_file;
  std::vector<std::string> assignments;
  int threads = 1;
};

ink::RunConfig load_config(const Globals& g) {
  ink::RunConfig cfg;
  if (!g.config_file.empty()) cfg.merge_file(g.config_file);
  for (const auto& a : g.assignments) cfg.set_assignment(a);
  cfg.set("threads", std::to_string(g.threads));
  return cfg;
}

// The snapshot goes down before any work so a failed run still records its settings.
fs::path prepare_run(const fs::path& run, const std::string& command, const ink::RunConfig& cfg) {
  fs::create_directories(run);
  cfg.write_snapshot(run / (command + ".config"));
  return run;
}

ink::Vocabulary run_vocab(const fs::path& run) {
  const fs::path p = run / "vocab.txt";
  if (!fs::exists(p)) throw ink::InputError(p.string() + ": missing vocabulary; run `ink ingest` first");
  return ink::Vocabulary::load(p);
}

std::vector<ink::SentencePair> load_pairs(const fs::path& path, const ink::Vocabulary& vocab,
                                          const ink::RunConfig& cfg) {
  return ink::load_corpus(path, vocab, cfg.get_bool("ingest.char_level")).pairs;
}

ink::Model load_full(const fs::path& model_path, const std::string& adapters, const ink::Vocabulary& vocab) {
  ink::Model m = ink::load_model(model_path, vocab.hash());
  if (!adapters.empty()) ink::load_adapters(m, adapters, vocab.hash());
  return m;
}

json metrics_json(const ink::DevMetrics& d) {
  return {{"token_accuracy", d.token_accuracy}, {"knn_accuracy", d.knn_accuracy},
          {"knn_accuracy_overall", d.knn_accuracy_overall}};
}

json report_json(const std::string& stage, const ink::EpochReport& r) {
  json j = {{"stage", stage},
            {"epoch", r.epoch},
            {"l_a", r.loss.l_a},
            {"l_i", r.loss.l_i},
            {"l_r", r.loss.l_r},
            {"total", r.loss.total},
            {"datastore_version", r.datastore_version},
            {"refresh_seconds", r.refresh_seconds},
            {"clamp_hits", r.clamp_hits},
            {"steps", r.steps},
            {"learning_rate", r.learning_rate}};
  if (r.dev) j["dev"] = metrics_json(*r.dev);
  return j;
}

class EpochLog {
 public:
  EpochLog(const fs::path& path, std::string stage) : out_(path, std::ios::app), stage_(std::move(stage)) {
    if (!out_) throw ink::InputError("cannot write " + path.string());
  }
  void write(const ink::EpochReport& r) {
    const json j = report_json(stage_, r);
    out_ << j.dump() << '\n';
    out_.flush();
    std::printf("%s epoch %d  loss %.4f", stage_.c_str(), r.epoch, r.loss.total);
    if (r.dev) std::printf("  dev token acc %.4f  kNN acc %.2f%%", r.dev->token_accuracy, r.dev->knn_accuracy);
    std::printf("  datastore v%llu\n", static_cast<unsigned long long>(r.datastore_version));
    std::fflush(stdout);
  }

 private:
  std::ofstream out_;
  std::string stage_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ink::InputError("cannot write " + path.string());
  out << text;
}

// ---- subcommands ---------------------------------------------------------

struct MakeToyArgs {
  std::string out;
  std::uint64_t seed = 2024;
  int domain_train = -1;
};

void cmd_make_toy(const MakeToyArgs& a) {
  ink::ToyTaskOptions opts;
  opts.seed = a.seed;
  if (a.domain_train >= 0) opts.domain_train = a.domain_train;
  const ink::ToyTask task = ink::make_toy_task(opts);
  fs::create_directories(a.out);
  const fs::path out = a.out;
  ink::write_parallel_text(out / "general_train.tsv", task.general_train);
  ink::write_parallel_text(out / "general_dev.tsv", task.general_dev);
  ink::write_parallel_text(out / "domain_train.tsv", task.domain_train);
  ink::write_parallel_text(out / "domain_dev.tsv", task.domain_dev);
  ink::write_parallel_text(out / "domain_test.tsv", task.domain_test);
  std::printf("wrote 5 splits to %s\n", a.out.c_str());
}

struct IngestArgs {
  std::string run;
  std::vector<std::string> inputs;
};

void cmd_ingest(const IngestArgs& a, const ink::RunConfig& cfg) {
  const fs::path run = prepare_run(a.run, "ingest", cfg);
  std::vector<ink::TextPair> all;
  const bool chars = cfg.get_bool("ingest.char_level");
  for (const auto& in : a.inputs) {
    auto pairs = ink::read_parallel_text(in, chars);
    std::printf("%s: %zu pairs\n", in.c_str(), pairs.size());
    all.insert(all.end(), std::make_move_iterator(pairs.begin()), std::make_move_iterator(pairs.end()));
  }
  const ink::Vocabulary vocab =
      ink::build_vocabulary(all, static_cast<std::uint64_t>(cfg.get_int("ingest.min_count")));
  vocab.save(run / "vocab.txt");
  std::printf("vocabulary: %zu tokens -> %s\n", vocab.size(), (run / "vocab.txt").c_str());
}

struct PretrainArgs {
  std::string run, train, dev;
};

void cmd_pretrain(const PretrainArgs& a, const ink::RunConfig& cfg) {
  const fs::path run = prepare_run(a.run, "pretrain", cfg);
  const ink::Vocabulary vocab = run_vocab(run);
  const auto train = load_pairs(a.train, vocab, cfg);
  const auto dev = a.dev.empty() ? std::vector<ink::SentencePair>{} : load_pairs(a.dev, vocab, cfg);
  ink::ModelConfig mc = cfg.model_config(static_cast<int>(vocab.size()));
  fs::create_directories(run / "checkpoints");
  EpochLog log(run / "epochs.jsonl", "pretrain");
  const auto result = ink::pretrain_base(mc, train, dev, cfg.train_config("pretrain"),
                                         [&](const ink::EpochReport& r, const ink::Model& m) {
                                           log.write(r);
                                           char name[64];
                                           std::snprintf(name, sizeof name, "pretrain-%03d.bin", r.epoch);
                                           ink::save_checkpoint(m, vocab.hash(), run / "checkpoints" / name);
                                         });
  ink::save_checkpoint(result.model, vocab.hash(), run / "base.bin");
  std::printf("base model -> %s\n", (run / "base.bin").c_str());
}

struct DatastoreArgs {
  std::string run, model, adapters, corpus, out;
};

void cmd_build_datastore(const DatastoreArgs& a, const ink::RunConfig& cfg) {
  const fs::path run = prepare_run(a.run, "build-datastore", cfg);
  const ink::Vocabulary vocab = run_vocab(run);
  ink::Model m = load_full(a.model, a.adapters, vocab);
  const auto corpus = load_pairs(a.corpus, vocab, cfg);
  const ink::Datastore ds = ink::build_datastore(m, corpus);
  const fs::path out = a.out.empty() ? run / "datastore.bin" : fs::path(a.out);
  ink::save_datastore(ds, out);
  std::printf("datastore: %zu entries, dim %d, version %llu -> %s\n", ds.size(), ds.dim(),
              static_cast<unsigned long long>(ds.version()), out.c_str());
}

struct TrainInkArgs {
  std::string run, base, train, dev;
  bool no_refresh = false, no_li = false, no_lr = false;
};

void cmd_train_ink(const TrainInkArgs& a, ink::RunConfig cfg) {
  if (a.no_refresh) cfg.set("train.refresh", "false");
  if (a.no_li) cfg.set("loss.enable_li", "false");
  if (a.no_lr) cfg.set("loss.enable_lr", "false");
  const fs::path run = prepare_run(a.run, "train-ink", cfg);
  const ink::Vocabulary vocab = run_vocab(run);
  const ink::Model base = ink::load_model(a.base, vocab.hash());
  const auto train = load_pairs(a.train, vocab, cfg);
  const auto dev = a.dev.empty() ? std::vector<ink::SentencePair>{} : load_pairs(a.dev, vocab, cfg);
  fs::create_directories(run / "checkpoints");
  EpochLog log(run / "epochs.jsonl", "train-ink");
  try {
    const auto result = ink::train_ink(base, train, dev, cfg.train_config("train"),
                                       [&](const ink::EpochReport& r, const ink::Model& m) {
                                         log.write(r);
                                         char name[64];
                                         std::snprintf(name, sizeof name, "adapters-%03d.bin", r.epoch);
                                         ink::save_checkpoint(m, vocab.hash(), run / "checkpoints" / name,
                                                              ink::CheckpointContent::adapters_only);
                                       });
    ink::save_checkpoint(result.model, vocab.hash(), run / "adapters.bin", ink::CheckpointContent::adapters_only);
    json summary = {{"best_epoch", result.best_epoch},
                    {"last_datastore_version", result.last_datastore_version},
                    {"initial_dev", metrics_json(result.initial_dev)},
                    {"final_dev", metrics_json(result.final_dev)}};
    write_text(run / "train-ink.json", summary.dump(2) + "\n");
    std::printf("adapters (best epoch %d) -> %s\n", result.best_epoch, (run / "adapters.bin").c_str());
  } catch (const ink::DivergenceError& e) {
    if (e.last_good())
      ink::save_checkpoint(*e.last_good(), vocab.hash(), run / "adapters.last_good.bin",
                           ink::CheckpointContent::adapters_only);
    throw;
  }
}

struct TranslateArgs {
  std::string run, model, adapters, datastore, input, output;
};

std::vector<std::vector<std::string>> read_sources(const fs::path& path, bool chars) {
  std::ifstream in(path);
  if (!in) throw ink::InputError("cannot open " + path.string());
  std::vector<std::vector<std::string>> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto tab = line.find('\t');
    if (tab != std::string::npos) line.resize(tab);
    auto words = ink::tokenize(line, chars);
    if (words.empty()) throw ink::InputError(path.string() + ":" + std::to_string(number) + ": empty source line");
    out.push_back(std::move(words));
  }
  return out;
}

void cmd_translate(const TranslateArgs& a, const ink::RunConfig& cfg) {
  const fs::path run = prepare_run(a.run, "translate", cfg);
  const ink::Vocabulary vocab = run_vocab(run);
  ink::Model m = load_full(a.model, a.adapters, vocab);
  const bool chars = cfg.get_bool("ingest.char_level");
  std::vector<std::vector<ink::TokenId>> sources;
  for (const auto& words : read_sources(a.input, chars)) sources.push_back(vocab.encode(words));
  std::unique_ptr<ink::Datastore> ds;
  ink::ModelScorer::Adjust adjust;
  if (!a.datastore.empty()) {
    ds = std::make_unique<ink::Datastore>(ink::load_datastore(a.datastore));
    adjust = ink::knn_adjust(*ds, static_cast<int>(cfg.get_int("inference.k")), cfg.kernel(),
                             cfg.get_double("inference.lambda"));
  }
  const auto hyps = ink::decode_batch(m, sources, cfg.decode_options(), adjust);
  std::ofstream file;
  if (!a.output.empty()) {
    file.open(a.output);
    if (!file) throw ink::InputError("cannot write " + a.output);
  }
  std::ostream& out = a.output.empty() ? std::cout : file;
  for (const auto& h : hyps) {
    const auto words = vocab.decode(h);
    for (std::size_t i = 0; i < words.size(); ++i) out << (i && !chars ? " " : "") << words[i];
    out << '\n';
  }
}

struct EvalArgs {
  std::string run, model, adapters, datastore_corpus, test;
  bool no_bleu = false;
};

void cmd_eval(const EvalArgs& a, const ink::RunConfig& cfg) {
  const fs::path run = prepare_run(a.run, "eval", cfg);
  const ink::Vocabulary vocab = run_vocab(run);
  ink::Model m = load_full(a.model, a.adapters, vocab);
  const auto store_pairs = load_pairs(a.datastore_corpus, vocab, cfg);
  const auto test = load_pairs(a.test, vocab, cfg);
  const ink::Datastore ds = ink::build_datastore(m, store_pairs);
  const ink::ReferencePositions ref = ink::reference_positions(m, test);
  const std::vector<int> ranks = vocab.frequency_ranks();
  const auto buckets =
      ink::FrequencyBuckets::even(static_cast<int>(ranks.size()), static_cast<int>(cfg.get_int("eval.buckets")));
  const ink::KnnAccuracy knn =
      ink::mean_knn_accuracy(ref.states, ref.gold, ds, static_cast<int>(cfg.get_int("eval.k")), buckets, ranks);
  const double tok = ink::token_accuracy(ref, m.embedding());

  json j = {{"token_accuracy", tok},
            {"knn_accuracy", knn.bucket_mean()},
            {"knn_accuracy_overall", knn.overall},
            {"positions", knn.queries}};
  std::printf("token accuracy   %.4f\n", tok);
  std::printf("kNN accuracy     %.2f%% bucket mean, %.2f%% over %zu positions (k=%lld)\n", knn.bucket_mean(),
              knn.overall, knn.queries, static_cast<long long>(cfg.get_int("eval.k")));
  json per = json::array();
  for (std::size_t b = 0; b < knn.per_bucket.size(); ++b) {
    const int lo = buckets.boundaries[b], hi = buckets.boundaries[b + 1] - 1;
    if (knn.per_bucket[b]) {
      std::printf("  ranks %4d-%-4d  %6.2f%%  (%zu)\n", lo, hi, *knn.per_bucket[b], knn.bucket_queries[b]);
      per.push_back({{"ranks", {lo, hi}}, {"accuracy", *knn.per_bucket[b]}, {"queries", knn.bucket_queries[b]}});
    } else {
      std::printf("  ranks %4d-%-4d  (no queries)\n", lo, hi);
      per.push_back({{"ranks", {lo, hi}}, {"accuracy", nullptr}, {"queries", 0}});
    }
  }
  j["knn_buckets"] = per;
  if (!a.no_bleu) {
    std::vector<std::vector<ink::TokenId>> sources, refs;
    for (const auto& p : test) {
      sources.push_back(p.source);
      refs.push_back(p.target);
    }
    const auto hyps = ink::decode_batch(m, sources, cfg.decode_options());
    const double b = ink::bleu(hyps, refs);
    std::printf("BLEU             %.2f\n", b);
    j["bleu"] = b;
  }
  write_text(run / "eval.json", j.dump(2) + "\n");
}

struct BenchArgs {
  std::string run, model, adapters, datastore_corpus, test;
};

void cmd_bench(const BenchArgs& a, const ink::RunConfig& cfg) {
  const fs::path run = prepare_run(a.run, "bench", cfg);
  const ink::Vocabulary vocab = run_vocab(run);
  ink::Model adapter_model = load_full(a.model, a.adapters, vocab);
  ink::Model knn_model = ink::load_model(a.model, vocab.hash());
  if (knn_model.has_adapters()) knn_model.detach_adapters();
  const auto store_pairs = load_pairs(a.datastore_corpus, vocab, cfg);
  const ink::Datastore ds = ink::build_datastore(knn_model, store_pairs);
  const auto test = load_pairs(a.test, vocab, cfg);
  std::vector<std::vector<ink::TokenId>> sources;
  const auto wanted = static_cast<std::size_t>(cfg.get_int("bench.sentences"));
  for (std::size_t i = 0; i < wanted && !test.empty(); ++i) sources.push_back(test[i % test.size()].source);

  ink::BenchOptions opts;
  opts.batch_sizes = cfg.get_int_list("bench.batch_sizes");
  opts.repetitions = static_cast<int>(cfg.get_int("bench.repetitions"));
  opts.decode = cfg.decode_options();
  opts.knn_k = static_cast<int>(cfg.get_int("inference.k"));
  opts.kernel = cfg.kernel();
  opts.lambda = cfg.get_double("inference.lambda");
  opts.threads = static_cast<int>(cfg.get_int("threads"));
  const auto results = ink::throughput_bench(adapter_model, knn_model, ds, sources, opts);
  const std::string text = ink::format_bench(results);
  std::printf("datastore: %zu entries\n%s", ds.size(), text.c_str());
  json j = json::array();
  for (const auto& r : results)
    j.push_back({{"system", r.system},
                 {"batch_size", r.batch_size},
                 {"sents_per_sec", r.sents_per_sec},
                 {"repetitions", r.repetitions},
                 {"threads", r.threads},
                 {"sentences", r.sentences},
                 {"tokens_generated", r.tokens_generated}});
  write_text(run / "bench.json", j.dump(2) + "\n");
}

struct AblateArgs {
  std::string run, base, train, dev;
};

void cmd_ablate(const AblateArgs& a, const ink::RunConfig& cfg) {
  const fs::path run = prepare_run(a.run, "ablate", cfg);
  const ink::Vocabulary vocab = run_vocab(run);
  const ink::Model base = ink::load_model(a.base, vocab.hash());
  const auto train = load_pairs(a.train, vocab, cfg);
  const auto dev = load_pairs(a.dev, vocab, cfg);
  std::vector<std::uint64_t> seeds;
  for (int s : cfg.get_int_list("ablate.seeds")) seeds.push_back(static_cast<std::uint64_t>(s));
  const ink::AblationTable table = ink::ablation_suite(base, train, dev, cfg.train_config("train"), seeds);
  const std::string text = table.format();
  std::printf("%s", text.c_str());
  write_text(run / "ablation.txt", text);
  for (const auto& arm : table.arms)
    if (arm.error) throw ink::TrainingError("ablation arm " + arm.name + " failed: " + *arm.error);
}

}  // namespace

int main(int argc, char** argv) {
  ink::configure_allocator();
  CLI::App app{"ink: adapter training with kNN-smoothed representations"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_file, "key = value settings file")->check(CLI::ExistingFile);
  app.add_option("--set", g.assignments, "override one setting, key=value (repeatable)");
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();

  MakeToyArgs toy;
  auto* make_toy = app.add_subcommand("make-toy", "write the synthetic two-domain task as TSV splits");
  make_toy->add_option("--out", toy.out, "output directory")->required();
  make_toy->add_option("--seed", toy.seed)->capture_default_str();
  make_toy->add_option("--domain-train", toy.domain_train, "in-domain training pairs");

  IngestArgs ingest;
  auto* ingest_cmd = app.add_subcommand("ingest", "build the run vocabulary from TSV corpora");
  ingest_cmd->add_option("--run", ingest.run, "run directory")->required();
  ingest_cmd->add_option("inputs", ingest.inputs, "source<TAB>target files")->required()->check(CLI::ExistingFile);

  PretrainArgs pre;
  auto* pretrain = app.add_subcommand("pretrain", "train the base model");
  pretrain->add_option("--run", pre.run)->required();
  pretrain->add_option("--train", pre.train)->required()->check(CLI::ExistingFile);
  pretrain->add_option("--dev", pre.dev)->check(CLI::ExistingFile);

  DatastoreArgs dsa;
  auto* build_ds = app.add_subcommand("build-datastore", "encode a corpus into a datastore file");
  build_ds->add_option("--run", dsa.run)->required();
  build_ds->add_option("--model", dsa.model)->required()->check(CLI::ExistingFile);
  build_ds->add_option("--adapters", dsa.adapters)->check(CLI::ExistingFile);
  build_ds->add_option("--corpus", dsa.corpus)->required()->check(CLI::ExistingFile);
  build_ds->add_option("--out", dsa.out, "default <run>/datastore.bin");

  TrainInkArgs ink_args;
  auto* train_ink = app.add_subcommand("train-ink", "train adapters against a refreshed datastore");
  train_ink->add_option("--run", ink_args.run)->required();
  train_ink->add_option("--base", ink_args.base)->required()->check(CLI::ExistingFile);
  train_ink->add_option("--train", ink_args.train)->required()->check(CLI::ExistingFile);
  train_ink->add_option("--dev", ink_args.dev)->check(CLI::ExistingFile);
  train_ink->add_flag("--no-refresh", ink_args.no_refresh, "keep the initial datastore");
  train_ink->add_flag("--no-li", ink_args.no_li, "drop the kNN-to-NMT term");
  train_ink->add_flag("--no-lr", ink_args.no_lr, "drop the representation term");

  TranslateArgs tr;
  auto* translate = app.add_subcommand("translate", "decode source sentences");
  translate->add_option("--run", tr.run)->required();
  translate->add_option("--model", tr.model)->required()->check(CLI::ExistingFile);
  translate->add_option("--adapters", tr.adapters)->check(CLI::ExistingFile);
  translate->add_option("--datastore", tr.datastore, "interpolate with kNN retrieval")->check(CLI::ExistingFile);
  translate->add_option("--input", tr.input, "one source per line; text after a tab is ignored")
      ->required()
      ->check(CLI::ExistingFile);
  translate->add_option("--output", tr.output, "default stdout");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "kNN accuracy per frequency bucket, token accuracy and BLEU");
  eval->add_option("--run", ev.run)->required();
  eval->add_option("--model", ev.model)->required()->check(CLI::ExistingFile);
  eval->add_option("--adapters", ev.adapters)->check(CLI::ExistingFile);
  eval->add_option("--datastore-corpus", ev.datastore_corpus)->required()->check(CLI::ExistingFile);
  eval->add_option("--test", ev.test)->required()->check(CLI::ExistingFile);
  eval->add_flag("--no-bleu", ev.no_bleu, "skip decoding");

  BenchArgs be;
  auto* bench = app.add_subcommand("bench", "decoding throughput: adapters versus kNN interpolation");
  bench->add_option("--run", be.run)->required();
  bench->add_option("--model", be.model)->required()->check(CLI::ExistingFile);
  bench->add_option("--adapters", be.adapters)->required()->check(CLI::ExistingFile);
  bench->add_option("--datastore-corpus", be.datastore_corpus)->required()->check(CLI::ExistingFile);
  bench->add_option("--test", be.test)->required()->check(CLI::ExistingFile);

  AblateArgs ab;
  auto* ablate = app.add_subcommand("ablate", "train every ablation arm over the configured seeds");
  ablate->add_option("--run", ab.run)->required();
  ablate->add_option("--base", ab.base)->required()->check(CLI::ExistingFile);
  ablate->add_option("--train", ab.train)->required()->check(CLI::ExistingFile);
  ablate->add_option("--dev", ab.dev)->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (make_toy->parsed()) {
      cmd_make_toy(toy);
      return 0;
    }
    const ink::RunConfig cfg = load_config(g);
    if (ingest_cmd->parsed()) cmd_ingest(ingest, cfg);
    if (pretrain->parsed()) cmd_pretrain(pre, cfg);
    if (build_ds->parsed()) cmd_build_datastore(dsa, cfg);
    if (train_ink->parsed()) cmd_train_ink(ink_args, cfg);
    if (translate->parsed()) cmd_translate(tr, cfg);
    if (eval->parsed()) cmd_eval(ev, cfg);
    if (bench->parsed()) cmd_bench(be, cfg);
    if (ablate->parsed()) cmd_ablate(ab, cfg);
  } catch (const ink::InputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const ink::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

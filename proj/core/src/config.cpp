#include "ink/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "ink/error.hpp"

namespace ink {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig::RunConfig() {
  values_ = {
      {"seed", "1"},
      {"threads", "1"},
      {"ingest.min_count", "1"},
      {"ingest.char_level", "false"},
      {"model.d_model", "64"},
      {"model.enc_layers", "2"},
      {"model.dec_layers", "2"},
      {"model.heads", "4"},
      {"model.d_ffn", "128"},
      {"model.adapter_inner", "32"},
      {"model.max_len", "64"},
      {"model.adapter_activation", "relu"},
      {"pretrain.epochs", "30"},
      {"pretrain.warmup_steps", "4000"},
      {"pretrain.peak_lr", "0.0005"},
      {"pretrain.batch_tokens", "1024"},
      {"pretrain.patience", "5"},
      {"train.epochs", "10"},
      {"train.warmup_steps", "4000"},
      {"train.peak_lr", "0.0005"},
      {"train.batch_tokens", "1024"},
      {"train.patience", "5"},
      {"train.refresh", "true"},
      {"train.overlapped_refresh", "false"},
      {"train.per_token_mean", "false"},
      {"loss.alpha", "0.2"},
      {"loss.beta", "0.2"},
      {"loss.knn_k", "8"},
      {"loss.clamp_epsilon", "1e-12"},
      {"loss.enable_li", "true"},
      {"loss.enable_lr", "true"},
      {"kernel.kind", "neg_exp_distance"},
      {"kernel.T", "10"},
      {"inference.lambda", "0.5"},
      {"inference.k", "8"},
      {"decode.strategy", "beam"},
      {"decode.beam", "4"},
      {"decode.length_penalty", "0.6"},
      {"decode.max_len", "0"},
      {"eval.k", "8"},
      {"eval.buckets", "4"},
      {"bench.batch_sizes", "8,32,128"},
      {"bench.repetitions", "3"},
      {"bench.sentences", "256"},
      {"ablate.seeds", "1,2,3"},
  };
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  RunConfig c;
  c.merge_file(path);
  return c;
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      set_assignment(line);
    } catch (const InputError& e) {
      throw InputError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  if (it == values_.end()) throw InputError("unknown config key '" + key + "'");
  it->second = value;
}

void RunConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw InputError("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw InputError("unknown config key '" + key + "'");
  return it->second;
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  const std::string& s = get(key);
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw InputError(key + ": expected an integer, got '" + s + "'");
  return v;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& s = get(key);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw InputError(key + ": expected a number, got '" + s + "'");
  return v;
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw InputError(key + ": expected true or false, got '" + s + "'");
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  std::vector<int> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    int v = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || ptr != item.data() + item.size())
      throw InputError(key + ": expected a comma-separated integer list");
    out.push_back(v);
  }
  if (out.empty()) throw InputError(key + ": empty list");
  return out;
}

std::string RunConfig::snapshot() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
  return out.str();
}

void RunConfig::write_snapshot(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << snapshot();
}

ModelConfig RunConfig::model_config(int vocab_size) const {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.d_model = static_cast<int>(get_int("model.d_model"));
  c.n_enc_layers = static_cast<int>(get_int("model.enc_layers"));
  c.n_dec_layers = static_cast<int>(get_int("model.dec_layers"));
  c.n_heads = static_cast<int>(get_int("model.heads"));
  c.d_ffn = static_cast<int>(get_int("model.d_ffn"));
  c.adapter_inner = static_cast<int>(get_int("model.adapter_inner"));
  c.max_len = static_cast<int>(get_int("model.max_len"));
  c.validate();
  return c;
}

AdapterActivation RunConfig::adapter_activation() const {
  const std::string& a = get("model.adapter_activation");
  if (a == "relu") return AdapterActivation::relu;
  if (a == "identity") return AdapterActivation::identity;
  throw InputError("model.adapter_activation: expected relu or identity");
}

KernelSpec RunConfig::kernel() const {
  const std::string& kind = get("kernel.kind");
  KernelSpec k;
  if (kind == "neg_exp_distance") {
    k = KernelSpec::neg_exp_distance(get_double("kernel.T"));
  } else if (kind == "exp_cosine") {
    k = KernelSpec::exp_cosine();
  } else {
    throw InputError("kernel.kind: expected neg_exp_distance or exp_cosine");
  }
  k.validate();
  return k;
}

TrainConfig RunConfig::train_config(const std::string& prefix) const {
  if (prefix != "pretrain" && prefix != "train") throw InputError("train_config: unknown prefix " + prefix);
  TrainConfig c;
  c.seed = static_cast<std::uint64_t>(get_int("seed"));
  c.epochs = static_cast<int>(get_int(prefix + ".epochs"));
  c.warmup_steps = static_cast<int>(get_int(prefix + ".warmup_steps"));
  c.peak_lr = get_double(prefix + ".peak_lr");
  c.batch_tokens = static_cast<int>(get_int(prefix + ".batch_tokens"));
  c.patience = static_cast<int>(get_int(prefix + ".patience"));
  c.weights = LossWeights{get_double("loss.alpha"), get_double("loss.beta")};
  c.knn_k = static_cast<int>(get_int("loss.knn_k"));
  c.kernel = kernel();
  c.clamp_epsilon = get_double("loss.clamp_epsilon");
  c.enable_l_i = get_bool("loss.enable_li");
  c.enable_l_r = get_bool("loss.enable_lr");
  c.refresh_enabled = get_bool("train.refresh");
  c.overlapped_refresh = get_bool("train.overlapped_refresh");
  c.per_token_mean = get_bool("train.per_token_mean");
  c.validate();
  return c;
}

DecodeOptions RunConfig::decode_options() const {
  DecodeOptions d;
  const std::string& s = get("decode.strategy");
  if (s == "beam") {
    d.strategy = DecodeStrategy::beam;
  } else if (s == "greedy") {
    d.strategy = DecodeStrategy::greedy;
  } else {
    throw InputError("decode.strategy: expected beam or greedy");
  }
  d.beam_size = static_cast<int>(get_int("decode.beam"));
  d.length_penalty = get_double("decode.length_penalty");
  d.max_len = static_cast<int>(get_int("decode.max_len"));
  if (d.beam_size < 1) throw InputError("decode.beam must be >= 1");
  if (d.max_len < 0) throw InputError("decode.max_len must be >= 0");
  return d;
}

}  // namespace ink

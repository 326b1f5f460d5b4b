#include "ink/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ink/error.hpp"
#include "ink/random.hpp"
#include "ink/vocabulary.hpp"

namespace ink {

namespace {

Matrix xavier(Rng& rng, int fan_in, int fan_out) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  Matrix m(fan_in, fan_out);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-limit, limit);
  return m;
}

Matrix sinusoidal_positions(int max_len, int d) {
  Matrix pe(max_len, d);
  for (int pos = 0; pos < max_len; ++pos)
    for (int i = 0; i < d; i += 2) {
      const double freq = std::exp(-std::log(10000.0) * i / d);
      pe(pos, i) = std::sin(pos * freq);
      if (i + 1 < d) pe(pos, i + 1) = std::cos(pos * freq);
    }
  return pe;
}

std::string layer_name(const char* stack, int layer) { return std::string(stack) + "." + std::to_string(layer); }

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < Vocabulary::kNumSpecial) throw InputError("model: vocab_size must include the special tokens");
  if (d_model < 1 || n_enc_layers < 1 || n_dec_layers < 1 || n_heads < 1 || d_ffn < 1 || adapter_inner < 1 ||
      max_len < 2)
    throw InputError("model: all dimensions must be positive");
  if (d_model % n_heads != 0) throw InputError("model: n_heads must divide d_model");
}

AdapterLayer AdapterLayer::identity(int d, int inner, std::uint64_t seed) {
  Rng rng(seed);
  AdapterLayer a;
  a.w1 = xavier(rng, d, inner);
  a.b1 = Matrix::Zero(1, inner);
  a.w2 = Matrix::Zero(inner, d);
  a.b2 = Matrix::Zero(1, d);
  a.norm_gain = Matrix::Ones(1, d);
  a.norm_bias = Matrix::Zero(1, d);
  return a;
}

ad::Var adapter_block(ad::Tape& tape, ad::Var z, ad::Var norm_gain, ad::Var norm_bias, ad::Var w1, ad::Var b1,
                      ad::Var w2, ad::Var b2, AdapterActivation activation) {
  const ad::Var normed = tape.layer_norm(z, norm_gain, norm_bias);
  ad::Var inner = tape.add_row(tape.matmul(normed, w1), b1);
  if (activation == AdapterActivation::relu) inner = tape.relu(inner);
  const ad::Var projected = tape.add_row(tape.matmul(inner, w2), b2);
  return tape.add(projected, z);
}

Vector adapter_forward(const AdapterLayer& layer, const Vector& z) {
  const int d = layer.width();
  if (z.size() != d || layer.w2.cols() != d || layer.w2.rows() != layer.inner())
    throw InputError("adapter_forward: width mismatch");
  ad::Tape tape(false);
  Matrix row = z.transpose();
  const ad::Var out =
      adapter_block(tape, tape.constant(row), tape.constant(layer.norm_gain), tape.constant(layer.norm_bias),
                    tape.constant(layer.w1), tape.constant(layer.b1), tape.constant(layer.w2),
                    tape.constant(layer.b2), layer.activation);
  return tape.value(out).row(0).transpose();
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const int d = config_.d_model;
  const int v = config_.vocab_size;
  Matrix emb(v, d);
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  for (Eigen::Index i = 0; i < emb.size(); ++i) emb.data()[i] = rng.normal() * sd;
  emb.row(Vocabulary::kPad).setZero();
  add("embed", std::move(emb));

  auto norm = [&](const std::string& name) {
    add(name + ".g", Matrix::Ones(1, d));
    add(name + ".b", Matrix::Zero(1, d));
  };
  auto proj = [&](const std::string& name, int in, int out) {
    add(name + ".w", xavier(rng, in, out));
    add(name + ".b", Matrix::Zero(1, out));
  };
  auto attn = [&](const std::string& name) {
    for (const char* part : {".q", ".k", ".v", ".o"}) proj(name + part, d, d);
  };
  auto ffn = [&](const std::string& name) {
    proj(name + ".1", d, config_.d_ffn);
    proj(name + ".2", config_.d_ffn, d);
  };
  for (int l = 0; l < config_.n_enc_layers; ++l) {
    const std::string n = layer_name("enc", l);
    norm(n + ".ln1");
    attn(n + ".self");
    norm(n + ".ln2");
    ffn(n + ".ffn");
  }
  norm("enc.ln");
  for (int l = 0; l < config_.n_dec_layers; ++l) {
    const std::string n = layer_name("dec", l);
    norm(n + ".ln1");
    attn(n + ".self");
    norm(n + ".ln2");
    attn(n + ".cross");
    norm(n + ".ln3");
    ffn(n + ".ffn");
  }
  norm("dec.ln");
  positions_ = sinusoidal_positions(config_.max_len, d);
}

ad::Parameter& Model::add(std::string name, Matrix value) {
  if (index_.contains(name)) throw StateError("model: duplicate parameter " + name);
  index_.emplace(name, params_.size());
  params_.emplace_back(std::move(name), std::move(value), true);
  return params_.back();
}

void Model::attach_adapters(std::uint64_t seed) {
  if (has_adapters_) throw StateError("model: adapters already attached");
  const int d = config_.d_model;
  auto attach = [&](const std::string& prefix, std::uint64_t s) {
    AdapterLayer a = AdapterLayer::identity(d, config_.adapter_inner, s);
    add(prefix + ".ln.g", a.norm_gain);
    add(prefix + ".ln.b", a.norm_bias);
    add(prefix + ".w1", a.w1);
    add(prefix + ".b1", a.b1);
    add(prefix + ".w2", a.w2);
    add(prefix + ".b2", a.b2);
  };
  Rng rng(seed);
  for (int l = 0; l < config_.n_enc_layers; ++l) attach("adapter." + layer_name("enc", l), rng.next());
  for (int l = 0; l < config_.n_dec_layers; ++l) attach("adapter." + layer_name("dec", l), rng.next());
  has_adapters_ = true;
}

void Model::detach_adapters() {
  if (!has_adapters_) return;
  std::deque<ad::Parameter> kept;
  std::map<std::string, std::size_t, std::less<>> index;
  for (auto& prm : params_) {
    if (prm.name.starts_with("adapter.")) continue;
    index.emplace(prm.name, kept.size());
    kept.push_back(std::move(prm));
  }
  params_ = std::move(kept);
  index_ = std::move(index);
  has_adapters_ = false;
}

void Model::freeze_base(bool frozen) {
  base_frozen_ = frozen;
  for (auto& prm : params_)
    if (!prm.name.starts_with("adapter.")) prm.trainable = !frozen;
}

std::vector<ad::Parameter*> Model::parameters() {
  std::vector<ad::Parameter*> out;
  for (auto& prm : params_) out.push_back(&prm);
  return out;
}

std::vector<const ad::Parameter*> Model::parameters() const {
  std::vector<const ad::Parameter*> out;
  for (const auto& prm : params_) out.push_back(&prm);
  return out;
}

std::vector<ad::Parameter*> Model::base_parameters() {
  std::vector<ad::Parameter*> out;
  for (auto& prm : params_)
    if (!prm.name.starts_with("adapter.")) out.push_back(&prm);
  return out;
}

std::vector<ad::Parameter*> Model::adapter_parameters() {
  std::vector<ad::Parameter*> out;
  for (auto& prm : params_)
    if (prm.name.starts_with("adapter.")) out.push_back(&prm);
  return out;
}

std::vector<ad::Parameter*> Model::trainable_parameters() {
  std::vector<ad::Parameter*> out;
  for (auto& prm : params_)
    if (prm.trainable) out.push_back(&prm);
  return out;
}

ad::Parameter& Model::parameter(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw InputError("model: no parameter named " + std::string(name));
  return params_[it->second];
}

const ad::Parameter& Model::parameter(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InputError("model: no parameter named " + std::string(name));
  return params_[it->second];
}

bool Model::has_parameter(std::string_view name) const { return index_.contains(name); }

AdapterLayer Model::adapter(bool decoder, int layer) const {
  if (!has_adapters_) throw StateError("model: no adapters attached");
  const std::string prefix = "adapter." + layer_name(decoder ? "dec" : "enc", layer);
  AdapterLayer a;
  a.norm_gain = parameter(prefix + ".ln.g").value;
  a.norm_bias = parameter(prefix + ".ln.b").value;
  a.w1 = parameter(prefix + ".w1").value;
  a.b1 = parameter(prefix + ".b1").value;
  a.w2 = parameter(prefix + ".w2").value;
  a.b2 = parameter(prefix + ".b2").value;
  a.activation = adapter_activation_;
  return a;
}

void Model::check_tokens(std::span<const TokenId> ids, int extra_positions) const {
  for (TokenId t : ids)
    if (t < 0 || t >= config_.vocab_size)
      throw InputError("token id " + std::to_string(t) + " outside vocabulary of size " +
                       std::to_string(config_.vocab_size));
  if (static_cast<int>(ids.size()) + extra_positions > config_.max_len)
    throw LengthError("sequence of " + std::to_string(ids.size() + extra_positions) + " positions exceeds max_len " +
                      std::to_string(config_.max_len));
}

ad::Var Model::p(ad::Tape& tape, const std::string& name) { return tape.leaf(parameter(name)); }

ad::Var Model::linear(ad::Tape& tape, ad::Var x, const std::string& prefix) {
  return tape.add_row(tape.matmul(x, p(tape, prefix + ".w")), p(tape, prefix + ".b"));
}

ad::Var Model::self_attention(ad::Tape& tape, ad::Var x, const std::string& prefix, const ad::Segments& seg,
                              bool causal) {
  const ad::Var q = linear(tape, x, prefix + ".q");
  const ad::Var k = linear(tape, x, prefix + ".k");
  const ad::Var v = linear(tape, x, prefix + ".v");
  const ad::Var att = tape.attention(q, k, v, config_.n_heads, seg, seg, causal);
  return linear(tape, att, prefix + ".o");
}

ad::Var Model::feed_forward(ad::Tape& tape, ad::Var x, const std::string& prefix) {
  return linear(tape, tape.relu(linear(tape, x, prefix + ".1")), prefix + ".2");
}

ad::Var Model::maybe_adapter(ad::Tape& tape, ad::Var x, const std::string& prefix) {
  if (!has_adapters_) return x;
  const std::string a = "adapter." + prefix;
  return adapter_block(tape, x, p(tape, a + ".ln.g"), p(tape, a + ".ln.b"), p(tape, a + ".w1"), p(tape, a + ".b1"),
                       p(tape, a + ".w2"), p(tape, a + ".b2"), adapter_activation_);
}

ad::Var Model::embed(ad::Tape& tape, std::span<const std::vector<TokenId>> sequences, const ad::Segments& seg) {
  std::vector<TokenId> flat;
  flat.reserve(static_cast<std::size_t>(seg.total()));
  for (const auto& s : sequences) flat.insert(flat.end(), s.begin(), s.end());
  const ad::Var tokens = tape.gather_rows(p(tape, "embed"), flat, std::sqrt(static_cast<double>(config_.d_model)));
  Matrix pos(seg.total(), config_.d_model);
  for (int s = 0; s < seg.count(); ++s)
    for (int t = 0; t < seg.length(s); ++t) pos.row(seg.begin(s) + t) = positions_.row(t);
  return tape.add(tokens, tape.constant(std::move(pos)));
}

Model::EncoderOutput Model::encode(ad::Tape& tape, std::span<const std::vector<TokenId>> sources) {
  std::vector<int> lengths;
  for (const auto& s : sources) {
    if (s.empty()) throw InputError("encode: empty source sequence");
    check_tokens(s, 0);
    lengths.push_back(static_cast<int>(s.size()));
  }
  EncoderOutput out;
  out.segments = ad::Segments::from_lengths(lengths);
  ad::Var x = embed(tape, sources, out.segments);
  for (int l = 0; l < config_.n_enc_layers; ++l) {
    const std::string n = layer_name("enc", l);
    x = tape.add(x, self_attention(tape, tape.layer_norm(x, p(tape, n + ".ln1.g"), p(tape, n + ".ln1.b")),
                                   n + ".self", out.segments, false));
    x = tape.add(x, feed_forward(tape, tape.layer_norm(x, p(tape, n + ".ln2.g"), p(tape, n + ".ln2.b")), n + ".ffn"));
    x = maybe_adapter(tape, x, n);
  }
  out.states = tape.layer_norm(x, p(tape, "enc.ln.g"), p(tape, "enc.ln.b"));
  return out;
}

Model::CrossMemory Model::cross_memory(ad::Tape& tape, const EncoderOutput& encoded) {
  CrossMemory mem;
  mem.segments = encoded.segments;
  for (int l = 0; l < config_.n_dec_layers; ++l) {
    const std::string n = layer_name("dec", l) + ".cross";
    mem.keys.push_back(linear(tape, encoded.states, n + ".k"));
    mem.values.push_back(linear(tape, encoded.states, n + ".v"));
  }
  return mem;
}

ad::Var Model::decode_states(ad::Tape& tape, const CrossMemory& memory, std::span<const std::vector<TokenId>> inputs) {
  std::vector<int> lengths;
  for (const auto& s : inputs) {
    if (s.empty()) throw InputError("decode_states: empty decoder input");
    check_tokens(s, 0);
    lengths.push_back(static_cast<int>(s.size()));
  }
  if (static_cast<int>(inputs.size()) != memory.segments.count())
    throw InputError("decode_states: decoder inputs and encoder memory differ in count");
  const ad::Segments seg = ad::Segments::from_lengths(lengths);
  ad::Var x = embed(tape, inputs, seg);
  for (int l = 0; l < config_.n_dec_layers; ++l) {
    const std::string n = layer_name("dec", l);
    x = tape.add(x, self_attention(tape, tape.layer_norm(x, p(tape, n + ".ln1.g"), p(tape, n + ".ln1.b")),
                                   n + ".self", seg, true));
    const ad::Var q = linear(tape, tape.layer_norm(x, p(tape, n + ".ln2.g"), p(tape, n + ".ln2.b")), n + ".cross.q");
    const ad::Var att = tape.attention(q, memory.keys[l], memory.values[l], config_.n_heads, seg, memory.segments, false);
    x = tape.add(x, linear(tape, att, n + ".cross.o"));
    x = tape.add(x, feed_forward(tape, tape.layer_norm(x, p(tape, n + ".ln3.g"), p(tape, n + ".ln3.b")), n + ".ffn"));
    x = maybe_adapter(tape, x, n);
  }
  return tape.layer_norm(x, p(tape, "dec.ln.g"), p(tape, "dec.ln.b"));
}

ad::Var Model::teacher_forced(ad::Tape& tape, std::span<const SentencePair> batch) {
  if (batch.empty()) throw InputError("teacher_forced: empty batch");
  std::vector<std::vector<TokenId>> sources, inputs;
  sources.reserve(batch.size());
  inputs.reserve(batch.size());
  for (const auto& pair : batch) {
    if (pair.source.empty()) throw InputError("teacher_forced: empty source");
    check_tokens(pair.source, 1);
    check_tokens(pair.target, 1);
    auto& src = sources.emplace_back(pair.source);
    src.push_back(Vocabulary::kEos);
    auto& in = inputs.emplace_back();
    in.reserve(pair.target.size() + 1);
    in.push_back(Vocabulary::kBos);
    in.insert(in.end(), pair.target.begin(), pair.target.end());
  }
  const EncoderOutput enc = encode(tape, sources);
  const CrossMemory mem = cross_memory(tape, enc);
  return decode_states(tape, mem, inputs);
}

ad::Var Model::logits(ad::Tape& tape, ad::Var hidden) { return tape.matmul_nt(hidden, p(tape, "embed")); }

std::vector<Representation> forward_teacher_forced(Model& model, const SentencePair& pair,
                                                   std::uint32_t sentence_index) {
  ad::Tape tape(false);
  const ad::Var h = model.teacher_forced(tape, std::span<const SentencePair>(&pair, 1));
  const Matrix& hv = tape.value(h);
  if (!hv.allFinite()) throw NumericError("forward_teacher_forced: non-finite representation");
  std::vector<Representation> reps(static_cast<std::size_t>(hv.rows()));
  for (Eigen::Index t = 0; t < hv.rows(); ++t) {
    reps[t].values = hv.row(t).transpose();
    reps[t].origin = Origin{sentence_index, static_cast<std::uint32_t>(t)};
  }
  return reps;
}

Matrix teacher_forced_states(Model& model, std::span<const SentencePair> pairs, std::size_t batch_pairs) {
  std::size_t rows = 0;
  for (const auto& p : pairs) rows += p.target_positions();
  Matrix out(static_cast<Eigen::Index>(rows), model.config().d_model);
  Eigen::Index row = 0;
  for (std::size_t b = 0; b < pairs.size(); b += batch_pairs) {
    const std::size_t n = std::min(batch_pairs, pairs.size() - b);
    ad::Tape tape(false);
    const ad::Var h = model.teacher_forced(tape, pairs.subspan(b, n));
    const Matrix& hv = tape.value(h);
    if (!hv.allFinite()) throw NumericError("teacher_forced_states: non-finite representation");
    out.middleRows(row, hv.rows()) = hv;
    row += hv.rows();
  }
  return out;
}

void log_softmax_row(const double* logits, double* out, std::size_t n) {
  const double lse = linalg::log_sum_exp(std::span<const double>(logits, n));
  for (std::size_t i = 0; i < n; ++i) out[i] = logits[i] - lse;
}

VocabDistribution output_distribution(const Vector& h, const Matrix& embedding) {
  if (h.size() != embedding.cols()) throw InputError("output_distribution: width mismatch");
  if (!h.allFinite()) throw NumericError("output_distribution: non-finite representation");
  const Eigen::Index v = embedding.rows();
  std::vector<double> logits(static_cast<std::size_t>(v));
  for (Eigen::Index i = 0; i < v; ++i) logits[i] = linalg::dot(h.data(), embedding.row(i).data(), h.size());
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double& l : logits) {
    l = std::exp(l - mx);
    z += l;
  }
  VocabDistribution dist;
  dist.support.resize(static_cast<std::size_t>(v));
  dist.probs.resize(static_cast<std::size_t>(v));
  for (Eigen::Index i = 0; i < v; ++i) {
    dist.support[i] = static_cast<TokenId>(i);
    dist.probs[i] = logits[i] / z;
  }
  return dist;
}

}  // namespace ink

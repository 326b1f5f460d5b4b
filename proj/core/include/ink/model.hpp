#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ink/autodiff.hpp"
#include "ink/types.hpp"

namespace ink {

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int n_heads = 4;
  int d_ffn = 128;
  int adapter_inner = 32;
  // Longest source or target sequence, counting the appended end-of-sentence token.
  int max_len = 64;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class AdapterActivation { relu, identity };

// Residual bottleneck: out = act(f(z) W1 + b1) W2 + b2 + z, f = layer norm.
struct AdapterLayer {
  Matrix w1;         // d x inner
  Matrix b1;         // 1 x inner
  Matrix w2;         // inner x d
  Matrix b2;         // 1 x d
  Matrix norm_gain;  // 1 x d
  Matrix norm_bias;  // 1 x d
  AdapterActivation activation = AdapterActivation::relu;

  int width() const { return static_cast<int>(w1.rows()); }
  int inner() const { return static_cast<int>(w1.cols()); }

  // Unit norm gain, zero shift and biases, zero W2, W1 drawn from `seed`.
  static AdapterLayer identity(int d, int inner, std::uint64_t seed);
};

Vector adapter_forward(const AdapterLayer& layer, const Vector& z);

// Applies an adapter to every row of z on a tape. Shared by Model and adapter_forward.
ad::Var adapter_block(ad::Tape& tape, ad::Var z, ad::Var norm_gain, ad::Var norm_bias, ad::Var w1, ad::Var b1,
                      ad::Var w2, ad::Var b2, AdapterActivation activation);

// Small pre-norm encoder-decoder. One embedding table serves encoder input,
// decoder input and the output projection. Adapters, when attached, sit after
// every encoder and decoder layer.
class Model {
 public:
  struct EncoderOutput {
    ad::Var states;
    ad::Segments segments;
  };
  // Per decoder layer cross-attention keys and values.
  struct CrossMemory {
    std::vector<ad::Var> keys;
    std::vector<ad::Var> values;
    ad::Segments segments;
  };

  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  void attach_adapters(std::uint64_t seed);
  void detach_adapters();
  bool has_adapters() const { return has_adapters_; }
  AdapterActivation adapter_activation() const { return adapter_activation_; }
  void set_adapter_activation(AdapterActivation a) { adapter_activation_ = a; }

  // Frozen base parameters receive no gradient.
  void freeze_base(bool frozen);

  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;
  std::vector<ad::Parameter*> base_parameters();
  std::vector<ad::Parameter*> adapter_parameters();
  std::vector<ad::Parameter*> trainable_parameters();
  ad::Parameter& parameter(std::string_view name);
  const ad::Parameter& parameter(std::string_view name) const;
  bool has_parameter(std::string_view name) const;
  const Matrix& embedding() const { return parameter("embed").value; }

  // Adapter after encoder (decoder=false) or decoder layer `layer` as a value copy.
  AdapterLayer adapter(bool decoder, int layer) const;

  void check_tokens(std::span<const TokenId> ids, int extra_positions) const;

  EncoderOutput encode(ad::Tape& tape, std::span<const std::vector<TokenId>> sources);
  CrossMemory cross_memory(ad::Tape& tape, const EncoderOutput& encoded);
  // Final-layer decoder states for every position of every decoder input.
  ad::Var decode_states(ad::Tape& tape, const CrossMemory& memory, std::span<const std::vector<TokenId>> inputs);
  // Teacher-forced states for a batch; rows are ordered pair-major then by step.
  ad::Var teacher_forced(ad::Tape& tape, std::span<const SentencePair> batch);
  // hidden * embedding^T
  ad::Var logits(ad::Tape& tape, ad::Var hidden);

 private:
  ad::Parameter& add(std::string name, Matrix value);
  ad::Var p(ad::Tape& tape, const std::string& name);
  ad::Var linear(ad::Tape& tape, ad::Var x, const std::string& prefix);
  ad::Var self_attention(ad::Tape& tape, ad::Var x, const std::string& prefix, const ad::Segments& seg, bool causal);
  ad::Var feed_forward(ad::Tape& tape, ad::Var x, const std::string& prefix);
  ad::Var maybe_adapter(ad::Tape& tape, ad::Var x, const std::string& prefix);
  ad::Var embed(ad::Tape& tape, std::span<const std::vector<TokenId>> sequences, const ad::Segments& seg);

  ModelConfig config_;
  std::deque<ad::Parameter> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
  Matrix positions_;
  bool has_adapters_ = false;
  bool base_frozen_ = false;
  AdapterActivation adapter_activation_ = AdapterActivation::relu;
};

// One representation per target position (|target| + 1 with end-of-sentence).
std::vector<Representation> forward_teacher_forced(Model& model, const SentencePair& pair,
                                                   std::uint32_t sentence_index = 0);

// Teacher-forced final states of many pairs without recording gradients.
Matrix teacher_forced_states(Model& model, std::span<const SentencePair> pairs, std::size_t batch_pairs = 64);

// softmax(h^T w) over every embedding row w.
VocabDistribution output_distribution(const Vector& h, const Matrix& embedding);
// log p_nmt for one row of logits, max-subtracted.
void log_softmax_row(const double* logits, double* out, std::size_t n);

}  // namespace ink

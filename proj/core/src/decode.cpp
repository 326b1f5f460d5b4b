#include "ink/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ink/error.hpp"
#include "ink/vocabulary.hpp"

namespace ink {

std::vector<std::vector<TokenId>> greedy_search(StepScorer& scorer, int n_sources, int max_len) {
  std::vector<std::vector<TokenId>> out(static_cast<std::size_t>(n_sources));
  std::vector<int> active(static_cast<std::size_t>(n_sources));
  for (int i = 0; i < n_sources; ++i) active[i] = i;
  for (int step = 0; step < max_len && !active.empty(); ++step) {
    std::vector<std::vector<TokenId>> prefixes;
    prefixes.reserve(active.size());
    for (int s : active) prefixes.push_back(out[s]);
    const Matrix lp = scorer.next_log_probs(active, prefixes);
    std::vector<int> still;
    for (std::size_t r = 0; r < active.size(); ++r) {
      TokenId best = 0;
      for (Eigen::Index v = 1; v < lp.cols(); ++v)
        if (lp(r, v) > lp(r, best)) best = static_cast<TokenId>(v);
      if (best == Vocabulary::kEos) continue;
      out[active[r]].push_back(best);
      still.push_back(active[r]);
    }
    active = std::move(still);
  }
  return out;
}

namespace {

struct Hypothesis {
  std::vector<TokenId> tokens;
  double score = 0.0;
};

struct Finished {
  std::vector<TokenId> tokens;
  double normalized = 0.0;
};

struct Candidate {
  double score;
  double step;
  int hyp;
  TokenId token;
};

double normalize(double score, std::size_t length, double penalty) {
  return score / std::pow(static_cast<double>(std::max<std::size_t>(length, 1)), penalty);
}

}  // namespace

std::vector<std::vector<TokenId>> beam_search(StepScorer& scorer, int n_sources, int beam_size, double length_penalty,
                                              int max_len) {
  if (beam_size < 1) throw InputError("beam_search: beam_size must be >= 1");
  std::vector<std::vector<Hypothesis>> live(static_cast<std::size_t>(n_sources), {Hypothesis{}});
  std::vector<std::vector<Finished>> finished(static_cast<std::size_t>(n_sources));
  std::vector<bool> done(static_cast<std::size_t>(n_sources), false);

  for (int step = 0; step < max_len; ++step) {
    std::vector<int> sources;
    std::vector<std::vector<TokenId>> prefixes;
    for (int s = 0; s < n_sources; ++s) {
      if (done[s]) continue;
      for (const auto& h : live[s]) {
        sources.push_back(s);
        prefixes.push_back(h.tokens);
      }
    }
    if (sources.empty()) break;
    const Matrix lp = scorer.next_log_probs(sources, prefixes);
    const Eigen::Index vocab = lp.cols();

    Eigen::Index row = 0;
    for (int s = 0; s < n_sources; ++s) {
      if (done[s]) continue;
      auto& hyps = live[s];
      std::vector<Candidate> cands;
      cands.reserve(hyps.size() * static_cast<std::size_t>(vocab));
      for (std::size_t i = 0; i < hyps.size(); ++i, ++row)
        for (Eigen::Index v = 0; v < vocab; ++v)
          cands.push_back({hyps[i].score + lp(row, v), lp(row, v), static_cast<int>(i), static_cast<TokenId>(v)});
      const std::size_t keep = std::min(cands.size(), static_cast<std::size_t>(2 * beam_size));
      std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                        [](const Candidate& a, const Candidate& b) {
                          if (a.score != b.score) return a.score > b.score;
                          if (a.step != b.step) return a.step > b.step;
                          if (a.hyp != b.hyp) return a.hyp < b.hyp;
                          return a.token < b.token;
                        });
      std::vector<Hypothesis> next;
      for (std::size_t c = 0; c < keep && next.size() < static_cast<std::size_t>(beam_size); ++c) {
        const Candidate& cand = cands[c];
        if (cand.score == -std::numeric_limits<double>::infinity()) break;
        if (cand.token == Vocabulary::kEos) {
          if (c < static_cast<std::size_t>(beam_size)) {
            const auto& base = hyps[cand.hyp].tokens;
            finished[s].push_back({base, normalize(cand.score, base.size() + 1, length_penalty)});
          }
          continue;
        }
        Hypothesis h{hyps[cand.hyp].tokens, cand.score};
        h.tokens.push_back(cand.token);
        next.push_back(std::move(h));
      }
      hyps = std::move(next);
      if (finished[s].size() >= static_cast<std::size_t>(beam_size) || hyps.empty()) done[s] = true;
    }
  }

  std::vector<std::vector<TokenId>> out(static_cast<std::size_t>(n_sources));
  for (int s = 0; s < n_sources; ++s) {
    auto pool = finished[s];
    if (pool.empty())
      for (const auto& h : live[s]) pool.push_back({h.tokens, normalize(h.score, h.tokens.size(), length_penalty)});
    if (pool.empty()) continue;
    std::size_t best = 0;
    for (std::size_t i = 1; i < pool.size(); ++i)
      if (pool[i].normalized > pool[best].normalized) best = i;
    out[s] = pool[best].tokens;
  }
  return out;
}

ModelScorer::ModelScorer(Model& model, std::span<const std::vector<TokenId>> sources, Adjust adjust)
    : model_(model), adjust_(std::move(adjust)) {
  std::vector<std::vector<TokenId>> with_eos;
  for (const auto& s : sources) {
    if (s.empty()) throw InputError("decode: empty source");
    model_.check_tokens(s, 1);
    with_eos.push_back(s);
    with_eos.back().push_back(Vocabulary::kEos);
  }
  ad::Tape tape(false);
  const Model::EncoderOutput enc = model_.encode(tape, with_eos);
  const Model::CrossMemory mem = model_.cross_memory(tape, enc);
  memory_segments_ = mem.segments;
  for (std::size_t l = 0; l < mem.keys.size(); ++l) {
    keys_.push_back(tape.value(mem.keys[l]));
    values_.push_back(tape.value(mem.values[l]));
  }
}

Matrix ModelScorer::next_log_probs(std::span<const int> sources, std::span<const std::vector<TokenId>> prefixes) {
  const int d = model_.config().d_model;
  std::vector<int> lengths;
  int rows = 0;
  for (int s : sources) {
    lengths.push_back(memory_segments_.length(s));
    rows += memory_segments_.length(s);
  }
  ad::Tape tape(false);
  Model::CrossMemory mem;
  mem.segments = ad::Segments::from_lengths(lengths);
  for (std::size_t l = 0; l < keys_.size(); ++l) {
    Matrix k(rows, d), v(rows, d);
    int r = 0;
    for (int s : sources) {
      const int b = memory_segments_.begin(s), n = memory_segments_.length(s);
      k.middleRows(r, n) = keys_[l].middleRows(b, n);
      v.middleRows(r, n) = values_[l].middleRows(b, n);
      r += n;
    }
    mem.keys.push_back(tape.constant(std::move(k)));
    mem.values.push_back(tape.constant(std::move(v)));
  }
  std::vector<std::vector<TokenId>> inputs;
  inputs.reserve(prefixes.size());
  for (const auto& pre : prefixes) {
    auto& in = inputs.emplace_back();
    in.reserve(pre.size() + 1);
    in.push_back(Vocabulary::kBos);
    in.insert(in.end(), pre.begin(), pre.end());
  }
  const ad::Var states = model_.decode_states(tape, mem, inputs);
  const Matrix& sv = tape.value(states);
  Matrix last(static_cast<Eigen::Index>(inputs.size()), d);
  int offset = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    offset += static_cast<int>(inputs[i].size());
    last.row(static_cast<Eigen::Index>(i)) = sv.row(offset - 1);
  }
  Matrix logits;
  linalg::matmul_nt(last, model_.embedding(), logits);
  Matrix lp(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i)
    log_softmax_row(logits.row(i).data(), lp.row(i).data(), static_cast<std::size_t>(logits.cols()));
  // Padding and begin-of-sentence never appear in an output.
  lp.col(Vocabulary::kPad).setConstant(-std::numeric_limits<double>::infinity());
  lp.col(Vocabulary::kBos).setConstant(-std::numeric_limits<double>::infinity());
  if (adjust_) adjust_(last, lp);
  return lp;
}

std::vector<std::vector<TokenId>> decode_batch(Model& model, std::span<const std::vector<TokenId>> sources,
                                               const DecodeOptions& options, ModelScorer::Adjust adjust) {
  if (sources.empty()) return {};
  const int max_len = options.max_len > 0 ? std::min(options.max_len, model.config().max_len) : model.config().max_len;
  ModelScorer scorer(model, sources, std::move(adjust));
  const int n = static_cast<int>(sources.size());
  if (options.strategy == DecodeStrategy::greedy) return greedy_search(scorer, n, max_len);
  return beam_search(scorer, n, options.beam_size, options.length_penalty, max_len);
}

std::vector<TokenId> decode(Model& model, const std::vector<TokenId>& source, const DecodeOptions& options) {
  if (source.empty()) throw InputError("decode: empty source");
  if (options.strategy == DecodeStrategy::beam && options.beam_size < 1)
    throw InputError("decode: beam_size must be >= 1");
  return decode_batch(model, std::span<const std::vector<TokenId>>(&source, 1), options).front();
}

}  // namespace ink

#include "ink/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "ink/error.hpp"
#include "ink/model.hpp"

namespace ink {

namespace {

struct RowSoftmax {
  std::vector<double> logits;
  std::vector<double> probs;
  double lse = 0.0;
};

RowSoftmax row_softmax(const double* logits, std::size_t n) {
  RowSoftmax r;
  r.logits.assign(logits, logits + n);
  r.lse = linalg::log_sum_exp(r.logits);
  r.probs.resize(n);
  for (std::size_t i = 0; i < n; ++i) r.probs[i] = std::exp(r.logits[i] - r.lse);
  return r;
}

RowSoftmax softmax_of(const Vector& h, const Matrix& embedding) {
  if (h.size() != embedding.cols()) throw InputError("loss: representation width does not match the embedding");
  if (!h.allFinite()) throw NumericError("loss: non-finite representation");
  const Matrix logits = nmt_logits(h.transpose(), embedding);
  return row_softmax(logits.row(0).data(), static_cast<std::size_t>(logits.cols()));
}

void check_gold(TokenId gold, const Matrix& embedding) {
  if (gold < 0 || gold >= embedding.rows()) throw InputError("loss: gold token outside the vocabulary");
}

// KL(target || p_nmt) restricted to the target support, plus its coefficient
// form: d/dh = sum_v coeff_v * w_v.
double kl_term(const VocabDistribution& target, const RowSoftmax& sm, std::vector<double>& coeff, double scale) {
  double mass = 0.0, value = 0.0;
  for (std::size_t i = 0; i < target.support.size(); ++i) {
    const double q = target.probs[i];
    const TokenId y = target.support[i];
    if (y < 0 || static_cast<std::size_t>(y) >= sm.probs.size()) throw InputError("loss: kNN token outside vocabulary");
    mass += q;
    if (q > 0.0) value += q * (std::log(q) - (sm.logits[y] - sm.lse));
    coeff[y] -= scale * q;
  }
  for (std::size_t v = 0; v < coeff.size(); ++v) coeff[v] += scale * mass * sm.probs[v];
  return value;
}

Vector coeff_times_embedding(const std::vector<double>& coeff, const Matrix& embedding) {
  Matrix c(1, static_cast<Eigen::Index>(coeff.size()));
  for (std::size_t i = 0; i < coeff.size(); ++i) c(0, static_cast<Eigen::Index>(i)) = coeff[i];
  Matrix g;
  linalg::matmul(c, embedding, g);
  return g.row(0).transpose();
}

}  // namespace

void LossWeights::validate() const {
  if (!(alpha >= 0.0 && std::isfinite(alpha)) || !(beta >= 0.0 && std::isfinite(beta)))
    throw InputError("loss weights must be finite and non-negative");
}

Matrix nmt_logits(const Matrix& hidden, const Matrix& embedding) {
  Matrix out;
  linalg::matmul_nt(hidden, embedding, out);
  return out;
}

LossGrad loss_align_gold_nmt_grad(const Vector& h, TokenId gold, const Matrix& embedding) {
  check_gold(gold, embedding);
  const RowSoftmax sm = softmax_of(h, embedding);
  std::vector<double> coeff = sm.probs;
  coeff[static_cast<std::size_t>(gold)] -= 1.0;
  return LossGrad{sm.lse - sm.logits[static_cast<std::size_t>(gold)], coeff_times_embedding(coeff, embedding), false};
}

double loss_align_gold_nmt(const Vector& h, TokenId gold, const Matrix& embedding) {
  return loss_align_gold_nmt_grad(h, gold, embedding).value;
}

LossGrad kl_to_nmt_grad(const Vector& h, const VocabDistribution& target, const Matrix& embedding) {
  const RowSoftmax sm = softmax_of(h, embedding);
  std::vector<double> coeff(sm.probs.size(), 0.0);
  const double value = kl_term(target, sm, coeff, 1.0);
  return LossGrad{value, coeff_times_embedding(coeff, embedding), false};
}

LossGrad loss_align_knn_nmt_grad(const Vector& h, const NeighborSet& neighbors, const Matrix& embedding,
                                 const KernelSpec& spec) {
  if (neighbors.empty()) throw InputError("loss_align_knn_nmt: empty neighbor set");
  return kl_to_nmt_grad(h, knn_distribution(neighbors, h, spec), embedding);
}

double loss_align_knn_nmt(const Vector& h, const NeighborSet& neighbors, const Matrix& embedding,
                          const KernelSpec& spec) {
  return loss_align_knn_nmt_grad(h, neighbors, embedding, spec).value;
}

LossGrad loss_align_repr_grad(const Vector& h, const NeighborSet& neighbors, TokenId gold, double clamp_epsilon) {
  if (neighbors.empty()) throw InputError("loss_align_repr: empty neighbor set");
  if (!h.allFinite()) throw NumericError("loss_align_repr: non-finite representation");
  const double hn = h.norm();
  if (hn == 0.0) throw NumericError("loss_align_repr: zero representation");
  const std::size_t k = neighbors.size();
  std::vector<double> cos(k), gold_cos;
  for (std::size_t i = 0; i < k; ++i) {
    const Vector& key = neighbors.items[i].key;
    if (key.size() != h.size()) throw InputError("loss_align_repr: neighbor key width mismatch");
    const double kn = key.norm();
    if (kn == 0.0) throw NumericError("loss_align_repr: zero neighbor key");
    cos[i] = h.dot(key) / (hn * kn);
    if (neighbors.items[i].token == gold) gold_cos.push_back(cos[i]);
  }
  LossGrad out;
  out.grad = Vector::Zero(h.size());
  const double lse_all = linalg::log_sum_exp(cos);
  const double lse_gold = linalg::log_sum_exp(gold_cos);
  const double log_eps = std::log(clamp_epsilon);
  if (gold_cos.empty() || lse_gold - lse_all < log_eps) {
    out.value = -log_eps;
    out.clamped = true;
    return out;
  }
  out.value = lse_all - lse_gold;
  for (std::size_t i = 0; i < k; ++i) {
    const Vector& key = neighbors.items[i].key;
    double dl_dcos = std::exp(cos[i] - lse_all);
    if (neighbors.items[i].token == gold) dl_dcos -= std::exp(cos[i] - lse_gold);
    if (dl_dcos == 0.0) continue;
    out.grad += dl_dcos * (key / (hn * key.norm()) - cos[i] * h / (hn * hn));
  }
  return out;
}

double loss_align_repr(const Vector& h, const NeighborSet& neighbors, TokenId gold, double clamp_epsilon) {
  return loss_align_repr_grad(h, neighbors, gold, clamp_epsilon).value;
}

CombinedLoss combined_loss(const Matrix& hidden, std::span<const LossPosition> positions, const Matrix& embedding,
                           const LossConfig& config) {
  if (positions.empty()) throw InputError("combined_loss: empty batch");
  if (static_cast<std::size_t>(hidden.rows()) != positions.size())
    throw InputError("combined_loss: one hidden row per position is required");
  if (hidden.cols() != embedding.cols()) throw InputError("combined_loss: width mismatch");
  if (!hidden.allFinite()) throw NumericError("combined_loss: non-finite representation");
  config.weights.validate();
  const bool use_i = config.enable_l_i && config.weights.alpha != 0.0;
  const bool use_r = config.enable_l_r && config.weights.beta != 0.0;

  std::vector<std::uint32_t> pairs;
  pairs.reserve(positions.size());
  for (const auto& p : positions) pairs.push_back(p.pair);
  std::sort(pairs.begin(), pairs.end());
  const auto n_pairs = static_cast<double>(std::unique(pairs.begin(), pairs.end()) - pairs.begin());
  const double scale = config.per_token_mean ? 1.0 / static_cast<double>(positions.size()) : 1.0 / n_pairs;

  const Matrix logits = nmt_logits(hidden, embedding);
  const std::size_t vocab = static_cast<std::size_t>(embedding.rows());
  Matrix coeff = Matrix::Zero(hidden.rows(), static_cast<Eigen::Index>(vocab));
  Matrix direct = Matrix::Zero(hidden.rows(), hidden.cols());
  CombinedLoss out;
  LossBreakdown& b = out.breakdown;
  b.positions = positions.size();
  std::vector<double> row_coeff(vocab);

  for (std::size_t r = 0; r < positions.size(); ++r) {
    const LossPosition& pos = positions[r];
    check_gold(pos.gold, embedding);
    const RowSoftmax sm = row_softmax(logits.row(static_cast<Eigen::Index>(r)).data(), vocab);
    std::fill(row_coeff.begin(), row_coeff.end(), 0.0);
    for (std::size_t v = 0; v < vocab; ++v) row_coeff[v] = scale * sm.probs[v];
    row_coeff[static_cast<std::size_t>(pos.gold)] -= scale;
    b.l_a += scale * (sm.lse - sm.logits[static_cast<std::size_t>(pos.gold)]);

    if ((use_i || use_r) && (pos.neighbors == nullptr || pos.neighbors->empty()) && !(use_i && !use_r && pos.knn_target))
      throw InputError("combined_loss: neighbors required for the kNN terms");
    if (use_i) {
      const Vector h = hidden.row(static_cast<Eigen::Index>(r)).transpose();
      const VocabDistribution target =
          pos.knn_target ? *pos.knn_target : knn_distribution(*pos.neighbors, h, config.knn_kernel);
      b.l_i += scale * kl_term(target, sm, row_coeff, scale * config.weights.alpha);
    }
    if (use_r) {
      const Vector h = hidden.row(static_cast<Eigen::Index>(r)).transpose();
      const LossGrad g = loss_align_repr_grad(h, *pos.neighbors, pos.gold, config.clamp_epsilon);
      b.l_r += scale * g.value;
      if (g.clamped) ++b.clamp_hits;
      direct.row(static_cast<Eigen::Index>(r)) += (scale * config.weights.beta) * g.grad.transpose();
    }
    for (std::size_t v = 0; v < vocab; ++v) coeff(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(v)) = row_coeff[v];
  }
  b.total = b.l_a + config.weights.alpha * (use_i ? b.l_i : 0.0) + config.weights.beta * (use_r ? b.l_r : 0.0);
  if (!std::isfinite(b.total)) throw NumericError("combined_loss: non-finite loss");
  linalg::matmul(coeff, embedding, out.grad);
  out.grad += direct;
  return out;
}

}  // namespace ink

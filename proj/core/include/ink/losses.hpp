#pragma once

#include <cstdint>
#include <span>

#include "ink/datastore.hpp"
#include "ink/smoothing.hpp"

namespace ink {

struct LossWeights {
  double alpha = 0.2;
  double beta = 0.2;
  void validate() const;
};

struct LossBreakdown {
  double l_a = 0.0;
  double l_i = 0.0;
  double l_r = 0.0;
  double total = 0.0;
  std::size_t positions = 0;
  std::size_t clamp_hits = 0;
};

// A loss value together with its gradient with respect to the representation.
struct LossGrad {
  double value = 0.0;
  Vector grad;
  bool clamped = false;
};

// Row-wise h * E^T.
Matrix nmt_logits(const Matrix& hidden, const Matrix& embedding);

// KL(one-hot gold || p_nmt) = -log p_nmt(gold).
double loss_align_gold_nmt(const Vector& h, TokenId gold, const Matrix& embedding);
LossGrad loss_align_gold_nmt_grad(const Vector& h, TokenId gold, const Matrix& embedding);

// KL(p_knn || p_nmt) over the neighbour tokens; p_knn is a constant target.
double loss_align_knn_nmt(const Vector& h, const NeighborSet& neighbors, const Matrix& embedding,
                          const KernelSpec& spec);
LossGrad loss_align_knn_nmt_grad(const Vector& h, const NeighborSet& neighbors, const Matrix& embedding,
                                 const KernelSpec& spec);
// Same divergence against an explicit target distribution.
LossGrad kl_to_nmt_grad(const Vector& h, const VocabDistribution& target, const Matrix& embedding);

// KL(one-hot gold || p_knn) with the exp-cosine kernel; neighbour keys are
// constants. A ratio below clamp_epsilon (no neighbour carries the gold token)
// is clamped and reported through LossGrad::clamped.
double loss_align_repr(const Vector& h, const NeighborSet& neighbors, TokenId gold, double clamp_epsilon = 1e-12);
LossGrad loss_align_repr_grad(const Vector& h, const NeighborSet& neighbors, TokenId gold,
                              double clamp_epsilon = 1e-12);

struct LossConfig {
  LossWeights weights;
  KernelSpec knn_kernel;  // kernel of p_knn inside the kNN-to-NMT term
  double clamp_epsilon = 1e-12;
  bool enable_l_i = true;
  bool enable_l_r = true;
  // false: sum over a pair's positions, mean over pairs. true: mean over positions.
  bool per_token_mean = false;
};

struct LossPosition {
  std::uint32_t pair = 0;
  TokenId gold = 0;
  const NeighborSet* neighbors = nullptr;  // required when L^i or L^r is enabled
  // Optional precomputed p_knn for the kNN-to-NMT term; computed from
  // `neighbors` with LossConfig::knn_kernel when absent.
  const VocabDistribution* knn_target = nullptr;
};

struct CombinedLoss {
  LossBreakdown breakdown;
  Matrix grad;  // d total / d hidden, same shape as hidden
};

// Row r of `hidden` belongs to positions[r]. Components in the breakdown use the
// same reduction as the total, so total = l_a + alpha * l_i + beta * l_r.
CombinedLoss combined_loss(const Matrix& hidden, std::span<const LossPosition> positions, const Matrix& embedding,
                           const LossConfig& config);

}  // namespace ink

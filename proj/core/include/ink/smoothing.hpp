#pragma once

#include "ink/datastore.hpp"
#include "ink/types.hpp"

namespace ink {

struct KernelSpec {
  enum class Kind { neg_exp_distance, exp_cosine };

  Kind kind = Kind::neg_exp_distance;
  double temperature = 10.0;  // used by neg_exp_distance only

  static KernelSpec neg_exp_distance(double temperature) { return {Kind::neg_exp_distance, temperature}; }
  static KernelSpec exp_cosine() { return {Kind::exp_cosine, 1.0}; }
  void validate() const;
};

// cos(a, b); throws NumericError if either vector is zero.
double cosine(const Vector& a, const Vector& b);

// log kappa(a, b): -|a - b| / T or cos(a, b).
double log_kernel(const KernelSpec& spec, const Vector& a, const Vector& b);
double kernel_eval(const KernelSpec& spec, const Vector& a, const Vector& b);

// Kernel-weighted vote of the neighbours. Support is the distinct neighbour
// tokens in ascending id order. Weights are summed in log space with max
// subtraction, in an order fixed by (token, weight), so the result does not
// depend on neighbour order.
VocabDistribution knn_distribution(const NeighborSet& neighbors, const Vector& h, const KernelSpec& spec);

// lambda * p_knn + (1 - lambda) * p_nmt on the support of p_nmt.
VocabDistribution interpolate(const VocabDistribution& p_nmt, const VocabDistribution& p_knn, double lambda);

}  // namespace ink

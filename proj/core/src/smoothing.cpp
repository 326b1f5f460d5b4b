#include "ink/smoothing.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "ink/error.hpp"

namespace ink {

void KernelSpec::validate() const {
  if (kind == Kind::neg_exp_distance && !(temperature > 0.0 && std::isfinite(temperature)))
    throw InputError("kernel: temperature must be a positive finite number");
}

double cosine(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw InputError("cosine: width mismatch");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine: undefined for a zero vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

double log_kernel(const KernelSpec& spec, const Vector& a, const Vector& b) {
  spec.validate();
  if (a.size() != b.size()) throw InputError("kernel: width mismatch");
  if (spec.kind == KernelSpec::Kind::exp_cosine) return cosine(a, b);
  return -(a - b).norm() / spec.temperature;
}

double kernel_eval(const KernelSpec& spec, const Vector& a, const Vector& b) { return std::exp(log_kernel(spec, a, b)); }

VocabDistribution knn_distribution(const NeighborSet& neighbors, const Vector& h, const KernelSpec& spec) {
  if (neighbors.empty()) throw InputError("knn_distribution: empty neighbor set");
  std::vector<std::pair<TokenId, double>> weighted;
  weighted.reserve(neighbors.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (const Neighbor& n : neighbors.items) {
    const double lw = log_kernel(spec, h, n.key);
    weighted.emplace_back(n.token, lw);
    mx = std::max(mx, lw);
  }
  std::sort(weighted.begin(), weighted.end());
  VocabDistribution dist;
  double z = 0.0;
  for (std::size_t i = 0; i < weighted.size();) {
    const TokenId tok = weighted[i].first;
    double mass = 0.0;
    for (; i < weighted.size() && weighted[i].first == tok; ++i) mass += std::exp(weighted[i].second - mx);
    dist.support.push_back(tok);
    dist.probs.push_back(mass);
    z += mass;
  }
  for (double& p : dist.probs) p /= z;
  return dist;
}

VocabDistribution interpolate(const VocabDistribution& p_nmt, const VocabDistribution& p_knn, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InputError("interpolate: lambda must lie in [0, 1]");
  if (p_nmt.support.size() != p_nmt.probs.size() || p_knn.support.size() != p_knn.probs.size())
    throw InputError("interpolate: malformed distribution");
  std::map<TokenId, std::size_t> slot;
  for (std::size_t i = 0; i < p_nmt.support.size(); ++i) slot.emplace(p_nmt.support[i], i);
  VocabDistribution out;
  out.support = p_nmt.support;
  out.probs.resize(p_nmt.probs.size());
  for (std::size_t i = 0; i < p_nmt.probs.size(); ++i) out.probs[i] = (1.0 - lambda) * p_nmt.probs[i];
  for (std::size_t i = 0; i < p_knn.support.size(); ++i) {
    auto it = slot.find(p_knn.support[i]);
    if (it == slot.end()) throw InputError("interpolate: kNN support outside the NMT vocabulary");
    out.probs[it->second] += lambda * p_knn.probs[i];
  }
  return out;
}

}  // namespace ink

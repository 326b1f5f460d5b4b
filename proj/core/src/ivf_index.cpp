#include "ink/ivf_index.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "ink/error.hpp"
#include "ink/random.hpp"

namespace ink {

namespace {

double sq_dist(const double* c, const float* k, Eigen::Index d) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < d; ++j) {
    const double diff = c[j] - static_cast<double>(k[j]);
    s += diff * diff;
  }
  return s;
}

int nearest(const Matrix& centroids, const float* key) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const double d = sq_dist(centroids.row(c).data(), key, centroids.cols());
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

}  // namespace

IvfIndex::IvfIndex(const FloatMatrix& keys, const IvfOptions& options) : options_(options) {
  const Eigen::Index n = keys.rows(), d = keys.cols();
  if (n == 0) throw StateError("ivf: cannot index an empty key set");
  if (options.n_list < 1) throw InputError("ivf: n_list must be >= 1");
  const int n_list = static_cast<int>(std::min<Eigen::Index>(options.n_list, n));
  options_.n_list = n_list;

  Rng rng(options.seed);
  std::vector<std::uint32_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0u);
  rng.shuffle(order.begin(), order.end());
  centroids_.resize(n_list, d);
  for (int c = 0; c < n_list; ++c) centroids_.row(c) = keys.row(order[c]).cast<double>();

  std::vector<int> assign(static_cast<std::size_t>(n), 0);
  for (int it = 0; it < options.train_iterations; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) assign[i] = nearest(centroids_, keys.row(i).data());
    Matrix sums = Matrix::Zero(n_list, d);
    std::vector<std::size_t> counts(static_cast<std::size_t>(n_list), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[i]) += keys.row(i).cast<double>();
      ++counts[assign[i]];
    }
    for (int c = 0; c < n_list; ++c) {
      if (counts[c] > 0)
        centroids_.row(c) = sums.row(c) / static_cast<double>(counts[c]);
      else
        centroids_.row(c) = keys.row(order[rng.below(static_cast<std::uint64_t>(n))]).cast<double>();
    }
  }
  lists_.assign(static_cast<std::size_t>(n_list), {});
  for (Eigen::Index i = 0; i < n; ++i)
    lists_[nearest(centroids_, keys.row(i).data())].push_back(static_cast<std::uint32_t>(i));
}

std::vector<std::uint32_t> IvfIndex::candidates(const Vector& query, int n_probe) const {
  if (query.size() != centroids_.cols()) throw InputError("ivf: query width mismatch");
  std::vector<std::pair<double, int>> dist;
  dist.reserve(lists_.size());
  for (Eigen::Index c = 0; c < centroids_.rows(); ++c)
    dist.emplace_back(linalg::squared_l2(query.data(), centroids_.row(c).data(), static_cast<std::size_t>(query.size())),
                      static_cast<int>(c));
  const std::size_t probe = std::min<std::size_t>(static_cast<std::size_t>(std::max(n_probe, 1)), dist.size());
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(probe), dist.end());
  std::vector<std::uint32_t> ids;
  for (std::size_t p = 0; p < probe; ++p) {
    const auto& l = lists_[dist[p].second];
    ids.insert(ids.end(), l.begin(), l.end());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace ink

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "ink/tensor.hpp"

namespace ink {

using FloatMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct IvfOptions {
  int n_list = 64;
  int n_probe = 8;
  int train_iterations = 15;
  std::uint64_t seed = 1234;
};

// Inverted-file index: k-means coarse quantizer, each key stored in the list of
// its nearest centroid. Search scans only the n_probe closest lists.
class IvfIndex {
 public:
  IvfIndex() = default;
  IvfIndex(const FloatMatrix& keys, const IvfOptions& options);

  bool empty() const { return lists_.empty(); }
  const IvfOptions& options() const { return options_; }
  int n_list() const { return static_cast<int>(lists_.size()); }
  const std::vector<std::uint32_t>& list(int i) const { return lists_[static_cast<std::size_t>(i)]; }

  // Entry ids in the n_probe lists nearest to `query`, ascending.
  std::vector<std::uint32_t> candidates(const Vector& query, int n_probe) const;

 private:
  IvfOptions options_;
  Matrix centroids_;
  std::vector<std::vector<std::uint32_t>> lists_;
};

}  // namespace ink

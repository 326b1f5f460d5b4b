#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ink/datastore.hpp"
#include "ink/model.hpp"
#include "ink/random.hpp"

namespace ink::testing {

Matrix random_matrix(Rng& rng, int rows, int cols, double scale = 1.0);
Vector random_vector(Rng& rng, int n, double scale = 1.0);

ModelConfig tiny_config(int vocab = 20, int d = 8);
std::vector<SentencePair> random_pairs(Rng& rng, int count, int vocab, int min_len, int max_len);

// Central difference of f at x along every coordinate.
Vector numeric_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double step = 1e-5);

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
double max_relative_error(const Matrix& a, const Matrix& b, double floor = 1e-6);

NeighborSet random_neighbors(Rng& rng, int k, int dim, int vocab, double scale = 1.0);

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace ink::testing

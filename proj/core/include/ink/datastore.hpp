#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include "ink/ivf_index.hpp"
#include "ink/model.hpp"
#include "ink/types.hpp"

namespace ink {

struct DatastoreEntry {
  Vector key;
  TokenId value = 0;
  Origin origin;
};

struct Neighbor {
  std::uint32_t index = 0;
  TokenId token = 0;
  double distance = 0.0;  // Euclidean, not squared
  Vector key;
};

// Sorted by non-decreasing distance; equal distances keep the lower entry index first.
struct NeighborSet {
  std::vector<Neighbor> items;
  std::optional<Origin> query_position;

  bool empty() const { return items.empty(); }
  std::size_t size() const { return items.size(); }
};

// Immutable snapshot of (key, value, origin) entries. Keys are stored as 32-bit
// floats, the precision of the on-disk format; all distance arithmetic is 64-bit.
class Datastore {
 public:
  Datastore() = default;
  Datastore(std::uint64_t version, FloatMatrix keys, std::vector<TokenId> values, std::vector<Origin> origins);

  std::uint64_t version() const { return version_; }
  int dim() const { return static_cast<int>(keys_.cols()); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  const FloatMatrix& keys() const { return keys_; }
  const std::vector<TokenId>& values() const { return values_; }
  const std::vector<Origin>& origins() const { return origins_; }
  Vector key(std::size_t i) const { return keys_.row(static_cast<Eigen::Index>(i)).cast<double>().transpose(); }
  DatastoreEntry entry(std::size_t i) const;

  // Exact k nearest neighbours by full scan. Entries whose origin equals
  // `exclude` are skipped.
  NeighborSet query(const Vector& h, int k, std::optional<Origin> exclude = std::nullopt) const;

  // Exact results for many queries (rows of `queries`). A float matrix product
  // with a rigorous rounding-error margin preselects candidates, which are then
  // ranked with the same 64-bit distances as query(). `exclude` is empty or has
  // one slot per query.
  std::vector<NeighborSet> query_batch(const Matrix& queries, int k,
                                       std::span<const std::optional<Origin>> exclude = {}) const;

  // Approximate search restricted to the n_probe nearest inverted lists.
  void build_ivf(const IvfOptions& options);
  bool has_ivf() const { return ivf_ != nullptr; }
  NeighborSet query_approximate(const Vector& h, int k, int n_probe,
                                std::optional<Origin> exclude = std::nullopt) const;

 private:
  void check_query(const Vector& h, int k) const;
  NeighborSet finish(std::vector<std::pair<double, std::uint32_t>>& best, int k,
                     std::optional<Origin> exclude) const;

  std::uint64_t version_ = 0;
  FloatMatrix keys_;
  std::vector<TokenId> values_;
  std::vector<Origin> origins_;
  std::vector<double> squared_norms_;
  double max_norm_ = 0.0;
  std::shared_ptr<const IvfIndex> ivf_;
};

// One entry per target position (end-of-sentence included), corpus order then
// step order. The new version is previous_version + 1.
Datastore build_datastore(Model& model, std::span<const SentencePair> corpus, std::uint64_t previous_version = 0);

// Same values and origins as `old`, keys recomputed with the current model.
Datastore refresh_datastore(const Datastore& old, Model& model, std::span<const SentencePair> corpus);

// "INKD" | u32 format version | u32 dim | u64 count | u64 datastore version
// | count*dim f32 keys | count u32 values | count (u32 sentence, u32 step). Little-endian.
void save_datastore(const Datastore& ds, const std::filesystem::path& path);
Datastore load_datastore(const std::filesystem::path& path);

// Handle to the version readers should use. Readers take a shared snapshot;
// publish() swaps in a complete newer version under the lock.
class ActiveDatastore {
 public:
  ActiveDatastore() = default;
  explicit ActiveDatastore(std::shared_ptr<const Datastore> initial) : current_(std::move(initial)) {}

  std::shared_ptr<const Datastore> acquire() const;
  void publish(std::shared_ptr<const Datastore> next);

 private:
  mutable std::mutex mutex_;
  std::shared_ptr<const Datastore> current_;
};

}  // namespace ink

#include "ink/datastore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ink/binary_io.hpp"
#include "ink/error.hpp"
#include "ink/vocabulary.hpp"

namespace ink {

namespace {

constexpr char kMagic[4] = {'I', 'N', 'K', 'D'};
constexpr std::uint32_t kFormatVersion = 1;

double exact_sq_dist(const double* q, const float* k, std::size_t n) {
  double lanes[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t t = 0;
  for (; t + 8 <= n; t += 8)
    for (std::size_t l = 0; l < 8; ++l) {
      const double d = q[t + l] - static_cast<double>(k[t + l]);
      lanes[l] += d * d;
    }
  double s = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
  for (; t < n; ++t) {
    const double d = q[t] - static_cast<double>(k[t]);
    s += d * d;
  }
  return s;
}

using Scored = std::pair<double, std::uint32_t>;

// Keeps the k lexicographically smallest (distance, index) pairs in sorted order.
class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) { items_.reserve(k + 1); }

  bool admits(const Scored& s) const { return items_.size() < k_ || s < items_.back(); }
  void push(const Scored& s) {
    if (!admits(s)) return;
    items_.insert(std::upper_bound(items_.begin(), items_.end(), s), s);
    if (items_.size() > k_) items_.pop_back();
  }
  std::vector<Scored>& items() { return items_; }
  bool full() const { return items_.size() == k_; }
  const Scored& worst() const { return items_.back(); }

 private:
  std::size_t k_;
  std::vector<Scored> items_;
};

}  // namespace

Datastore::Datastore(std::uint64_t version, FloatMatrix keys, std::vector<TokenId> values, std::vector<Origin> origins)
    : version_(version), keys_(std::move(keys)), values_(std::move(values)), origins_(std::move(origins)) {
  if (static_cast<std::size_t>(keys_.rows()) != values_.size() || values_.size() != origins_.size())
    throw InputError("datastore: keys, values and origins differ in length");
  if (!keys_.allFinite()) throw NumericError("datastore: non-finite key");
  for (TokenId v : values_)
    if (v < 0) throw InputError("datastore: negative token id");
  squared_norms_.resize(values_.size());
  for (std::size_t i = 0; i < values_.size(); ++i) {
    const double n2 = keys_.row(static_cast<Eigen::Index>(i)).cast<double>().squaredNorm();
    squared_norms_[i] = n2;
    max_norm_ = std::max(max_norm_, std::sqrt(n2));
  }
}

DatastoreEntry Datastore::entry(std::size_t i) const {
  if (i >= size()) throw InputError("datastore: entry index out of range");
  return DatastoreEntry{key(i), values_[i], origins_[i]};
}

void Datastore::check_query(const Vector& h, int k) const {
  if (empty()) throw StateError("datastore: query against an empty datastore");
  if (h.size() != keys_.cols()) throw InputError("datastore: query width does not match datastore dim");
  if (k < 1) throw InputError("datastore: k must be >= 1");
}

NeighborSet Datastore::finish(std::vector<Scored>& best, int k, std::optional<Origin> exclude) const {
  std::sort(best.begin(), best.end());
  if (best.size() > static_cast<std::size_t>(k)) best.resize(static_cast<std::size_t>(k));
  NeighborSet out;
  out.query_position = exclude;
  out.items.reserve(best.size());
  for (const auto& [d2, idx] : best) out.items.push_back(Neighbor{idx, values_[idx], std::sqrt(d2), key(idx)});
  return out;
}

NeighborSet Datastore::query(const Vector& h, int k, std::optional<Origin> exclude) const {
  check_query(h, k);
  TopK top(static_cast<std::size_t>(k));
  const std::size_t d = static_cast<std::size_t>(keys_.cols());
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (exclude && origins_[i] == *exclude) continue;
    top.push({exact_sq_dist(h.data(), keys_.row(static_cast<Eigen::Index>(i)).data(), d), static_cast<std::uint32_t>(i)});
  }
  return finish(top.items(), k, exclude);
}

std::vector<NeighborSet> Datastore::query_batch(const Matrix& queries, int k,
                                                std::span<const std::optional<Origin>> exclude) const {
  if (queries.rows() == 0) return {};
  check_query(queries.row(0).transpose(), k);
  if (!exclude.empty() && exclude.size() != static_cast<std::size_t>(queries.rows()))
    throw InputError("datastore: exclude list must match the number of queries");
  const Eigen::Index n = keys_.rows();
  const std::size_t d = static_cast<std::size_t>(keys_.cols());
  constexpr double kUnit = 0x1.0p-24;
  const double dot_bound = 2.0 * (static_cast<double>(d) + 2.0) * kUnit;

  std::vector<NeighborSet> results(static_cast<std::size_t>(queries.rows()));
  constexpr Eigen::Index kBlock = 64;
  FloatMatrix scores;
  std::vector<double> approx(static_cast<std::size_t>(n));
  std::vector<Scored> cands;
  for (Eigen::Index b0 = 0; b0 < queries.rows(); b0 += kBlock) {
    const Eigen::Index nb = std::min(kBlock, queries.rows() - b0);
    const FloatMatrix qf = queries.middleRows(b0, nb).cast<float>();
    scores.noalias() = qf * keys_.transpose();
    for (Eigen::Index qi = 0; qi < nb; ++qi) {
      const Eigen::Index row = b0 + qi;
      const Vector q = queries.row(row).transpose();
      if (!q.allFinite()) throw NumericError("datastore: non-finite query");
      const std::optional<Origin> ex = exclude.empty() ? std::nullopt : exclude[static_cast<std::size_t>(row)];
      const double qn2 = q.squaredNorm();
      const double margin =
          2.0 * (dot_bound * std::sqrt(qn2) * max_norm_ + 1e-12 * (qn2 + max_norm_ * max_norm_)) + 1e-300;

      TopK top(static_cast<std::size_t>(k));
      const float* srow = scores.row(qi).data();
      for (Eigen::Index j = 0; j < n; ++j) {
        const double a = qn2 + squared_norms_[j] - 2.0 * static_cast<double>(srow[j]);
        approx[j] = a;
        if (ex && origins_[j] == *ex) {
          approx[j] = std::numeric_limits<double>::infinity();
          continue;
        }
        top.push({a, static_cast<std::uint32_t>(j)});
      }
      const double threshold =
          top.full() ? top.worst().first + margin : std::numeric_limits<double>::infinity();
      cands.clear();
      for (Eigen::Index j = 0; j < n; ++j) {
        if (approx[j] > threshold || approx[j] == std::numeric_limits<double>::infinity()) continue;
        cands.push_back({exact_sq_dist(q.data(), keys_.row(j).data(), d), static_cast<std::uint32_t>(j)});
      }
      results[static_cast<std::size_t>(row)] = finish(cands, k, ex);
    }
  }
  return results;
}

void Datastore::build_ivf(const IvfOptions& options) {
  if (empty()) throw StateError("datastore: cannot index an empty datastore");
  ivf_ = std::make_shared<const IvfIndex>(keys_, options);
}

NeighborSet Datastore::query_approximate(const Vector& h, int k, int n_probe, std::optional<Origin> exclude) const {
  check_query(h, k);
  if (!ivf_) throw StateError("datastore: approximate query requires build_ivf()");
  TopK top(static_cast<std::size_t>(k));
  const std::size_t d = static_cast<std::size_t>(keys_.cols());
  for (std::uint32_t i : ivf_->candidates(h, n_probe)) {
    if (exclude && origins_[i] == *exclude) continue;
    top.push({exact_sq_dist(h.data(), keys_.row(i).data(), d), i});
  }
  return finish(top.items(), k, exclude);
}

Datastore build_datastore(Model& model, std::span<const SentencePair> corpus, std::uint64_t previous_version) {
  if (corpus.empty()) throw InputError("build_datastore: empty corpus");
  const Matrix states = teacher_forced_states(model, corpus);
  std::vector<TokenId> values;
  std::vector<Origin> origins;
  values.reserve(static_cast<std::size_t>(states.rows()));
  origins.reserve(static_cast<std::size_t>(states.rows()));
  for (std::size_t s = 0; s < corpus.size(); ++s) {
    const auto& tgt = corpus[s].target;
    for (std::size_t t = 0; t <= tgt.size(); ++t) {
      values.push_back(t < tgt.size() ? tgt[t] : Vocabulary::kEos);
      origins.push_back(Origin{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(t)});
    }
  }
  return Datastore(previous_version + 1, states.cast<float>(), std::move(values), std::move(origins));
}

Datastore refresh_datastore(const Datastore& old, Model& model, std::span<const SentencePair> corpus) {
  std::size_t positions = 0;
  for (const auto& p : corpus) positions += p.target_positions();
  if (positions != old.size())
    throw StateError("refresh_datastore: corpus has " + std::to_string(positions) + " target positions, datastore has " +
                     std::to_string(old.size()));
  Datastore fresh = build_datastore(model, corpus, old.version());
  if (fresh.values() != old.values() || fresh.origins() != old.origins())
    throw StateError("refresh_datastore: corpus targets differ from the datastore being refreshed");
  return fresh;
}

void save_datastore(const Datastore& ds, const std::filesystem::path& path) {
  io::BinaryWriter w(path);
  w.bytes(kMagic, 4);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(ds.dim()));
  w.u64(ds.size());
  w.u64(ds.version());
  const FloatMatrix& keys = ds.keys();
  for (Eigen::Index i = 0; i < keys.size(); ++i) w.f32(keys.data()[i]);
  for (TokenId v : ds.values()) w.u32(static_cast<std::uint32_t>(v));
  for (const Origin& o : ds.origins()) {
    w.u32(o.sentence);
    w.u32(o.step);
  }
  w.close();
}

Datastore load_datastore(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::string(magic, 4) != std::string(kMagic, 4)) throw FormatError(path.string() + ": not a datastore file");
  const std::uint32_t format = r.u32();
  if (format != kFormatVersion) throw FormatError(path.string() + ": unsupported datastore format " + std::to_string(format));
  const std::uint32_t dim = r.u32();
  const std::uint64_t count = r.u64();
  const std::uint64_t version = r.u64();
  if (dim == 0) throw FormatError(path.string() + ": zero dimension");
  const std::uint64_t expected = count * dim * 4 + count * 4 + count * 8;
  if (count > (std::uint64_t{1} << 40) || r.remaining() != expected)
    throw FormatError(path.string() + ": truncated or oversized datastore body");
  FloatMatrix keys(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < keys.size(); ++i) keys.data()[i] = r.f32();
  std::vector<TokenId> values(count);
  for (auto& v : values) {
    const std::uint32_t raw = r.u32();
    if (raw > static_cast<std::uint32_t>(std::numeric_limits<TokenId>::max()))
      throw FormatError(path.string() + ": token id out of range");
    v = static_cast<TokenId>(raw);
  }
  std::vector<Origin> origins(count);
  for (auto& o : origins) {
    o.sentence = r.u32();
    o.step = r.u32();
  }
  try {
    return Datastore(version, std::move(keys), std::move(values), std::move(origins));
  } catch (const NumericError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::shared_ptr<const Datastore> ActiveDatastore::acquire() const {
  std::lock_guard lock(mutex_);
  return current_;
}

void ActiveDatastore::publish(std::shared_ptr<const Datastore> next) {
  if (!next) throw InputError("ActiveDatastore: cannot publish a null datastore");
  std::lock_guard lock(mutex_);
  if (current_ && next->version() <= current_->version())
    throw StateError("ActiveDatastore: published version must be newer than the active one");
  current_ = std::move(next);
}

}  // namespace ink

#include "ink/toy_task.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ink/error.hpp"
#include "ink/random.hpp"

namespace ink {

namespace {

std::string word(char prefix, int i) { return std::string(1, prefix) + std::to_string(i); }

// Sampler over [0, n) with probability proportional to 1 / (rank + 1)^s under a
// fixed random rank order.
class Zipf {
 public:
  Zipf(int n, double s, Rng& rng) : cdf_(static_cast<std::size_t>(n)), ids_(static_cast<std::size_t>(n)) {
    std::iota(ids_.begin(), ids_.end(), 0);
    rng.shuffle(ids_.begin(), ids_.end());
    double total = 0.0;
    for (int r = 0; r < n; ++r) {
      total += 1.0 / std::pow(r + 1.0, s);
      cdf_[static_cast<std::size_t>(r)] = total;
    }
    for (double& c : cdf_) c /= total;
  }

  int draw(Rng& rng) const {
    const double u = rng.uniform();
    const auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
    const auto r = std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
    return ids_[r];
  }

 private:
  std::vector<double> cdf_;
  std::vector<int> ids_;
};

struct Lexicon {
  std::vector<int> general_primary;
  std::vector<int> domain_primary;  // differs from general for remapped words
  std::vector<int> secondary;
};

Lexicon make_lexicon(const ToyTaskOptions& o, Rng& rng) {
  const int n = o.core_words;
  Lexicon lex;
  lex.general_primary.resize(static_cast<std::size_t>(n));
  std::iota(lex.general_primary.begin(), lex.general_primary.end(), 0);
  rng.shuffle(lex.general_primary.begin(), lex.general_primary.end());
  lex.domain_primary = lex.general_primary;
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order.begin(), order.end());
  const int remapped = static_cast<int>(std::lround(o.remap_fraction * n));
  // Rotate translations among the remapped words so every remapped word gets
  // a different target.
  for (int i = 0; i < remapped; ++i) {
    const int from = order[static_cast<std::size_t>(i)];
    const int to = order[static_cast<std::size_t>((i + 1) % remapped)];
    lex.domain_primary[static_cast<std::size_t>(from)] = lex.general_primary[static_cast<std::size_t>(to)];
  }
  lex.secondary.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) lex.secondary[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(n));
  return lex;
}

class Generator {
 public:
  Generator(const ToyTaskOptions& o) : o_(o), rng_(o.seed), lex_(make_lexicon(o, rng_)), core_(o.core_words, o.zipf_exponent, rng_),
        domain_(std::max(o.domain_words, 1), o.zipf_exponent, rng_) {}

  std::vector<TextPair> pairs(bool domain, int count, Rng& rng) const {
    std::vector<TextPair> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int s = 0; s < count; ++s) {
      TextPair p;
      const int len = o_.min_len + static_cast<int>(rng.below(static_cast<std::uint64_t>(o_.max_len - o_.min_len + 1)));
      for (int t = 0; t < len; ++t) {
        if (domain && o_.domain_words > 0 && rng.uniform() < o_.domain_word_rate) {
          const int w = domain_.draw(rng);
          p.source.push_back(word('b', w));
          p.target.push_back(word('y', w));
          continue;
        }
        const int w = core_.draw(rng);
        const auto& primary = domain ? lex_.domain_primary : lex_.general_primary;
        const int tgt = rng.uniform() < o_.ambiguity ? lex_.secondary[static_cast<std::size_t>(w)]
                                                     : primary[static_cast<std::size_t>(w)];
        p.source.push_back(word('a', w));
        p.target.push_back(word('x', tgt));
      }
      out.push_back(std::move(p));
    }
    return out;
  }

 private:
  ToyTaskOptions o_;
  Rng rng_;
  Lexicon lex_;
  Zipf core_;
  Zipf domain_;
};

}  // namespace

void ToyTaskOptions::validate() const {
  if (core_words < 2 || domain_words < 0) throw InputError("toy task: need at least two core words");
  if (remap_fraction < 0.0 || remap_fraction > 1.0 || ambiguity < 0.0 || ambiguity > 1.0 || domain_word_rate < 0.0 ||
      domain_word_rate > 1.0)
    throw InputError("toy task: rates must lie in [0, 1]");
  if (min_len < 1 || max_len < min_len) throw InputError("toy task: invalid length range");
  if (general_train < 0 || general_dev < 0 || domain_train < 0 || domain_dev < 0 || domain_test < 0)
    throw InputError("toy task: split sizes must be non-negative");
}

std::vector<TextPair> ToyTask::all() const {
  std::vector<TextPair> out;
  for (const auto* part : {&general_train, &general_dev, &domain_train, &domain_dev, &domain_test})
    out.insert(out.end(), part->begin(), part->end());
  return out;
}

ToyTask make_toy_task(const ToyTaskOptions& options) {
  options.validate();
  const Generator gen(options);
  Rng rng(options.seed ^ 0x5851F42D4C957F2DULL);
  ToyTask task;
  task.general_train = gen.pairs(false, options.general_train, rng);
  task.general_dev = gen.pairs(false, options.general_dev, rng);
  task.domain_train = gen.pairs(true, options.domain_train, rng);
  task.domain_dev = gen.pairs(true, options.domain_dev, rng);
  task.domain_test = gen.pairs(true, options.domain_test, rng);
  return task;
}

std::vector<TextPair> make_domain_pairs(const ToyTaskOptions& options, int count, std::uint64_t stream) {
  options.validate();
  const Generator gen(options);
  Rng rng(options.seed ^ (0xD1B54A32D192ED03ULL * (stream + 1)));
  return gen.pairs(true, count, rng);
}

}  // namespace ink

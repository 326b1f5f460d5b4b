#include "ink/vocabulary.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "ink/error.hpp"
#include "ink/types.hpp"

namespace ink {

double VocabDistribution::prob(TokenId token) const {
  for (std::size_t i = 0; i < support.size(); ++i)
    if (support[i] == token) return probs[i];
  return 0.0;
}

double VocabDistribution::total() const { return std::accumulate(probs.begin(), probs.end(), 0.0); }

Vocabulary::Vocabulary() {
  append("<pad>", 0);
  append("<s>", 0);
  append("</s>", 0);
  append("<unk>", 0);
}

TokenId Vocabulary::append(std::string token, std::uint64_t count) {
  if (index_.contains(token)) throw InputError("vocabulary: duplicate token '" + token + "'");
  const auto id = static_cast<TokenId>(tokens_.size());
  index_.emplace(token, id);
  tokens_.push_back(std::move(token));
  frequency_.push_back(count);
  return id;
}

Vocabulary Vocabulary::from_counts(const std::unordered_map<std::string, std::uint64_t>& counts,
                                   std::uint64_t min_count) {
  std::vector<std::pair<std::string, std::uint64_t>> kept;
  for (const auto& [tok, c] : counts)
    if (c >= min_count && tok != "<pad>" && tok != "<s>" && tok != "</s>" && tok != "<unk>") kept.emplace_back(tok, c);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v;
  for (auto& [tok, c] : kept) v.append(std::move(tok), c);
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open vocabulary file " + path.string());
  Vocabulary v;
  v.tokens_.clear();
  v.frequency_.clear();
  v.index_.clear();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      throw InputError("vocabulary " + path.string() + " line " + std::to_string(lineno) + ": expected token<TAB>count");
    std::uint64_t count = 0;
    try {
      count = std::stoull(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw InputError("vocabulary " + path.string() + " line " + std::to_string(lineno) + ": bad count");
    }
    v.append(line.substr(0, tab), count);
  }
  static const char* kSpecial[] = {"<pad>", "<s>", "</s>", "<unk>"};
  for (int i = 0; i < kNumSpecial; ++i)
    if (v.tokens_.size() <= static_cast<std::size_t>(i) || v.tokens_[i] != kSpecial[i])
      throw InputError("vocabulary " + path.string() + ": special tokens must occupy ids 0..3");
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write vocabulary file " + path.string());
  for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << frequency_[i] << '\n';
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return index_.contains(std::string(token)); }

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw InputError("token id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocabulary::frequency(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw InputError("token id out of range");
  return frequency_[static_cast<std::size_t>(id)];
}

void Vocabulary::set_frequency(TokenId id, std::uint64_t count) {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw InputError("token id out of range");
  frequency_[static_cast<std::size_t>(id)] = count;
}

std::vector<int> Vocabulary::frequency_ranks() const {
  std::vector<TokenId> order;
  for (std::size_t i = kNumSpecial; i < tokens_.size(); ++i) order.push_back(static_cast<TokenId>(i));
  std::stable_sort(order.begin(), order.end(),
                   [&](TokenId a, TokenId b) { return frequency_[a] > frequency_[b]; });
  for (TokenId s = 0; s < kNumSpecial; ++s) order.push_back(s);
  std::vector<int> rank(tokens_.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = static_cast<int>(r);
  return rank;
}

std::vector<TokenId> Vocabulary::encode(const std::vector<std::string>& words) const {
  std::vector<TokenId> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(id(w));
  return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<TokenId>& ids) const {
  std::vector<std::string> words;
  words.reserve(ids.size());
  for (TokenId t : ids) words.push_back(token(t));
  return words;
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 1099511628211ull;
  };
  for (const auto& t : tokens_) {
    for (unsigned char c : t) mix(c);
    mix(0);
  }
  return h;
}

}  // namespace ink

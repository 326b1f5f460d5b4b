#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ink/tensor.hpp"

namespace ink {

// Dense token ids with the four special tokens at 0..3. Regular tokens follow in
// descending corpus frequency, so a higher id means a rarer token.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr int kNumSpecial = 4;

  Vocabulary();

  // Tokens with count >= min_count, ordered by count descending then by string.
  static Vocabulary from_counts(const std::unordered_map<std::string, std::uint64_t>& counts, std::uint64_t min_count);
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::uint64_t frequency(TokenId id) const;
  void set_frequency(TokenId id, std::uint64_t count);

  // 0 for the most frequent token; specials rank after every regular token.
  std::vector<int> frequency_ranks() const;

  std::vector<TokenId> encode(const std::vector<std::string>& words) const;
  std::vector<std::string> decode(const std::vector<TokenId>& ids) const;

  // FNV-1a over tokens in id order; stored in checkpoints.
  std::uint64_t hash() const;

 private:
  TokenId append(std::string token, std::uint64_t count);

  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> frequency_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace ink

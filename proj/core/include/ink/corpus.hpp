#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ink/types.hpp"
#include "ink/vocabulary.hpp"

namespace ink {

struct TextPair {
  std::vector<std::string> source;
  std::vector<std::string> target;
  std::size_t line = 0;  // 1-based, 0 when not read from a file
};

struct IngestOptions {
  std::uint64_t min_count = 1;
  // One token per non-space character instead of whitespace-separated words.
  bool char_level = false;
};

struct ParallelCorpus {
  std::vector<SentencePair> pairs;
  std::filesystem::path path;
  std::vector<std::size_t> lines;
};

std::vector<std::string> tokenize(const std::string& text, bool char_level);

// One "source<TAB>target" pair per line. Blank lines are skipped; any other
// malformed line raises an InputError naming the file and line.
std::vector<TextPair> read_parallel_text(const std::filesystem::path& path, bool char_level = false);
void write_parallel_text(const std::filesystem::path& path, const std::vector<TextPair>& pairs);

Vocabulary build_vocabulary(const std::vector<TextPair>& pairs, std::uint64_t min_count);
// Out-of-vocabulary words map to the unknown token.
ParallelCorpus encode_corpus(const std::vector<TextPair>& pairs, const Vocabulary& vocab);

struct IngestResult {
  ParallelCorpus corpus;
  Vocabulary vocab;
};

IngestResult ingest(const std::filesystem::path& path, const IngestOptions& options = {});
ParallelCorpus load_corpus(const std::filesystem::path& path, const Vocabulary& vocab, bool char_level = false);

}  // namespace ink

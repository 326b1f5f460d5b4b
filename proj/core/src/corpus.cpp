#include "ink/corpus.hpp"

#include <fstream>
#include <unordered_map>

#include "ink/error.hpp"

namespace ink {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text, bool char_level) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (is_space(text[i])) {
      ++i;
      continue;
    }
    if (char_level) {
      const std::size_t n = std::min(utf8_length(static_cast<unsigned char>(text[i])), text.size() - i);
      out.push_back(text.substr(i, n));
      i += n;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    out.push_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::vector<TextPair> read_parallel_text(const std::filesystem::path& path, bool char_level) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open corpus " + path.string());
  std::vector<TextPair> pairs;
  std::string line;
  std::size_t number = 0;
  auto fail = [&](const std::string& why) {
    throw InputError(path.string() + ":" + std::to_string(number) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) fail("line " + std::to_string(number) + " has no tab between source and target");
    if (line.find('\t', tab + 1) != std::string::npos)
      fail("line " + std::to_string(number) + " has more than one tab");
    TextPair p;
    p.source = tokenize(line.substr(0, tab), char_level);
    p.target = tokenize(line.substr(tab + 1), char_level);
    p.line = number;
    if (p.source.empty()) fail("line " + std::to_string(number) + " has an empty source side");
    if (p.target.empty()) fail("line " + std::to_string(number) + " has an empty target side");
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void write_parallel_text(const std::filesystem::path& path, const std::vector<TextPair>& pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  auto join = [&](const std::vector<std::string>& words) {
    for (std::size_t i = 0; i < words.size(); ++i) out << (i ? " " : "") << words[i];
  };
  for (const auto& p : pairs) {
    join(p.source);
    out << '\t';
    join(p.target);
    out << '\n';
  }
  if (!out) throw InputError("failed writing " + path.string());
}

Vocabulary build_vocabulary(const std::vector<TextPair>& pairs, std::uint64_t min_count) {
  std::unordered_map<std::string, std::uint64_t> counts;
  for (const auto& p : pairs) {
    for (const auto& w : p.source) ++counts[w];
    for (const auto& w : p.target) ++counts[w];
  }
  return Vocabulary::from_counts(counts, min_count);
}

ParallelCorpus encode_corpus(const std::vector<TextPair>& pairs, const Vocabulary& vocab) {
  ParallelCorpus corpus;
  corpus.pairs.reserve(pairs.size());
  for (const auto& p : pairs) {
    corpus.pairs.push_back(SentencePair{vocab.encode(p.source), vocab.encode(p.target)});
    corpus.lines.push_back(p.line);
  }
  return corpus;
}

IngestResult ingest(const std::filesystem::path& path, const IngestOptions& options) {
  const std::vector<TextPair> text = read_parallel_text(path, options.char_level);
  if (text.empty()) throw InputError(path.string() + ": no sentence pairs");
  IngestResult r{{}, build_vocabulary(text, options.min_count)};
  r.corpus = encode_corpus(text, r.vocab);
  r.corpus.path = path;
  return r;
}

ParallelCorpus load_corpus(const std::filesystem::path& path, const Vocabulary& vocab, bool char_level) {
  ParallelCorpus c = encode_corpus(read_parallel_text(path, char_level), vocab);
  c.path = path;
  return c;
}

}  // namespace ink

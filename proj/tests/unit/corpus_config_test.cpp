#include <gtest/gtest.h>

#include <fstream>

#include "ink/config.hpp"
#include "ink/corpus.hpp"
#include "ink/error.hpp"
#include "ink/toy_task.hpp"
#include "test_util.hpp"

namespace ink {
namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

template <typename Fn>
std::string error_of(Fn&& fn) {
  try {
    fn();
  } catch (const InputError& e) {
    return e.what();
  }
  return "";
}

TEST(Corpus, IngestsTwoLines) {
  testing::TempDir dir;
  write_file(dir / "c.tsv", "a b\tx y z\n\nb c\ty\n");
  const IngestResult r = ingest(dir / "c.tsv");
  ASSERT_EQ(r.corpus.pairs.size(), 2u);
  EXPECT_EQ(r.corpus.lines, (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(r.vocab.size(), 4u + 6u);
  EXPECT_EQ(r.vocab.decode(r.corpus.pairs[0].target), (std::vector<std::string>{"x", "y", "z"}));
  EXPECT_EQ(r.corpus.pairs[1].source, r.vocab.encode({"b", "c"}));
  // "b" and "y" occur twice and so take the first regular ids.
  EXPECT_EQ(r.vocab.id("b"), Vocabulary::kNumSpecial);
  EXPECT_EQ(r.vocab.id("y"), Vocabulary::kNumSpecial + 1);
}

TEST(Corpus, MissingTabNamesLine) {
  testing::TempDir dir;
  write_file(dir / "bad.tsv", "no tab here\nfine\tok\n");
  const std::string msg = error_of([&] { read_parallel_text(dir / "bad.tsv"); });
  EXPECT_NE(msg.find("bad.tsv:1"), std::string::npos) << msg;
  EXPECT_NE(msg.find("line 1"), std::string::npos) << msg;
}

TEST(Corpus, RejectsEmptySideAndExtraTabs) {
  testing::TempDir dir;
  write_file(dir / "empty.tsv", "a\tb\n \tb\n");
  EXPECT_NE(error_of([&] { read_parallel_text(dir / "empty.tsv"); }).find(":2"), std::string::npos);
  write_file(dir / "tabs.tsv", "a\tb\tc\n");
  EXPECT_THROW(read_parallel_text(dir / "tabs.tsv"), InputError);
  EXPECT_THROW(read_parallel_text(dir / "missing.tsv"), InputError);
}

TEST(Corpus, CharacterLevelTokens) {
  EXPECT_EQ(tokenize("ab c", true), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(tokenize("  ab   c ", false), (std::vector<std::string>{"ab", "c"}));
}

TEST(Corpus, RareWordsBecomeUnknown) {
  testing::TempDir dir;
  write_file(dir / "c.tsv", "a a b\tx\na\tx q\n");
  const IngestResult r = ingest(dir / "c.tsv", IngestOptions{2, false});
  EXPECT_FALSE(r.vocab.contains("b"));
  EXPECT_EQ(r.corpus.pairs[0].source.back(), Vocabulary::kUnk);
  EXPECT_EQ(r.corpus.pairs[1].target.back(), Vocabulary::kUnk);
}

TEST(Corpus, WriteReadRoundTrip) {
  testing::TempDir dir;
  const ToyTask task = make_toy_task({});
  write_parallel_text(dir / "t.tsv", task.domain_dev);
  const auto back = read_parallel_text(dir / "t.tsv");
  ASSERT_EQ(back.size(), task.domain_dev.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].source, task.domain_dev[i].source);
    EXPECT_EQ(back[i].target, task.domain_dev[i].target);
  }
}

TEST(Vocabulary, SaveLoadPreservesIdsAndHash) {
  testing::TempDir dir;
  const Vocabulary v = build_vocabulary(make_toy_task({}).all(), 1);
  v.save(dir / "vocab.txt");
  const Vocabulary back = Vocabulary::load(dir / "vocab.txt");
  ASSERT_EQ(back.size(), v.size());
  for (TokenId i = 0; i < static_cast<TokenId>(v.size()); ++i) {
    EXPECT_EQ(back.token(i), v.token(i));
    EXPECT_EQ(back.frequency(i), v.frequency(i));
  }
  EXPECT_EQ(back.hash(), v.hash());
  EXPECT_EQ(back.frequency_ranks(), v.frequency_ranks());
}

TEST(ToyTask, DeterministicSplitsWithDomainShift) {
  const ToyTask a = make_toy_task({}), b = make_toy_task({});
  ASSERT_EQ(a.domain_train.size(), b.domain_train.size());
  for (std::size_t i = 0; i < a.domain_train.size(); ++i) EXPECT_EQ(a.domain_train[i].target, b.domain_train[i].target);
  EXPECT_FALSE(a.general_train.empty());
  EXPECT_FALSE(a.domain_test.empty());
  const auto extra = make_domain_pairs({}, 50, 7);
  EXPECT_EQ(extra.size(), 50u);
}

TEST(RunConfig, DefaultsAndOverrides) {
  RunConfig c;
  EXPECT_EQ(c.get_int("decode.beam"), 4);
  EXPECT_DOUBLE_EQ(c.get_double("decode.length_penalty"), 0.6);
  EXPECT_DOUBLE_EQ(c.get_double("inference.lambda"), 0.5);
  c.set_assignment("loss.alpha=0.3");
  EXPECT_DOUBLE_EQ(c.train_config("train").weights.alpha, 0.3);
  c.set("bench.batch_sizes", "4,16");
  EXPECT_EQ(c.get_int_list("bench.batch_sizes"), (std::vector<int>{4, 16}));
  EXPECT_EQ(c.decode_options().beam_size, 4);
}

TEST(RunConfig, RejectsUnknownKeysAndBadValues) {
  RunConfig c;
  EXPECT_THROW(c.set("loss.gamma", "1"), InputError);
  EXPECT_THROW(c.set_assignment("no-equals-sign"), InputError);
  c.set("decode.beam", "wide");
  EXPECT_THROW(c.get_int("decode.beam"), InputError);
}

TEST(RunConfig, FileErrorsCiteLine) {
  testing::TempDir dir;
  write_file(dir / "run.cfg", "# comment\nseed = 3\nbogus.key = 1\n");
  const std::string msg = error_of([&] { RunConfig::from_file(dir / "run.cfg"); });
  EXPECT_NE(msg.find("run.cfg:3"), std::string::npos) << msg;
}

TEST(RunConfig, SnapshotRoundTrip) {
  testing::TempDir dir;
  RunConfig c;
  c.set("seed", "17");
  c.set("kernel.T", "4.5");
  c.write_snapshot(dir / "snap.cfg");
  const RunConfig back = RunConfig::from_file(dir / "snap.cfg");
  EXPECT_EQ(back.values(), c.values());
  EXPECT_EQ(back.snapshot(), c.snapshot());
}

}  // namespace
}  // namespace ink

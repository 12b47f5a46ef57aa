#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "splm/corpus.hpp"

using namespace splm;
using namespace splm::corpus;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("splm_corpus_" + name);
}

std::vector<std::uint8_t> ids_of(std::string_view s) { return encode(s); }

}  // namespace

TEST(Normalize, Rules) {
  EXPECT_EQ(normalize("Hello, World!"), "hello  world ");
  EXPECT_EQ(normalize("abc"), "abc");
  EXPECT_EQ(normalize("A1b\tC\n"), "a b c ");
}

TEST(Normalize, Idempotent) {
  const std::string raw = "The 3 Quick-Brown foxes; \xc3\xa9t\xc3\xa9 ZZ";
  const auto once = normalize(raw);
  EXPECT_EQ(normalize(once), once);
  for (char c : once) EXPECT_TRUE(Vocabulary::contains(c));
}

TEST(Encode, IdsAndRoundTrip) {
  EXPECT_EQ(encode(" "), std::vector<std::uint8_t>{26});
  EXPECT_EQ(encode("ab"), (std::vector<std::uint8_t>{0, 1}));
  EXPECT_EQ(decode(encode("z a")), "z a");
  std::string text;
  for (int i = 0; i < 1000; ++i) text.push_back(Vocabulary::symbol((i * 7919) % 27));
  const auto ids = encode(text);
  for (auto id : ids) EXPECT_LT(id, 27);
  EXPECT_EQ(decode(ids), text);
  EXPECT_EQ(Vocabulary::size(), 27);
}

TEST(Encode, RejectsUnnormalized) {
  EXPECT_THROW(encode("Abc"), std::invalid_argument);
  EXPECT_THROW(encode("a,b"), std::invalid_argument);
}

TEST(Split, ToyRatios) {
  const auto split = make_split(std::vector<std::uint8_t>(1000, 3));
  EXPECT_EQ(split.train.size(), 900u);
  EXPECT_EQ(split.dev.size(), 50u);
  EXPECT_EQ(split.test.size(), 50u);
}

TEST(Split, FullSizeRatios) {
  // 100M symbols -> 90M / 5M / 5M.
  const std::size_t n = 100'000'000;
  const auto split = make_split(std::vector<std::uint8_t>(n, 0));
  EXPECT_EQ(split.train.size(), 90'000'000u);
  EXPECT_EQ(split.dev.size(), 5'000'000u);
  EXPECT_EQ(split.test.size(), 5'000'000u);
}

TEST(Split, ContiguousInOrder) {
  std::vector<std::uint8_t> ids(100);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::uint8_t>(i % 27);
  const auto split = make_split(ids);
  EXPECT_EQ(split.train.front(), ids[0]);
  EXPECT_EQ(split.dev.front(), ids[90]);
  EXPECT_EQ(split.test.back(), ids[99]);
}

TEST(SplitFile, RoundTripAndStableChecksum) {
  std::string text;
  for (int i = 0; i < 1000; ++i) text += (i % 11 == 0) ? ' ' : char('a' + i % 26);
  const auto src = temp_path("src.txt");
  std::ofstream(src) << text;
  const auto a = load_text_corpus(src);
  const auto b = load_text_corpus(src);
  EXPECT_EQ(split_checksum(a), split_checksum(b));
  EXPECT_EQ(a.source_sha256, b.source_sha256);

  const auto path = temp_path("split.bin");
  write_split_file(path, a);
  const auto back = read_split_file(path);
  EXPECT_EQ(back.train, a.train);
  EXPECT_EQ(back.dev, a.dev);
  EXPECT_EQ(back.test, a.test);

  std::ifstream in(path, std::ios::binary);
  char head[5];
  in.read(head, 5);
  EXPECT_EQ(std::string(head, 4), "SPLM");
  EXPECT_EQ(head[4], 1);
  EXPECT_EQ(fs::file_size(path), 5 + 24 + 1000u);
}

TEST(SplitFile, RejectsBadMagic) {
  const auto path = temp_path("bad.bin");
  std::ofstream(path) << "NOPE-not-a-split-file-at-all-0000000";
  EXPECT_THROW(read_split_file(path), std::runtime_error);
}

TEST(BatchIter, SingleWindowAlignment) {
  const auto ids = ids_of("abcde");
  BatchIterator it(ids, 3, 1, 0, WindowMode::sequential);
  EXPECT_EQ(it.window_count(), 1u);
  const auto b = it.next();
  EXPECT_EQ(b.inputs, (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(b.targets, (std::vector<int>{1, 2, 3}));
  EXPECT_TRUE(it.done());
}

TEST(BatchIter, RejectsLongContext) {
  const auto ids = ids_of("abcde");
  EXPECT_THROW(BatchIterator(ids, 5, 1, 0, WindowMode::random_offset), std::invalid_argument);
}

TEST(BatchIter, SeededAndSeekable) {
  std::vector<std::uint8_t> ids(5000);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::uint8_t>((i * 31) % 27);
  BatchIterator a(ids, 32, 4, 77, WindowMode::random_offset);
  BatchIterator b(ids, 32, 4, 77, WindowMode::random_offset);
  std::vector<Batch> seen;
  for (int i = 0; i < 5; ++i) {
    auto x = a.next();
    auto y = b.next();
    EXPECT_EQ(x.inputs, y.inputs);
    seen.push_back(x);
  }
  BatchIterator c(ids, 32, 4, 77, WindowMode::random_offset);
  c.seek(3);
  EXPECT_EQ(c.next().inputs, seen[3].inputs);
  BatchIterator d(ids, 32, 4, 78, WindowMode::random_offset);
  EXPECT_NE(d.next().inputs, seen[0].inputs);
}

TEST(BatchIter, TargetsAreSuccessors) {
  std::vector<std::uint8_t> ids(700);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::uint8_t>((i * i) % 27);
  BatchIterator it(ids, 16, 8, 3, WindowMode::random_offset);
  for (int step = 0; step < 10; ++step) {
    const auto b = it.next();
    for (std::size_t r = 0; r < b.batch; ++r) {
      // Some corpus offset must reproduce both the window and its successors.
      bool found = false;
      for (std::size_t s = 0; s + b.context < ids.size() && !found; ++s) {
        bool ok = true;
        for (std::size_t t = 0; t < b.context && ok; ++t)
          ok = b.inputs[r * b.context + t] == ids[s + t] &&
               b.targets[r * b.context + t] == ids[s + t + 1];
        found = ok;
      }
      EXPECT_TRUE(found);
    }
  }
}

TEST(BatchIter, SequentialCoversEachPositionOnce) {
  std::vector<std::uint8_t> ids(1001);
  BatchIterator it(ids, 10, 7, 0, WindowMode::sequential);
  std::size_t windows = 0;
  while (!it.done()) windows += it.next().batch;
  EXPECT_EQ(windows, 100u);  // non-overlapping, each input position used once
  EXPECT_THROW(it.next(), std::out_of_range);
}

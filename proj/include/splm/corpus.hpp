#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "splm/rng.hpp"

namespace splm::corpus {

inline constexpr int kVocabSize = 27;
inline constexpr int kSpaceId = 26;

// 'a'..'z' -> 0..25, ' ' -> 26.
struct Vocabulary {
  static constexpr int size() { return kVocabSize; }
  static bool contains(char c) { return (c >= 'a' && c <= 'z') || c == ' '; }
  static int id(char c);
  static char symbol(int id);
};

// Lowercases A-Z and maps every other byte outside [a-z] to a space.
// Idempotent; digits become spaces rather than being spelled out.
std::string normalize(std::string_view raw);

// Throws std::invalid_argument on a symbol outside the vocabulary.
std::vector<std::uint8_t> encode(std::string_view text);
std::string decode(std::span<const std::uint8_t> ids);

struct SplitRatios {
  double train = 0.90;
  double dev = 0.05;
  double test = 0.05;
};

struct CorpusSplit {
  std::vector<std::uint8_t> train;
  std::vector<std::uint8_t> dev;
  std::vector<std::uint8_t> test;
  std::string source_sha256;

  std::span<const std::uint8_t> split(std::string_view name) const;
};

// Contiguous split in corpus order: train prefix, then dev, then test.
// Test receives the rounding remainder.
CorpusSplit make_split(std::vector<std::uint8_t> ids, const SplitRatios& ratios = {});

// Reads, normalizes, encodes and splits a plain-text corpus.
CorpusSplit load_text_corpus(const std::filesystem::path& path, const SplitRatios& ratios = {});

// Binary layout: "SPLM", u8 version (1), three little-endian u64 lengths
// (train, dev, test), then the u8 ids of each split in that order.
void write_split_file(const std::filesystem::path& path, const CorpusSplit& split);
CorpusSplit read_split_file(const std::filesystem::path& path);

// SHA-256 (lowercase hex) of the bytes the split file would contain.
std::string split_checksum(const CorpusSplit& split);

struct Batch {
  std::size_t batch = 0;
  std::size_t context = 0;
  std::vector<int> inputs;   // [batch][context]
  std::vector<int> targets;  // inputs shifted left by one
};

enum class WindowMode { random_offset, sequential };

// Windows of `context` tokens with next-token targets. Random mode draws
// offsets from a stream derived from (seed, step), so any step can be
// regenerated; sequential mode walks non-overlapping windows once.
class BatchIterator {
 public:
  BatchIterator(std::span<const std::uint8_t> tokens, std::size_t context, std::size_t batch,
                std::uint64_t seed, WindowMode mode);

  bool done() const;
  Batch next();
  void seek(std::uint64_t step);
  std::uint64_t step() const { return step_; }
  std::size_t window_count() const;

 private:
  Batch window_batch(std::span<const std::size_t> starts) const;

  std::span<const std::uint8_t> tokens_;
  std::size_t context_;
  std::size_t batch_;
  std::uint64_t seed_;
  WindowMode mode_;
  std::uint64_t step_ = 0;
  std::size_t cursor_ = 0;
};

}  // namespace splm::corpus

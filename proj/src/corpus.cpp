#include "splm/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "splm/binary_io.hpp"

namespace splm::corpus {

namespace {
constexpr std::uint8_t kSplitVersion = 1;
constexpr char kSplitMagic[4] = {'S', 'P', 'L', 'M'};
}  // namespace

int Vocabulary::id(char c) {
  if (c >= 'a' && c <= 'z') return c - 'a';
  if (c == ' ') return kSpaceId;
  throw std::invalid_argument(std::string("symbol outside vocabulary: '") + c + "' (normalize first)");
}

char Vocabulary::symbol(int id) {
  if (id >= 0 && id < 26) return static_cast<char>('a' + id);
  if (id == kSpaceId) return ' ';
  throw std::invalid_argument("token id outside vocabulary: " + std::to_string(id));
}

std::string normalize(std::string_view raw) {
  std::string out(raw.size(), ' ');
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const char c = raw[i];
    if (c >= 'a' && c <= 'z') {
      out[i] = c;
    } else if (c >= 'A' && c <= 'Z') {
      out[i] = static_cast<char>(c - 'A' + 'a');
    }
  }
  return out;
}

std::vector<std::uint8_t> encode(std::string_view text) {
  std::vector<std::uint8_t> ids(text.size());
  for (std::size_t i = 0; i < text.size(); ++i)
    ids[i] = static_cast<std::uint8_t>(Vocabulary::id(text[i]));
  return ids;
}

std::string decode(std::span<const std::uint8_t> ids) {
  std::string out(ids.size(), ' ');
  for (std::size_t i = 0; i < ids.size(); ++i) out[i] = Vocabulary::symbol(ids[i]);
  return out;
}

std::span<const std::uint8_t> CorpusSplit::split(std::string_view name) const {
  if (name == "train") return train;
  if (name == "dev") return dev;
  if (name == "test") return test;
  throw std::invalid_argument("unknown split '" + std::string(name) + "'");
}

CorpusSplit make_split(std::vector<std::uint8_t> ids, const SplitRatios& ratios) {
  if (ratios.train <= 0 || ratios.dev < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.dev + ratios.test - 1.0) > 1e-9) {
    throw std::invalid_argument("split ratios must be non-negative and sum to 1");
  }
  const auto n = static_cast<double>(ids.size());
  // The epsilon absorbs representation error, e.g. 0.05 * 1000.
  const auto n_train = static_cast<std::size_t>(std::floor(n * ratios.train + 1e-6));
  const auto n_dev = static_cast<std::size_t>(std::floor(n * ratios.dev + 1e-6));
  if (n_train + n_dev > ids.size()) throw std::invalid_argument("corpus too short to split");

  CorpusSplit out;
  out.source_sha256 = io::sha256_hex(ids);
  out.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.dev.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                 ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev));
  out.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev), ids.end());
  return out;
}

CorpusSplit load_text_corpus(const std::filesystem::path& path, const SplitRatios& ratios) {
  const auto raw = io::read_file(path.string());
  const std::string text =
      normalize(std::string_view(reinterpret_cast<const char*>(raw.data()), raw.size()));
  return make_split(encode(text), ratios);
}

namespace {

io::Bytes serialize(const CorpusSplit& split) {
  io::Bytes out;
  out.reserve(4 + 1 + 24 + split.train.size() + split.dev.size() + split.test.size());
  io::put_bytes(out, kSplitMagic, 4);
  out.push_back(kSplitVersion);
  io::put_le<std::uint64_t>(out, split.train.size());
  io::put_le<std::uint64_t>(out, split.dev.size());
  io::put_le<std::uint64_t>(out, split.test.size());
  out.insert(out.end(), split.train.begin(), split.train.end());
  out.insert(out.end(), split.dev.begin(), split.dev.end());
  out.insert(out.end(), split.test.begin(), split.test.end());
  return out;
}

}  // namespace

void write_split_file(const std::filesystem::path& path, const CorpusSplit& split) {
  io::write_file(path.string(), serialize(split));
}

std::string split_checksum(const CorpusSplit& split) { return io::sha256_hex(serialize(split)); }

CorpusSplit read_split_file(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path.string());
  io::Reader in(bytes);
  auto magic = in.take(4);
  if (!std::equal(magic.begin(), magic.end(), kSplitMagic)) {
    throw std::runtime_error(path.string() + ": not a split file (bad magic)");
  }
  const auto version = in.get_le<std::uint8_t>();
  if (version != kSplitVersion) {
    throw std::runtime_error(path.string() + ": unsupported split version " +
                             std::to_string(version));
  }
  const auto n_train = in.get_le<std::uint64_t>();
  const auto n_dev = in.get_le<std::uint64_t>();
  const auto n_test = in.get_le<std::uint64_t>();
  CorpusSplit out;
  for (auto [dst, n] : {std::pair{&out.train, n_train}, {&out.dev, n_dev}, {&out.test, n_test}}) {
    auto s = in.take(n);
    dst->assign(s.begin(), s.end());
    for (auto id : *dst)
      if (id >= kVocabSize) throw std::runtime_error(path.string() + ": token id out of range");
  }
  if (in.remaining() != 0) throw std::runtime_error(path.string() + ": trailing bytes");
  std::vector<std::uint8_t> all(out.train);
  all.insert(all.end(), out.dev.begin(), out.dev.end());
  all.insert(all.end(), out.test.begin(), out.test.end());
  out.source_sha256 = io::sha256_hex(all);
  return out;
}

BatchIterator::BatchIterator(std::span<const std::uint8_t> tokens, std::size_t context,
                             std::size_t batch, std::uint64_t seed, WindowMode mode)
    : tokens_(tokens), context_(context), batch_(batch), seed_(seed), mode_(mode) {
  if (context == 0 || batch == 0) throw std::invalid_argument("batch_iter: zero context or batch");
  if (context >= tokens.size()) {
    throw std::invalid_argument("batch_iter: context " + std::to_string(context) +
                                " not shorter than split of " + std::to_string(tokens.size()));
  }
}

std::size_t BatchIterator::window_count() const {
  // Each window needs context + 1 tokens for its shifted targets.
  return (tokens_.size() - 1) / context_;
}

bool BatchIterator::done() const {
  return mode_ == WindowMode::sequential && cursor_ >= window_count();
}

void BatchIterator::seek(std::uint64_t step) {
  step_ = step;
  cursor_ = static_cast<std::size_t>(std::min<std::uint64_t>(step * batch_, window_count()));
}

Batch BatchIterator::next() {
  std::vector<std::size_t> starts;
  if (mode_ == WindowMode::random_offset) {
    Rng rng(derive_seed(seed_, step_));
    std::uniform_int_distribution<std::size_t> pick(0, tokens_.size() - context_ - 1);
    for (std::size_t b = 0; b < batch_; ++b) starts.push_back(pick(rng));
  } else {
    if (done()) throw std::out_of_range("batch_iter: sequential pass exhausted");
    const std::size_t end = std::min(cursor_ + batch_, window_count());
    for (std::size_t w = cursor_; w < end; ++w) starts.push_back(w * context_);
    cursor_ = end;
  }
  ++step_;
  return window_batch(starts);
}

Batch BatchIterator::window_batch(std::span<const std::size_t> starts) const {
  Batch out;
  out.batch = starts.size();
  out.context = context_;
  out.inputs.resize(starts.size() * context_);
  out.targets.resize(starts.size() * context_);
  for (std::size_t b = 0; b < starts.size(); ++b)
    for (std::size_t t = 0; t < context_; ++t) {
      out.inputs[b * context_ + t] = tokens_[starts[b] + t];
      out.targets[b * context_ + t] = tokens_[starts[b] + t + 1];
    }
  return out;
}

}  // namespace splm::corpus

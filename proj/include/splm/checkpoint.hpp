#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "splm/config.hpp"
#include "splm/gpt.hpp"

// Checkpoint file layout (all integers little-endian):
//
//   "SPCK"            4 bytes
//   version           u8 (1)
//   config length     u64
//   config            key=value text, one pair per line
//   payload digest    32 bytes, SHA-256 of everything after it
//   payload:
//     record count    u64
//     per record      u32 name length, name bytes, u32 rank, rank x u64 dims,
//                     raw floats (4 bytes each for precision=f32, 8 for f64)
//
// The config block holds the model keys plus precision, seed and step.
namespace splm::ckpt {

struct Record {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::map<std::string, std::string> config;
  std::vector<Record> records;

  const Record* find(const std::string& name) const;
  ModelConfig model_config() const;
  Precision precision() const;
  std::uint64_t seed() const;
  std::uint64_t step() const;
};

void write(const std::filesystem::path& path, const Checkpoint& ckpt);
// Verifies magic, version and digest; throws std::runtime_error otherwise.
Checkpoint read(const std::filesystem::path& path);

// Snapshot of a model's parameters; `extra` entries go into the config block.
template <typename T>
Checkpoint capture(const gpt::GptModel<T>& model, std::uint64_t step,
                   const std::map<std::string, std::string>& extra = {});

// Rebuilds the model described by the config block and loads every
// parameter record. Throws if a parameter is missing or mis-shaped.
template <typename T>
gpt::GptModel<T> restore_model(const Checkpoint& ckpt);

}  // namespace splm::ckpt

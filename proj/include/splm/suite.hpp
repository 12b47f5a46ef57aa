#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "splm/dct.hpp"

// Canned experiments shared by the CLI and the test binaries.
namespace splm::suite {

struct CheckResult {
  std::string name;
  double rel_err = 0;        // per-tensor norm-relative error; decides pass/fail
  double coord_rel_err = 0;  // worst per-coordinate ratio, for information
  double tolerance = 0;
  bool passed = false;
};

inline constexpr double kPrimitiveTol = 1e-6;
inline constexpr double kCompositeTol = 1e-4;

// Finite-difference checks of every differentiable primitive and every
// filter block, in 64-bit.
std::vector<CheckResult> gradient_suite(std::uint64_t seed);

struct SynthExperiment {
  dct::SynthConfig data;
  dct::ClassifierConfig model;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t train_count = 512;
  std::size_t test_count = 256;
  std::size_t steps = 300;
  std::size_t batch = 16;
  double learning_rate = 3e-3;
};

struct SynthRun {
  std::uint64_t seed = 0;
  double trainable_acc = 0;
  double frozen_acc = 0;
};

struct SynthReport {
  std::vector<SynthRun> runs;
  double chance = 0;
  double mean_trainable() const;
  double mean_frozen() const;
  std::string to_text() const;
};

// Trains the classifier twice per seed on the same data and initial
// parameters: once with trainable spectral weights, once with them frozen
// at 1. `progress` receives one line per finished run.
SynthReport run_synth_classify(const SynthExperiment& exp,
                               const std::function<void(const std::string&)>& progress = {});

// Accuracy of `model` on `data`.
double classifier_accuracy(const dct::DctClassifier<double>& model, const dct::SynthDataset& data);

}  // namespace splm::suite

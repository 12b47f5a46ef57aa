#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "splm/checkpoint.hpp"
#include "splm/config.hpp"
#include "splm/corpus.hpp"
#include "splm/gpt.hpp"

namespace splm::train {

struct MetricRecord {
  std::uint64_t step = 0;
  std::string split;
  double nll_nats = 0;  // natural-log units
  std::uint64_t tokens_seen = 0;
  std::int64_t wall_ms = 0;
};

std::string to_json_line(const MetricRecord& r);
MetricRecord from_json_line(const std::string& line);
std::vector<MetricRecord> read_metrics(const std::filesystem::path& path);

struct TrainingAborted : std::runtime_error {
  TrainingAborted(const std::string& what, MetricRecord rec)
      : std::runtime_error(what), record(std::move(rec)) {}
  MetricRecord record;
};

struct NotComparable : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Adam with bias correction; parameters without a gradient are skipped for
// that step.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, double beta1, double beta2, double eps);

  void step(double lr);
  std::uint64_t steps() const { return t_; }
  const std::vector<Tensor<T>>& params() const { return params_; }
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }
  void set_steps(std::uint64_t t) { t_ = t; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> m_, v_;
  double beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
};

// Linear warmup to the base rate over warmup_steps, constant afterwards.
double learning_rate_at(const TrainConfig& cfg, std::uint64_t step);

// Scales gradients so their global L2 norm is at most max_norm; returns the
// norm before clipping.
template <typename T>
double clip_grad_norm(std::span<Tensor<T>> params, double max_norm);

// Mean per-token NLL (nats) over sequential non-overlapping windows of the
// model's context length. max_windows = 0 uses every window.
template <typename T>
double evaluate(const gpt::GptModel<T>& model, std::span<const std::uint8_t> tokens,
                std::size_t batch, std::size_t max_windows = 0);

// Step at which the eval curve first reaches `target`, linearly
// interpolated between eval points. Empty if never reached.
std::optional<double> first_crossing_step(const std::vector<MetricRecord>& log, double target,
                                          const std::string& split = "dev");

// 100 * (baseline steps - variant steps) / baseline steps at the first
// crossing of target_nll. Throws NotComparable unless both logs reach it.
double speedup(const std::vector<MetricRecord>& baseline, const std::vector<MetricRecord>& variant,
               double target_nll, const std::string& split = "dev");

using MetricSink = std::function<void(const MetricRecord&)>;

// Owns a model, its optimizer state and the data streams of one run.
template <typename T>
class Trainer {
 public:
  Trainer(RunConfig cfg, const corpus::CorpusSplit& data);
  // Continues a run from a checkpoint written by save_checkpoint.
  Trainer(RunConfig cfg, const corpus::CorpusSplit& data, const ckpt::Checkpoint& checkpoint);

  // Runs `steps` optimizer steps from the current step, evaluating on the dev
  // split every eval_interval steps and once at the end. Throws
  // TrainingAborted (after emitting an "abort" record) on a non-finite loss.
  MetricRecord train(std::size_t steps, const MetricSink& sink = {});

  // One optimizer step on the batch for `step()`; returns its loss.
  double train_step();

  double evaluate_split(const std::string& split) const;

  gpt::GptModel<T>& model() { return model_; }
  const gpt::GptModel<T>& model() const { return model_; }
  std::uint64_t step() const { return step_; }
  const RunConfig& config() const { return cfg_; }

  ckpt::Checkpoint checkpoint() const;
  void save_checkpoint(const std::filesystem::path& path) const;

 private:
  MetricRecord emit(const std::string& split, double nll, const MetricSink& sink) const;

  RunConfig cfg_;
  const corpus::CorpusSplit& data_;
  gpt::GptModel<T> model_;
  Adam<T> adam_;
  std::uint64_t step_ = 0;
  std::uint64_t tokens_seen_ = 0;
  std::int64_t start_ms_ = 0;
};

// Config keys the trainer records in checkpoints beside the model keys.
std::map<std::string, std::string> eval_settings(const TrainConfig& cfg);

}  // namespace splm::train

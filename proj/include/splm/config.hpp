#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace splm {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

enum class FilterVariant { none, single_scale, multi_scale, token_adaptive };
enum class MaskCombine { replace, multiply };
enum class MaskActivation { linear, sigmoid };
enum class Precision { f32, f64 };

std::string to_string(FilterVariant v);
std::string to_string(MaskCombine v);
std::string to_string(MaskActivation v);
std::string to_string(Precision v);
FilterVariant parse_variant(const std::string& s);
Precision parse_precision(const std::string& s);

struct MaskDecoderConfig {
  std::size_t bottleneck = 32;
  std::size_t heads = 4;
  std::size_t ff = 128;
  // Learned positional table added after the input projection.
  bool positional = false;
  MaskCombine combine = MaskCombine::replace;
  MaskActivation activation = MaskActivation::linear;
  // Kernel set the token-adaptive variant decomposes with.
  bool multi_scale_base = false;
};

struct FilterConfig {
  FilterVariant variant = FilterVariant::none;
  std::size_t channels = 144;
  std::size_t single_length = 7;
  std::vector<std::size_t> scale_lengths = {3, 7, 15, 31};
  // Sites are "after decoder block i". Empty means after every block.
  std::vector<std::size_t> placement;
  MaskDecoderConfig mask;

  bool uses_multi_scale() const {
    return variant == FilterVariant::multi_scale ||
           (variant == FilterVariant::token_adaptive && mask.multi_scale_base);
  }
  // Per-scale kernel lengths, each owning channels / scales.size() channels.
  std::vector<std::size_t> scales() const;
  // Kernel length of every channel in channel order.
  std::vector<std::size_t> kernel_lengths() const;
  void validate() const;
};

struct ModelConfig {
  std::size_t n_layers = 8;
  std::size_t d_model = 128;
  std::size_t d_ff = 512;
  std::size_t n_heads = 8;
  std::size_t context_len = 256;
  std::size_t vocab = 27;
  std::size_t head_hidden = 2048;
  double dropout = 0.0;
  FilterConfig filter;

  std::vector<std::size_t> sites() const;
  void validate() const;
};

struct TrainConfig {
  std::uint64_t seed = 1;
  Precision precision = Precision::f64;
  std::size_t steps = 1000;
  std::size_t batch_size = 32;
  double learning_rate = 3e-4;
  std::size_t warmup_steps = 100;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;
  std::size_t eval_interval = 250;
  // 0 evaluates every sequential window of the dev split.
  std::size_t eval_max_windows = 0;
  std::size_t eval_batch = 32;
  std::optional<double> target_nll;
};

// Flat key=value run document: one pair per line, '#' starts a comment.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string corpus;
  std::string checkpoint_dir = "checkpoints";
  std::string metrics_path = "metrics.jsonl";

  // Applies one key; throws ConfigError on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  std::string to_text() const;
  std::map<std::string, std::string> to_map() const;

  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);
};

// The model section alone, as stored in checkpoints.
std::map<std::string, std::string> model_config_map(const ModelConfig& cfg);
ModelConfig model_config_from_map(const std::map<std::string, std::string>& kv);

std::map<std::string, std::string> parse_key_values(const std::string& text);
std::string format_key_values(const std::map<std::string, std::string>& kv);

// Full-size baseline: 8 layers, d=128, ff=512, 8 heads, context 256.
ModelConfig reference_baseline_config();

}  // namespace splm

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "splm/adaptive_mask.hpp"
#include "splm/config.hpp"
#include "splm/nn.hpp"
#include "splm/spectral_filter.hpp"

namespace splm::gpt {

// Filtering applied to the output of decoder block `layer`.
template <typename T>
struct FilterSite {
  std::size_t layer = 0;
  filter::FilterBank<T> bank;
  std::optional<mask::MaskDecoder<T>> mask;
};

// Decoder-only character LM: token + learned position embeddings, pre-norm
// causal blocks with optional filter sites, final layer norm, and a two-layer
// ReLU head whose output layer starts at zero (uniform initial prediction).
template <typename T>
class GptModel {
 public:
  GptModel(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  nn::ParameterStore<T>& params() { return store_; }
  const nn::ParameterStore<T>& params() const { return store_; }
  std::size_t param_count() const { return store_.count(); }
  const std::vector<FilterSite<T>>& sites() const { return sites_; }

  // tokens: [batch][len] row-major ids -> logits [batch, len, vocab].
  // Throws std::invalid_argument for ids >= vocab or len > context_len.
  Tensor<T> forward(std::span<const int> tokens, std::size_t batch, std::size_t len,
                    nn::ForwardContext* ctx = nullptr) const;

  // Final-norm hidden states [batch, len, d_model].
  Tensor<T> hidden(std::span<const int> tokens, std::size_t batch, std::size_t len,
                   nn::ForwardContext* ctx = nullptr) const;

  // h[..., d] -> logits[..., vocab] through dense(head_hidden), ReLU, dense.
  Tensor<T> lm_head(const Tensor<T>& h) const;

  // Token weights of each adaptive site for one forward pass, as [L, M]
  // mean |W| maps. Empty for other variants.
  std::vector<std::vector<double>> mask_heatmaps(std::span<const int> tokens, std::size_t batch,
                                                 std::size_t len) const;

  // Copies values of every parameter `other` shares by name and shape.
  std::size_t copy_shared_parameters(const GptModel& other);

 private:
  Tensor<T> run(std::span<const int> tokens, std::size_t batch, std::size_t len,
                nn::ForwardContext* ctx, std::vector<std::vector<double>>* heatmaps) const;

  ModelConfig cfg_;
  std::uint64_t seed_;
  nn::ParameterStore<T> store_;
  Tensor<T> token_embedding_;
  Tensor<T> position_embedding_;
  std::vector<nn::TransformerBlock<T>> blocks_;
  std::vector<FilterSite<T>> sites_;
  nn::LayerNorm<T> final_norm_;
  nn::Linear<T> head_hidden_;
  nn::Linear<T> head_out_;
};

// Builds a model with `filter` sites whose shared parameters equal `base`'s.
// Throws ConfigError for placement indices outside the layer range.
template <typename T>
GptModel<T> insert_into_model(const GptModel<T>& base, const FilterConfig& filter);

// Trainable scalars the filter sites add for a configuration.
std::size_t filter_param_count(const ModelConfig& cfg);

}  // namespace splm::gpt

#pragma once

#include <optional>
#include <string>

#include "splm/config.hpp"
#include "splm/nn.hpp"
#include "splm/spectral_filter.hpp"

// Token-varying filtering: a small causal decoder reads the M-channel
// time-frequency representation of a signal and emits a weight for every
// (token, channel) pair, acting as a learned time-frequency mask.
namespace splm::mask {

template <typename T>
struct MaskDecoder {
  nn::Linear<T> in_proj;   // M -> bottleneck
  nn::TransformerBlock<T> block;
  nn::Linear<T> out_proj;  // bottleneck -> M, zero-initialised
  std::optional<Tensor<T>> positions;  // [max_len, bottleneck]
  MaskDecoderConfig cfg;
  std::size_t channels = 0;

  static MaskDecoder create(nn::ParameterStore<T>& store, const std::string& prefix,
                            std::size_t channels, std::size_t max_len,
                            const MaskDecoderConfig& cfg);
  std::size_t param_count() const;
};

// tf [N, M, L] -> W [N, L, M]; W[n, t] depends on tf[n, :, 0..t] only.
// Throws std::invalid_argument when M differs from the decoder's channels.
template <typename T>
Tensor<T> compute_token_weights(const Tensor<T>& tf, const MaskDecoder<T>& decoder,
                                nn::ForwardContext* ctx = nullptr);

// ft[n, t] = sum_k W[n, t, k] * tf[n, k, t]
template <typename T>
Tensor<T> apply_token_weights(const Tensor<T>& tf, const Tensor<T>& weights);

// Decompose with `bank`, derive W with `decoder`, weight per token. In
// multiply mode W is scaled by the bank's static mix weights first.
template <typename T>
Tensor<T> filter_adaptive(const Tensor<T>& signals, const filter::FilterBank<T>& bank,
                          const MaskDecoder<T>& decoder, nn::ForwardContext* ctx = nullptr);

// x[B, L, E] -> x + filter_adaptive over each coordinate signal.
template <typename T>
Tensor<T> adaptive_site(const Tensor<T>& x, const filter::FilterBank<T>& bank,
                        const MaskDecoder<T>& decoder, nn::ForwardContext* ctx = nullptr);

// Mean |W| over signals for the signals of one site: [L, M].
template <typename T>
std::vector<double> mean_abs_weights(const Tensor<T>& weights);

}  // namespace splm::mask

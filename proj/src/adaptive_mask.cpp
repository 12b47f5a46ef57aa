#include "splm/adaptive_mask.hpp"

#include <cmath>
#include <stdexcept>

namespace splm::mask {

template <typename T>
MaskDecoder<T> MaskDecoder<T>::create(nn::ParameterStore<T>& store, const std::string& prefix,
                                      std::size_t channels, std::size_t max_len,
                                      const MaskDecoderConfig& cfg) {
  if (cfg.bottleneck == 0 || cfg.heads == 0 || cfg.bottleneck % cfg.heads != 0) {
    throw std::invalid_argument("mask decoder: bottleneck must be a positive multiple of heads");
  }
  MaskDecoder<T> d;
  d.cfg = cfg;
  d.channels = channels;
  d.in_proj = nn::Linear<T>::create(store, prefix + ".in", channels, cfg.bottleneck,
                                    nn::Init::normal(nn::kWeightStd));
  if (cfg.positional) {
    d.positions = store.create(prefix + ".pos", {max_len, cfg.bottleneck},
                               nn::Init::normal(nn::kWeightStd));
  }
  d.block = nn::TransformerBlock<T>::create(store, prefix + ".block", cfg.bottleneck, cfg.ff,
                                            cfg.heads, /*causal=*/true);
  // Zero output layer: W starts at 0 and the site starts as the identity.
  d.out_proj =
      nn::Linear<T>::create(store, prefix + ".out", cfg.bottleneck, channels, nn::Init::zeros());
  return d;
}

template <typename T>
std::size_t MaskDecoder<T>::param_count() const {
  std::size_t n = in_proj.weight.numel() + in_proj.bias.numel() + out_proj.weight.numel() +
                  out_proj.bias.numel();
  if (positions) n += positions->numel();
  const auto& b = block;
  for (const auto* t : {&b.ln1.gamma, &b.ln1.beta, &b.ln2.gamma, &b.ln2.beta,
                        &b.attn.query.weight, &b.attn.query.bias, &b.attn.key.weight,
                        &b.attn.key.bias, &b.attn.value.weight, &b.attn.value.bias,
                        &b.attn.out.weight, &b.attn.out.bias, &b.ff_in.weight, &b.ff_in.bias,
                        &b.ff_out.weight, &b.ff_out.bias})
    n += t->numel();
  return n;
}

template <typename T>
Tensor<T> compute_token_weights(const Tensor<T>& tf, const MaskDecoder<T>& decoder,
                                nn::ForwardContext* ctx) {
  if (tf.rank() != 3 || tf.dim(1) != decoder.channels) {
    throw std::invalid_argument("compute_token_weights: expected tf[N," +
                                std::to_string(decoder.channels) + ",L], got " +
                                shape_str(tf.shape()));
  }
  const std::size_t len = tf.dim(2);
  auto h = decoder.in_proj(ops::permute(tf, {0, 2, 1}));  // [N, L, bottleneck]
  if (decoder.positions) {
    const auto& pos = *decoder.positions;
    if (len > pos.dim(0)) throw std::invalid_argument("compute_token_weights: sequence too long");
    std::vector<int> ids(len);
    for (std::size_t t = 0; t < len; ++t) ids[t] = static_cast<int>(t);
    h = ops::add(h, ops::embedding(pos, ids, {len}));
  }
  auto w = decoder.out_proj(decoder.block(h, ctx));
  if (decoder.cfg.activation == MaskActivation::sigmoid) w = ops::sigmoid(w);
  return w;
}

template <typename T>
Tensor<T> apply_token_weights(const Tensor<T>& tf, const Tensor<T>& weights) {
  return ops::mix_channels_tokenwise(tf, weights);
}

template <typename T>
Tensor<T> filter_adaptive(const Tensor<T>& signals, const filter::FilterBank<T>& bank,
                          const MaskDecoder<T>& decoder, nn::ForwardContext* ctx) {
  if (bank.channels() != decoder.channels) {
    throw std::invalid_argument("filter_adaptive: bank and mask decoder channel counts differ");
  }
  if (signals.rank() == 1) {
    auto f = filter_adaptive(ops::reshape(signals, {1, signals.dim(0)}), bank, decoder, ctx);
    return ops::reshape(f, {signals.dim(0)});
  }
  auto tf = filter::decompose(signals, bank);
  auto w = compute_token_weights(tf, decoder, ctx);
  if (decoder.cfg.combine == MaskCombine::multiply) w = ops::mul(w, bank.mix);
  return apply_token_weights(tf, w);
}

template <typename T>
Tensor<T> adaptive_site(const Tensor<T>& x, const filter::FilterBank<T>& bank,
                        const MaskDecoder<T>& decoder, nn::ForwardContext* ctx) {
  auto f = filter_adaptive(filter::to_signals(x), bank, decoder, ctx);
  return filter::apply_residual(x, filter::from_signals(f, x.dim(0), x.dim(2)));
}

template <typename T>
std::vector<double> mean_abs_weights(const Tensor<T>& weights) {
  const std::size_t n = weights.dim(0), len = weights.dim(1), ch = weights.dim(2);
  std::vector<double> out(len * ch, 0.0);
  auto wd = weights.data();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t i = 0; i < len * ch; ++i) out[i] += std::abs(double(wd[s * len * ch + i]));
  for (auto& v : out) v /= double(n);
  return out;
}

#define SPLM_INSTANTIATE_MASK(T)                                                             \
  template struct MaskDecoder<T>;                                                            \
  template Tensor<T> compute_token_weights(const Tensor<T>&, const MaskDecoder<T>&,          \
                                           nn::ForwardContext*);                             \
  template Tensor<T> apply_token_weights(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> filter_adaptive(const Tensor<T>&, const filter::FilterBank<T>&,         \
                                     const MaskDecoder<T>&, nn::ForwardContext*);            \
  template Tensor<T> adaptive_site(const Tensor<T>&, const filter::FilterBank<T>&,           \
                                   const MaskDecoder<T>&, nn::ForwardContext*);              \
  template std::vector<double> mean_abs_weights(const Tensor<T>&);

SPLM_INSTANTIATE_MASK(float)
SPLM_INSTANTIATE_MASK(double)

}  // namespace splm::mask

#include "splm/gpt.hpp"

#include <algorithm>
#include <stdexcept>

namespace splm::gpt {

template <typename T>
GptModel<T>::GptModel(ModelConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)), seed_(seed), store_(seed) {
  cfg_.validate();
  const auto w = nn::Init::normal(nn::kWeightStd);
  token_embedding_ = store_.create("tok_emb", {cfg_.vocab, cfg_.d_model}, w);
  position_embedding_ = store_.create("pos_emb", {cfg_.context_len, cfg_.d_model}, w);
  const auto sites = cfg_.sites();
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string prefix = "block" + std::to_string(l);
    blocks_.push_back(nn::TransformerBlock<T>::create(store_, prefix, cfg_.d_model, cfg_.d_ff,
                                                      cfg_.n_heads, /*causal=*/true));
    if (std::find(sites.begin(), sites.end(), l) == sites.end()) continue;
    FilterSite<T> site;
    site.layer = l;
    site.bank = filter::FilterBank<T>::create(store_, "site" + std::to_string(l) + ".bank",
                                              cfg_.filter);
    if (cfg_.filter.variant == FilterVariant::token_adaptive) {
      site.mask = mask::MaskDecoder<T>::create(store_, "site" + std::to_string(l) + ".mask",
                                               cfg_.filter.channels, cfg_.context_len,
                                               cfg_.filter.mask);
    }
    sites_.push_back(std::move(site));
  }
  final_norm_ = nn::LayerNorm<T>::create(store_, "ln_f", cfg_.d_model);
  head_hidden_ = nn::Linear<T>::create(store_, "head.hidden", cfg_.d_model, cfg_.head_hidden, w);
  head_out_ = nn::Linear<T>::create(store_, "head.out", cfg_.head_hidden, cfg_.vocab,
                                    nn::Init::zeros());
}

template <typename T>
Tensor<T> GptModel<T>::lm_head(const Tensor<T>& h) const {
  return head_out_(ops::relu(head_hidden_(h)));
}

template <typename T>
Tensor<T> GptModel<T>::run(std::span<const int> tokens, std::size_t batch, std::size_t len,
                           nn::ForwardContext* ctx,
                           std::vector<std::vector<double>>* heatmaps) const {
  if (len == 0 || batch == 0) throw std::invalid_argument("forward: empty batch");
  if (len > cfg_.context_len) {
    throw std::invalid_argument("forward: length " + std::to_string(len) + " exceeds context " +
                                std::to_string(cfg_.context_len));
  }
  if (tokens.size() != batch * len) throw std::invalid_argument("forward: token count mismatch");
  for (int id : tokens)
    if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab) {
      throw std::invalid_argument("forward: token id " + std::to_string(id) +
                                  " outside vocabulary of " + std::to_string(cfg_.vocab));
    }
  std::vector<int> positions(len);
  for (std::size_t t = 0; t < len; ++t) positions[t] = static_cast<int>(t);

  auto x = ops::embedding(token_embedding_, tokens, {batch, len});
  x = ops::add(x, ops::embedding(position_embedding_, positions, {len}));
  x = nn::dropout(x, ctx);
  auto site = sites_.begin();
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    x = blocks_[l](x, ctx);
    if (site == sites_.end() || site->layer != l) continue;
    if (site->mask) {
      if (heatmaps) {
        NoGradGuard guard;
        auto tf = filter::decompose(filter::to_signals(x), site->bank);
        heatmaps->push_back(mask::mean_abs_weights(mask::compute_token_weights(tf, *site->mask)));
      }
      x = mask::adaptive_site(x, site->bank, *site->mask, ctx);
    } else {
      x = filter::filter_site(x, site->bank);
    }
    ++site;
  }
  return final_norm_(x);
}

template <typename T>
Tensor<T> GptModel<T>::hidden(std::span<const int> tokens, std::size_t batch, std::size_t len,
                              nn::ForwardContext* ctx) const {
  return run(tokens, batch, len, ctx, nullptr);
}

template <typename T>
Tensor<T> GptModel<T>::forward(std::span<const int> tokens, std::size_t batch, std::size_t len,
                               nn::ForwardContext* ctx) const {
  return lm_head(hidden(tokens, batch, len, ctx));
}

template <typename T>
std::vector<std::vector<double>> GptModel<T>::mask_heatmaps(std::span<const int> tokens,
                                                            std::size_t batch,
                                                            std::size_t len) const {
  NoGradGuard guard;
  std::vector<std::vector<double>> maps;
  run(tokens, batch, len, nullptr, &maps);
  return maps;
}

template <typename T>
std::size_t GptModel<T>::copy_shared_parameters(const GptModel& other) {
  std::size_t copied = 0;
  for (auto& [name, t] : store_.entries()) {
    if (!other.store_.contains(name)) continue;
    const auto& src = other.store_.get(name);
    if (src.shape() != t.shape()) continue;
    auto dst = t;
    std::ranges::copy(src.data(), dst.data().begin());
    ++copied;
  }
  return copied;
}

template <typename T>
GptModel<T> insert_into_model(const GptModel<T>& base, const FilterConfig& filter) {
  ModelConfig cfg = base.config();
  cfg.filter = filter;
  GptModel<T> out(cfg, base.seed());
  out.copy_shared_parameters(base);
  return out;
}

std::size_t filter_param_count(const ModelConfig& cfg) {
  if (cfg.filter.variant == FilterVariant::none) return 0;
  std::size_t per_site = filter::site_param_count(cfg.filter);
  if (cfg.filter.variant == FilterVariant::token_adaptive) {
    nn::ParameterStore<double> scratch(0);
    per_site += mask::MaskDecoder<double>::create(scratch, "m", cfg.filter.channels,
                                                  cfg.context_len, cfg.filter.mask)
                    .param_count();
  }
  return per_site * cfg.sites().size();
}

template class GptModel<float>;
template class GptModel<double>;
template GptModel<float> insert_into_model(const GptModel<float>&, const FilterConfig&);
template GptModel<double> insert_into_model(const GptModel<double>&, const FilterConfig&);

}  // namespace splm::gpt

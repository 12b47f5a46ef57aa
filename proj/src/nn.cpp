#include "splm/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace splm::nn {

template <typename T>
Tensor<T> ParameterStore<T>::create(const std::string& name, Shape shape, Init init) {
  if (contains(name)) throw std::logic_error("duplicate parameter '" + name + "'");
  std::vector<T> values(numel(shape), T(0));
  Rng rng = make_rng(seed_, name);
  switch (init.kind) {
    case Init::Kind::zeros:
      break;
    case Init::Kind::ones:
      std::fill(values.begin(), values.end(), T(1));
      break;
    case Init::Kind::normal: {
      std::normal_distribution<double> dist(0.0, init.scale);
      for (auto& v : values) v = static_cast<T>(dist(rng));
      break;
    }
    case Init::Kind::uniform: {
      std::uniform_real_distribution<double> dist(-init.scale, init.scale);
      for (auto& v : values) v = static_cast<T>(dist(rng));
      break;
    }
  }
  auto t = Tensor<T>::from(std::move(shape), std::move(values), true);
  entries_.emplace_back(name, t);
  return t;
}

template <typename T>
const Tensor<T>& ParameterStore<T>::get(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw std::out_of_range("no parameter '" + name + "'");
}

template <typename T>
bool ParameterStore<T>::contains(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.first == name) return true;
  return false;
}

template <typename T>
std::vector<Tensor<T>> ParameterStore<T>::tensors() const {
  std::vector<Tensor<T>> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

template <typename T>
std::size_t ParameterStore<T>::count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, ForwardContext* ctx) {
  if (!ctx || !ctx->training || ctx->dropout <= 0.0) return x;
  if (!ctx->rng) throw std::logic_error("dropout: training context without rng");
  std::bernoulli_distribution keep(1.0 - ctx->dropout);
  const T kept = T(1.0 / (1.0 - ctx->dropout));
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = keep(*ctx->rng) ? kept : T(0);
  return ops::mul(x, Tensor<T>::from(x.shape(), std::move(mask)));
}

template <typename T>
Linear<T> Linear<T>::create(ParameterStore<T>& store, const std::string& prefix, std::size_t in,
                            std::size_t out, Init weight_init) {
  return {store.create(prefix + ".weight", {in, out}, weight_init),
          store.create(prefix + ".bias", {out}, Init::zeros())};
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  return ops::add(ops::matmul(x, weight), bias);
}

template <typename T>
LayerNorm<T> LayerNorm<T>::create(ParameterStore<T>& store, const std::string& prefix,
                                  std::size_t dim) {
  return {store.create(prefix + ".gamma", {dim}, Init::ones()),
          store.create(prefix + ".beta", {dim}, Init::zeros())};
}

template <typename T>
Tensor<T> LayerNorm<T>::operator()(const Tensor<T>& x) const {
  return ops::layer_norm(x, gamma, beta);
}

template <typename T>
SelfAttention<T> SelfAttention<T>::create(ParameterStore<T>& store, const std::string& prefix,
                                          std::size_t dim, std::size_t heads, bool causal) {
  if (heads == 0 || dim % heads != 0) {
    throw std::invalid_argument("attention: dim " + std::to_string(dim) +
                                " not divisible by heads " + std::to_string(heads));
  }
  const auto w = Init::normal(kWeightStd);
  SelfAttention<T> a;
  a.query = Linear<T>::create(store, prefix + ".q", dim, dim, w);
  a.key = Linear<T>::create(store, prefix + ".k", dim, dim, w);
  a.value = Linear<T>::create(store, prefix + ".v", dim, dim, w);
  a.out = Linear<T>::create(store, prefix + ".o", dim, dim, w);
  a.heads = heads;
  a.causal = causal;
  return a;
}

template <typename T>
Tensor<T> SelfAttention<T>::operator()(const Tensor<T>& x, ForwardContext* ctx) const {
  if (x.rank() != 3) throw std::invalid_argument("attention: expected [B,L,d]");
  const std::size_t batch = x.dim(0), len = x.dim(1), dim = x.dim(2);
  const std::size_t dh = dim / heads;
  auto split = [&](const Tensor<T>& t) {
    auto r = ops::reshape(t, {batch, len, heads, dh});
    return ops::reshape(ops::permute(r, {0, 2, 1, 3}), {batch * heads, len, dh});
  };
  auto q = split(query(x));
  auto k = split(key(x));
  auto v = split(value(x));
  auto scores = ops::scale(ops::bmm(q, k, true), T(1) / std::sqrt(T(dh)));
  auto weights = dropout(ops::softmax(scores, causal), ctx);
  auto ctx_heads = ops::bmm(weights, v);
  auto merged = ops::permute(ops::reshape(ctx_heads, {batch, heads, len, dh}), {0, 2, 1, 3});
  return out(ops::reshape(merged, {batch, len, dim}));
}

template <typename T>
TransformerBlock<T> TransformerBlock<T>::create(ParameterStore<T>& store,
                                                const std::string& prefix, std::size_t dim,
                                                std::size_t ff, std::size_t heads, bool causal) {
  TransformerBlock<T> b;
  b.ln1 = LayerNorm<T>::create(store, prefix + ".ln1", dim);
  b.attn = SelfAttention<T>::create(store, prefix + ".attn", dim, heads, causal);
  b.ln2 = LayerNorm<T>::create(store, prefix + ".ln2", dim);
  b.ff_in = Linear<T>::create(store, prefix + ".ff_in", dim, ff, Init::normal(kWeightStd));
  b.ff_out = Linear<T>::create(store, prefix + ".ff_out", ff, dim, Init::normal(kWeightStd));
  return b;
}

template <typename T>
Tensor<T> TransformerBlock<T>::operator()(const Tensor<T>& x, ForwardContext* ctx) const {
  auto h = ops::add(x, dropout(attn(ln1(x), ctx), ctx));
  auto f = ff_out(ops::relu(ff_in(ln2(h))));
  return ops::add(h, dropout(f, ctx));
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template Tensor<float> dropout(const Tensor<float>&, ForwardContext*);
template Tensor<double> dropout(const Tensor<double>&, ForwardContext*);
template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template struct SelfAttention<float>;
template struct SelfAttention<double>;
template struct TransformerBlock<float>;
template struct TransformerBlock<double>;

}  // namespace splm::nn

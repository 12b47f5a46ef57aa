#pragma once

#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "splm/config.hpp"
#include "splm/nn.hpp"
#include "splm/tensor.hpp"

namespace testing_support {

using splm::Tensor;

inline oracle::Vec values(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

inline oracle::Vec param(const splm::nn::ParameterStore<double>& store, const std::string& name) {
  return values(store.get(name));
}

inline oracle::BlockParams block_params(const splm::nn::ParameterStore<double>& s,
                                        const std::string& p, std::size_t dim, std::size_t ff,
                                        std::size_t heads) {
  oracle::BlockParams b;
  b.ln1_g = param(s, p + ".ln1.gamma");
  b.ln1_b = param(s, p + ".ln1.beta");
  b.ln2_g = param(s, p + ".ln2.gamma");
  b.ln2_b = param(s, p + ".ln2.beta");
  b.q_w = param(s, p + ".attn.q.weight");
  b.q_b = param(s, p + ".attn.q.bias");
  b.k_w = param(s, p + ".attn.k.weight");
  b.k_b = param(s, p + ".attn.k.bias");
  b.v_w = param(s, p + ".attn.v.weight");
  b.v_b = param(s, p + ".attn.v.bias");
  b.o_w = param(s, p + ".attn.o.weight");
  b.o_b = param(s, p + ".attn.o.bias");
  b.ff_in_w = param(s, p + ".ff_in.weight");
  b.ff_in_b = param(s, p + ".ff_in.bias");
  b.ff_out_w = param(s, p + ".ff_out.weight");
  b.ff_out_b = param(s, p + ".ff_out.bias");
  b.dim = dim;
  b.ff = ff;
  b.heads = heads;
  return b;
}

template <typename T>
void randomize(splm::nn::ParameterStore<T>& store, std::mt19937_64& rng, double bound) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& t : store.tensors())
    for (auto& x : t.data()) x = T(u(rng));
}

inline Tensor<double> tensor(splm::Shape shape, oracle::Vec v) {
  return Tensor<double>::from(std::move(shape), std::move(v));
}

// Small model shapes that keep tests fast.
inline splm::ModelConfig tiny_model(splm::FilterVariant variant, std::size_t context = 16) {
  splm::ModelConfig m;
  m.n_layers = 2;
  m.d_model = 16;
  m.d_ff = 32;
  m.n_heads = 4;
  m.context_len = context;
  m.head_hidden = 32;
  m.filter.variant = variant;
  m.filter.channels = 8;
  m.filter.single_length = 5;
  m.filter.scale_lengths = {2, 3, 5, 7};
  m.filter.mask.bottleneck = 8;
  m.filter.mask.heads = 2;
  m.filter.mask.ff = 16;
  return m;
}

}  // namespace testing_support

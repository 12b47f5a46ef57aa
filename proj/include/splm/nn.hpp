#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "splm/ops.hpp"
#include "splm/rng.hpp"
#include "splm/tensor.hpp"

namespace splm::nn {

struct Init {
  enum class Kind { zeros, ones, normal, uniform } kind = Kind::zeros;
  double scale = 0;  // std for normal, half-width for uniform

  static Init zeros() { return {Kind::zeros, 0}; }
  static Init ones() { return {Kind::ones, 0}; }
  static Init normal(double std) { return {Kind::normal, std}; }
  static Init uniform(double bound) { return {Kind::uniform, bound}; }
};

// Named trainable tensors in creation order. Each parameter draws its initial
// values from a stream derived from (seed, name), so two models that share
// parameter names get identical values for them regardless of what else they
// contain.
template <typename T>
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed) : seed_(seed) {}

  Tensor<T> create(const std::string& name, Shape shape, Init init);

  const Tensor<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
  std::vector<Tensor<T>> tensors() const;

  std::size_t count() const;
  void zero_grad();

 private:
  std::uint64_t seed_;
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
};

// Per-call state for stochastic layers.
struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;
};

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, ForwardContext* ctx);

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  static Linear create(ParameterStore<T>& store, const std::string& prefix, std::size_t in,
                       std::size_t out, Init weight_init);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;

  static LayerNorm create(ParameterStore<T>& store, const std::string& prefix, std::size_t dim);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

// Multi-head self attention over x[B, L, d]. With `causal`, position t
// attends to positions 0..t only.
template <typename T>
struct SelfAttention {
  Linear<T> query, key, value, out;
  std::size_t heads = 1;
  bool causal = true;

  static SelfAttention create(ParameterStore<T>& store, const std::string& prefix,
                              std::size_t dim, std::size_t heads, bool causal);
  Tensor<T> operator()(const Tensor<T>& x, ForwardContext* ctx = nullptr) const;
};

// Pre-norm block: x + attn(ln1(x)), then + ff(ln2(x)) with a ReLU MLP.
template <typename T>
struct TransformerBlock {
  LayerNorm<T> ln1, ln2;
  SelfAttention<T> attn;
  Linear<T> ff_in, ff_out;

  static TransformerBlock create(ParameterStore<T>& store, const std::string& prefix,
                                 std::size_t dim, std::size_t ff, std::size_t heads, bool causal);
  Tensor<T> operator()(const Tensor<T>& x, ForwardContext* ctx = nullptr) const;
};

// Std of the normal init used for dense and embedding weights.
inline constexpr double kWeightStd = 0.02;

}  // namespace splm::nn

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "splm/tensor.hpp"

// Differentiable primitives. Broadcasting is limited to "suffix" form: the
// second operand's shape must equal a trailing slice of the first's.
namespace splm::ops {

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

// x[..., k] @ w[k, m] -> [..., m]
template <typename T>
Tensor<T> matmul(const Tensor<T>& x, const Tensor<T>& w);

// Batched product a[B, n, k] @ b[B, k, m]; with transpose_b, b is [B, m, k].
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

// Softmax over the last axis. With `causal`, the last two axes form a square
// [query, key] block and keys after the query get exactly zero weight.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, bool causal = false);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

// table[V, d] gathered at ids; result shape is ids_shape + [d].
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids, const Shape& ids_shape);

// Causal convolution with zero left padding of K-1:
//   out[t] = sum_{j<K} kernel[j] * signal[t - j]
// Accepted forms: signal [L] with kernel [K] -> [L]; signal [N, L] with
// kernels [M, K] -> [N, M, L].
template <typename T>
Tensor<T> causal_conv1d(const Tensor<T>& signal, const Tensor<T>& kernel);

// tf[N, M, L] weighted over channels by w[M] -> [N, L]
template <typename T>
Tensor<T> mix_channels(const Tensor<T>& tf, const Tensor<T>& w);

// tf[N, M, L] weighted per token by W[N, L, M] -> [N, L]
template <typename T>
Tensor<T> mix_channels_tokenwise(const Tensor<T>& tf, const Tensor<T>& weights);

// Joins tensors along `axis`; all other extents must agree.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// Output axis i is input axis perm[i].
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> mean(const Tensor<T>& x);

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis);

// Mean negative log-likelihood (nats) of integer targets under
// softmax(logits) over the last axis.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets);

// Mean elementwise Huber loss against a constant target of the same shape.
template <typename T>
Tensor<T> huber(const Tensor<T>& pred, std::span<const T> target, T delta = T(1));

}  // namespace splm::ops

#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "splm/config.hpp"
#include "splm/nn.hpp"
#include "splm/tensor.hpp"

// Learnable causal filterbank applied to token-axis signals.
//
// A site sees activations x[B, L, E]. Each of the B*E coordinate signals
// e[0..L) is decomposed by M causal kernels into a time-frequency
// representation tf[k][t] = relu((h_k * e)[t]), reweighted channel-wise and
// added back: e' = e + sum_k w_k tf[k]. One bank is shared by all E
// coordinates of a site.
namespace splm::filter {

template <typename T>
struct FilterBank {
  // One [channels_in_scale, length] kernel tensor per scale, in channel order.
  std::vector<Tensor<T>> kernels;
  Tensor<T> mix;  // [M]

  static FilterBank create(nn::ParameterStore<T>& store, const std::string& prefix,
                           const FilterConfig& cfg);

  std::size_t channels() const { return mix.numel(); }
  std::size_t scale_count() const { return kernels.size(); }
  std::vector<std::size_t> kernel_lengths() const;
  std::size_t param_count() const;
};

// Parameters one site adds: sum of kernel lengths plus M mix weights.
std::size_t site_param_count(const FilterConfig& cfg);

// signals [N, L] -> tf [N, M, L]; a single signal [L] gives [M, L].
template <typename T>
Tensor<T> decompose(const Tensor<T>& signals, const FilterBank<T>& bank);

// sum_k w_k relu(h_k * e). Requires a single-scale bank.
template <typename T>
Tensor<T> filter_fixed(const Tensor<T>& signals, const FilterBank<T>& bank);

// Same weighted sum over every channel of every scale.
template <typename T>
Tensor<T> filter_multiscale(const Tensor<T>& signals, const FilterBank<T>& bank);

// e + filtered; shapes must match exactly.
template <typename T>
Tensor<T> apply_residual(const Tensor<T>& e, const Tensor<T>& filtered);

// [B, L, E] <-> [B*E, L] views of a site's activations.
template <typename T>
Tensor<T> to_signals(const Tensor<T>& x);
template <typename T>
Tensor<T> from_signals(const Tensor<T>& signals, std::size_t batch, std::size_t dim);

// Full fixed-weight site: x + filter(x) over every coordinate signal.
template <typename T>
Tensor<T> filter_site(const Tensor<T>& x, const FilterBank<T>& bank);

// Kernel export rows: site,channel,kernel_length,tap_index,value.
void write_kernel_csv_header(std::ostream& out);
template <typename T>
void write_kernel_csv(std::ostream& out, std::size_t site, const FilterBank<T>& bank);

}  // namespace splm::filter

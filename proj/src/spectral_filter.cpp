#include "splm/spectral_filter.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <stdexcept>

namespace splm::filter {

template <typename T>
FilterBank<T> FilterBank<T>::create(nn::ParameterStore<T>& store, const std::string& prefix,
                                    const FilterConfig& cfg) {
  cfg.validate();
  const auto scales = cfg.scales();
  const std::size_t per_scale = cfg.channels / scales.size();
  FilterBank<T> bank;
  for (std::size_t s = 0; s < scales.size(); ++s) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(scales[s]));
    bank.kernels.push_back(store.create(prefix + ".kernel" + std::to_string(s),
                                        {per_scale, scales[s]}, nn::Init::uniform(bound)));
  }
  // Zero mix weights make a fresh site the identity map.
  bank.mix = store.create(prefix + ".mix", {cfg.channels}, nn::Init::zeros());
  return bank;
}

template <typename T>
std::vector<std::size_t> FilterBank<T>::kernel_lengths() const {
  std::vector<std::size_t> out;
  for (const auto& k : kernels) out.insert(out.end(), k.dim(0), k.dim(1));
  return out;
}

template <typename T>
std::size_t FilterBank<T>::param_count() const {
  std::size_t n = mix.numel();
  for (const auto& k : kernels) n += k.numel();
  return n;
}

std::size_t site_param_count(const FilterConfig& cfg) {
  std::size_t n = cfg.channels;
  for (auto len : cfg.kernel_lengths()) n += len;
  return n;
}

template <typename T>
Tensor<T> decompose(const Tensor<T>& signals, const FilterBank<T>& bank) {
  if (signals.rank() == 1) {
    auto tf = decompose(ops::reshape(signals, {1, signals.dim(0)}), bank);
    return ops::reshape(tf, {tf.dim(1), tf.dim(2)});
  }
  if (signals.rank() != 2) throw std::invalid_argument("decompose: expected [N,L] signals");
  std::vector<Tensor<T>> parts;
  parts.reserve(bank.kernels.size());
  for (const auto& k : bank.kernels) parts.push_back(ops::relu(ops::causal_conv1d(signals, k)));
  return parts.size() == 1 ? parts.front() : ops::concat(parts, 1);
}

namespace {

template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& signals, const FilterBank<T>& bank) {
  if (signals.rank() == 1) {
    auto f = weighted_sum(ops::reshape(signals, {1, signals.dim(0)}), bank);
    return ops::reshape(f, {signals.dim(0)});
  }
  return ops::mix_channels(decompose(signals, bank), bank.mix);
}

}  // namespace

template <typename T>
Tensor<T> filter_fixed(const Tensor<T>& signals, const FilterBank<T>& bank) {
  if (bank.scale_count() != 1) {
    throw std::invalid_argument("filter_fixed: bank has " + std::to_string(bank.scale_count()) +
                                " scales; use filter_multiscale");
  }
  return weighted_sum(signals, bank);
}

template <typename T>
Tensor<T> filter_multiscale(const Tensor<T>& signals, const FilterBank<T>& bank) {
  return weighted_sum(signals, bank);
}

template <typename T>
Tensor<T> apply_residual(const Tensor<T>& e, const Tensor<T>& filtered) {
  if (e.shape() != filtered.shape()) {
    throw std::invalid_argument("apply_residual: shape " + shape_str(e.shape()) + " vs " +
                                shape_str(filtered.shape()));
  }
  return ops::add(e, filtered);
}

template <typename T>
Tensor<T> to_signals(const Tensor<T>& x) {
  if (x.rank() != 3) throw std::invalid_argument("to_signals: expected [B,L,E]");
  const std::size_t batch = x.dim(0), len = x.dim(1), dim = x.dim(2);
  return ops::reshape(ops::permute(x, {0, 2, 1}), {batch * dim, len});
}

template <typename T>
Tensor<T> from_signals(const Tensor<T>& signals, std::size_t batch, std::size_t dim) {
  const std::size_t len = signals.dim(1);
  return ops::permute(ops::reshape(signals, {batch, dim, len}), {0, 2, 1});
}

template <typename T>
Tensor<T> filter_site(const Tensor<T>& x, const FilterBank<T>& bank) {
  auto f = filter_multiscale(to_signals(x), bank);
  return apply_residual(x, from_signals(f, x.dim(0), x.dim(2)));
}

void write_kernel_csv_header(std::ostream& out) {
  out << "site,channel,kernel_length,tap_index,value\n";
}

template <typename T>
void write_kernel_csv(std::ostream& out, std::size_t site, const FilterBank<T>& bank) {
  const auto flags = out.flags();
  const auto precision = out.precision();
  out << std::setprecision(std::numeric_limits<T>::max_digits10);
  std::size_t channel = 0;
  for (const auto& k : bank.kernels) {
    const std::size_t rows = k.dim(0), taps = k.dim(1);
    auto kd = k.data();
    for (std::size_t r = 0; r < rows; ++r, ++channel)
      for (std::size_t j = 0; j < taps; ++j)
        out << site << ',' << channel << ',' << taps << ',' << j << ',' << kd[r * taps + j]
            << '\n';
  }
  out.flags(flags);
  out.precision(precision);
}

#define SPLM_INSTANTIATE_FILTER(T)                                                        \
  template struct FilterBank<T>;                                                          \
  template Tensor<T> decompose(const Tensor<T>&, const FilterBank<T>&);                   \
  template Tensor<T> filter_fixed(const Tensor<T>&, const FilterBank<T>&);                \
  template Tensor<T> filter_multiscale(const Tensor<T>&, const FilterBank<T>&);           \
  template Tensor<T> apply_residual(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> to_signals(const Tensor<T>&);                                        \
  template Tensor<T> from_signals(const Tensor<T>&, std::size_t, std::size_t);            \
  template Tensor<T> filter_site(const Tensor<T>&, const FilterBank<T>&);                 \
  template void write_kernel_csv(std::ostream&, std::size_t, const FilterBank<T>&);

SPLM_INSTANTIATE_FILTER(float)
SPLM_INSTANTIATE_FILTER(double)

}  // namespace splm::filter

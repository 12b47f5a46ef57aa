#include "splm/dct.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>

#include "splm/binary_io.hpp"
#include "splm/rng.hpp"

namespace splm::dct {

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

constexpr char kDatasetMagic[4] = {'S', 'P', 'D', 'S'};
constexpr std::uint8_t kDatasetVersion = 1;

}  // namespace

template <typename T>
const std::vector<T>& dct_matrix(std::size_t len) {
  if (len == 0) throw std::invalid_argument("dct: empty signal");
  static std::mutex mu;
  static std::map<std::size_t, std::vector<T>> cache;
  std::lock_guard lock(mu);
  auto it = cache.find(len);
  if (it != cache.end()) return it->second;
  std::vector<T> c(len * len);
  const double n_f = static_cast<double>(len);
  for (std::size_t k = 0; k < len; ++k) {
    const double s = k == 0 ? std::sqrt(1.0 / n_f) : std::sqrt(2.0 / n_f);
    for (std::size_t n = 0; n < len; ++n) {
      const double arg = std::numbers::pi * (static_cast<double>(n) + 0.5) *
                         static_cast<double>(k) / n_f;
      c[k * len + n] = static_cast<T>(s * std::cos(arg));
    }
  }
  return cache.emplace(len, std::move(c)).first->second;
}

template <typename T>
std::vector<T> dct2(std::span<const T> x) {
  const auto& c = dct_matrix<T>(x.size());
  const std::size_t len = x.size();
  std::vector<T> out(len, T(0));
  for (std::size_t k = 0; k < len; ++k) {
    T acc = 0;
    for (std::size_t n = 0; n < len; ++n) acc += c[k * len + n] * x[n];
    out[k] = acc;
  }
  return out;
}

template <typename T>
std::vector<T> idct2(std::span<const T> coeffs) {
  const auto& c = dct_matrix<T>(coeffs.size());
  const std::size_t len = coeffs.size();
  std::vector<T> out(len, T(0));
  for (std::size_t n = 0; n < len; ++n) {
    T acc = 0;
    for (std::size_t k = 0; k < len; ++k) acc += c[k * len + n] * coeffs[k];
    out[n] = acc;
  }
  return out;
}

template <typename T>
Tensor<T> spectral_reweight(const Tensor<T>& x, const Tensor<T>& weights) {
  if (x.rank() == 1) {
    auto y = spectral_reweight(ops::reshape(x, {1, x.dim(0), 1}), weights);
    return ops::reshape(y, {x.dim(0)});
  }
  if (x.rank() != 3) throw std::invalid_argument("spectral_reweight: expected [L] or [B,L,E]");
  const std::size_t batch = x.dim(0), len = x.dim(1), dim = x.dim(2);
  if (weights.rank() != 1 || weights.dim(0) != len) {
    throw std::invalid_argument("spectral_reweight: " + std::to_string(weights.numel()) +
                                " weights for signals of length " + std::to_string(len));
  }
  const auto& c = dct_matrix<T>(len);
  auto xd = x.data();
  auto wd = weights.data();

  // Plain ascending-index sums, the same order as dct2/idct2 per column.
  std::vector<T> coeffs(x.numel());  // C x per batch item, kept for the weight gradient
  std::vector<T> out(x.numel());
  std::vector<T> scaled(len * dim);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t off = b * len * dim;
    for (std::size_t k = 0; k < len; ++k)
      for (std::size_t e = 0; e < dim; ++e) {
        T acc = 0;
        for (std::size_t n = 0; n < len; ++n) acc += c[k * len + n] * xd[off + n * dim + e];
        coeffs[off + k * dim + e] = acc;
        scaled[k * dim + e] = wd[k] * acc;
      }
    for (std::size_t n = 0; n < len; ++n)
      for (std::size_t e = 0; e < dim; ++e) {
        T acc = 0;
        for (std::size_t k = 0; k < len; ++k) acc += c[k * len + n] * scaled[k * dim + e];
        out[off + n * dim + e] = acc;
      }
  }
  return detail::make_result<T>(
      x.shape(), std::move(out), "spectral_reweight", {x, weights},
      [x, weights, batch, len, dim, coeffs = std::move(coeffs)](const TensorImpl<T>& o) {
        const auto L = static_cast<Eigen::Index>(len);
        const auto E = static_cast<Eigen::Index>(dim);
        CMapRM<T> c(dct_matrix<T>(len).data(), L, L);
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> w(weights.data().data(), L);
        T* gx = detail::wants_grad(x) ? detail::grad_of(x).data() : nullptr;
        T* gw = detail::wants_grad(weights) ? detail::grad_of(weights).data() : nullptr;
        MatRM<T> gc(L, E);
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t off = b * len * dim;
          gc.noalias() = c * CMapRM<T>(o.grad.data() + off, L, E);
          if (gw) {
            CMapRM<T> xc(coeffs.data() + off, L, E);
            for (Eigen::Index k = 0; k < L; ++k) gw[k] += gc.row(k).dot(xc.row(k));
          }
          if (gx) MapRM<T>(gx + off, L, E).noalias() += c.transpose() * (w.asDiagonal() * gc);
        }
      });
}

void ClassifierConfig::validate() const {
  if (n_layers == 0 || d_model == 0 || n_heads == 0 || d_ff == 0 || tokens == 0 ||
      input_dim == 0 || classes < 2) {
    throw std::invalid_argument("classifier: dimensions must be positive and classes >= 2");
  }
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("classifier: d_model not divisible by heads");
  }
}

template <typename T>
DctClassifier<T>::DctClassifier(ClassifierConfig cfg, std::uint64_t seed)
    : cfg_(cfg), store_(seed) {
  cfg_.validate();
  const auto w = nn::Init::normal(nn::kWeightStd);
  input_proj_ = nn::Linear<T>::create(store_, "input", cfg_.input_dim, cfg_.d_model, w);
  positions_ = store_.create("pos_emb", {cfg_.tokens, cfg_.d_model}, w);
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    blocks_.push_back(nn::TransformerBlock<T>::create(store_, "block" + std::to_string(l),
                                                      cfg_.d_model, cfg_.d_ff, cfg_.n_heads,
                                                      /*causal=*/false));
    if (cfg_.use_dct) {
      dct_weights_.push_back(
          store_.create("dct" + std::to_string(l) + ".weight", {cfg_.tokens}, nn::Init::ones()));
    }
  }
  final_norm_ = nn::LayerNorm<T>::create(store_, "ln_f", cfg_.d_model);
  classifier_ = nn::Linear<T>::create(store_, "classifier", cfg_.d_model, cfg_.classes, w);
}

template <typename T>
Tensor<T> DctClassifier<T>::forward(std::span<const T> inputs, std::size_t batch,
                                    nn::ForwardContext* ctx) const {
  if (inputs.size() != batch * cfg_.tokens * cfg_.input_dim) {
    throw std::invalid_argument("classifier: expected inputs [batch][" +
                                std::to_string(cfg_.tokens) + "][" +
                                std::to_string(cfg_.input_dim) + "]");
  }
  auto x = Tensor<T>::from({batch, cfg_.tokens, cfg_.input_dim},
                           std::vector<T>(inputs.begin(), inputs.end()));
  x = ops::add(input_proj_(x), positions_);
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    x = blocks_[l](x, ctx);
    if (cfg_.use_dct) x = spectral_reweight(x, dct_weights_[l]);
  }
  return classifier_(ops::mean_axis(final_norm_(x), 1));
}

template <typename T>
Tensor<T> DctClassifier<T>::loss(const Tensor<T>& logits, std::span<const int> labels) const {
  if (cfg_.loss == ClassifierLoss::cross_entropy) return ops::cross_entropy(logits, labels);
  std::vector<T> onehot(logits.numel(), T(0));
  for (std::size_t i = 0; i < labels.size(); ++i)
    onehot.at(i * cfg_.classes + static_cast<std::size_t>(labels[i])) = T(1);
  return ops::huber(logits, std::span<const T>(onehot));
}

template <typename T>
std::vector<Tensor<T>> DctClassifier<T>::trainable(bool train_dct_weights) const {
  std::vector<Tensor<T>> out;
  for (const auto& [name, t] : store_.entries()) {
    const bool is_dct = name.starts_with("dct");
    if (!is_dct || train_dct_weights) out.push_back(t);
  }
  return out;
}

std::size_t planted_frequency(std::size_t label) { return 1 + 2 * label; }

SynthDataset make_synthetic(const SynthConfig& cfg, std::size_t count, std::string_view stream) {
  if (cfg.classes < 2 || cfg.length == 0 || cfg.dim == 0) {
    throw std::invalid_argument("synthetic: need >= 2 classes and positive length/dim");
  }
  if (2 * planted_frequency(cfg.classes - 1) >= cfg.length) {
    throw std::invalid_argument("synthetic: highest planted frequency exceeds Nyquist for length " +
                                std::to_string(cfg.length));
  }
  SynthDataset d;
  d.count = count;
  d.length = cfg.length;
  d.dim = cfg.dim;
  d.classes = cfg.classes;
  d.inputs.resize(count * cfg.length * cfg.dim);
  d.labels.resize(count);
  Rng rng = make_rng(cfg.seed, stream);
  std::uniform_int_distribution<int> label_dist(0, static_cast<int>(cfg.classes) - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> direction(cfg.dim);
  if (cfg.shared_direction) {
    // Drawn from its own stream so train and test sets agree on it.
    Rng dir_rng = make_rng(cfg.seed, "direction");
    for (auto& u : direction) u = gauss(dir_rng);
  }
  for (std::size_t i = 0; i < count; ++i) {
    const int label = label_dist(rng);
    d.labels[i] = label;
    const double phase = 2 * std::numbers::pi * cfg.phase_spread * unit(rng);
    if (!cfg.shared_direction)
      for (auto& u : direction) u = gauss(rng);
    const double f = static_cast<double>(planted_frequency(static_cast<std::size_t>(label)));
    for (std::size_t t = 0; t < cfg.length; ++t) {
      const double wave = std::cos(2 * std::numbers::pi * f * static_cast<double>(t) /
                                       static_cast<double>(cfg.length) +
                                   phase);
      for (std::size_t j = 0; j < cfg.dim; ++j)
        d.inputs[(i * cfg.length + t) * cfg.dim + j] =
            wave * direction[j] + cfg.noise * gauss(rng);
    }
  }
  return d;
}

void write_dataset_file(const std::filesystem::path& path, const SynthDataset& data) {
  io::Bytes out;
  io::put_bytes(out, kDatasetMagic, 4);
  out.push_back(kDatasetVersion);
  io::put_le<std::uint64_t>(out, data.count);
  io::put_le<std::uint64_t>(out, data.length);
  io::put_le<std::uint64_t>(out, data.dim);
  io::put_le<std::uint64_t>(out, data.classes);
  for (double v : data.inputs) io::put_le<double>(out, v);
  for (int l : data.labels) io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(l));
  io::write_file(path.string(), out);
}

SynthDataset read_dataset_file(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path.string());
  io::Reader in(bytes);
  auto magic = in.take(4);
  if (!std::equal(magic.begin(), magic.end(), kDatasetMagic)) {
    throw std::runtime_error(path.string() + ": not a dataset file (bad magic)");
  }
  if (in.get_le<std::uint8_t>() != kDatasetVersion) {
    throw std::runtime_error(path.string() + ": unsupported dataset version");
  }
  SynthDataset d;
  d.count = in.get_le<std::uint64_t>();
  d.length = in.get_le<std::uint64_t>();
  d.dim = in.get_le<std::uint64_t>();
  d.classes = in.get_le<std::uint64_t>();
  const std::size_t n = d.count * d.length * d.dim;
  if (in.remaining() != n * 8 + d.count * 4) throw std::runtime_error(path.string() + ": bad size");
  d.inputs.resize(n);
  for (auto& v : d.inputs) v = in.get_le<double>();
  d.labels.resize(d.count);
  for (auto& l : d.labels) {
    l = static_cast<int>(in.get_le<std::uint32_t>());
    if (static_cast<std::size_t>(l) >= d.classes) throw std::runtime_error("label out of range");
  }
  return d;
}

#define SPLM_INSTANTIATE_DCT(T)                                            \
  template const std::vector<T>& dct_matrix<T>(std::size_t);               \
  template std::vector<T> dct2<T>(std::span<const T>);                     \
  template std::vector<T> idct2<T>(std::span<const T>);                    \
  template Tensor<T> spectral_reweight(const Tensor<T>&, const Tensor<T>&); \
  template class DctClassifier<T>;

SPLM_INSTANTIATE_DCT(float)
SPLM_INSTANTIATE_DCT(double)

}  // namespace splm::dct

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "splm/nn.hpp"
#include "splm/tensor.hpp"

namespace splm::dct {

// Orthonormal DCT-II:
//   X[k] = s_k * sum_n x[n] cos(pi (n + 1/2) k / L),
//   s_0 = sqrt(1/L), s_k = sqrt(2/L) for k > 0.
// idct2 is its transpose (DCT-III with the same scaling).
template <typename T>
std::vector<T> dct2(std::span<const T> x);

template <typename T>
std::vector<T> idct2(std::span<const T> coeffs);

// Row-major [L][L] orthonormal DCT-II matrix.
template <typename T>
const std::vector<T>& dct_matrix(std::size_t len);

// e' = idct2(w * dct2(e)) along the token axis. Accepts a single signal
// e[L], or activations x[B, L, E] where every coordinate signal x[b, :, i]
// is reweighted by the same w[L]. Throws std::invalid_argument when w's
// length differs from L.
template <typename T>
Tensor<T> spectral_reweight(const Tensor<T>& x, const Tensor<T>& weights);

enum class ClassifierLoss { huber, cross_entropy };

struct ClassifierConfig {
  std::size_t n_layers = 6;
  std::size_t d_model = 64;
  std::size_t n_heads = 8;
  std::size_t d_ff = 256;
  std::size_t tokens = 40;
  std::size_t input_dim = 16;
  std::size_t classes = 4;
  bool use_dct = true;
  ClassifierLoss loss = ClassifierLoss::huber;

  void validate() const;
};

// Non-causal encoder: input projection plus learned positions, then blocks
// each followed by a spectral reweighting site (weights start at 1), final
// norm, mean pool over tokens, linear classifier.
template <typename T>
class DctClassifier {
 public:
  DctClassifier(ClassifierConfig cfg, std::uint64_t seed);

  const ClassifierConfig& config() const { return cfg_; }
  nn::ParameterStore<T>& params() { return store_; }
  const nn::ParameterStore<T>& params() const { return store_; }
  const std::vector<Tensor<T>>& dct_weights() const { return dct_weights_; }

  // inputs [batch][tokens][input_dim] -> logits [batch, classes]
  Tensor<T> forward(std::span<const T> inputs, std::size_t batch,
                    nn::ForwardContext* ctx = nullptr) const;

  // Configured loss: Huber against one-hot targets or cross-entropy.
  Tensor<T> loss(const Tensor<T>& logits, std::span<const int> labels) const;

  // Parameters an optimizer should update; DCT weights only if trainable.
  std::vector<Tensor<T>> trainable(bool train_dct_weights) const;

 private:
  ClassifierConfig cfg_;
  nn::ParameterStore<T> store_;
  nn::Linear<T> input_proj_;
  Tensor<T> positions_;
  std::vector<nn::TransformerBlock<T>> blocks_;
  std::vector<Tensor<T>> dct_weights_;
  nn::LayerNorm<T> final_norm_;
  nn::Linear<T> classifier_;
};

// Planted-frequency sequence classification. Sample with label c carries a
// component cos(2 pi f_c t / length + phase) along a random direction plus
// Gaussian noise; f_c = 1 + 2c cycles per window.
struct SynthConfig {
  std::size_t classes = 4;
  std::size_t length = 40;
  std::size_t dim = 16;
  double noise = 1.0;
  // One planted direction for the whole dataset instead of one per sample.
  bool shared_direction = true;
  // Phase drawn uniformly from [0, 2*pi*phase_spread); 0 pins it at 0.
  double phase_spread = 0.25;
  std::uint64_t seed = 1;
};

struct SynthDataset {
  std::size_t count = 0;
  std::size_t length = 0;
  std::size_t dim = 0;
  std::size_t classes = 0;
  std::vector<double> inputs;  // [count][length][dim]
  std::vector<int> labels;

  std::span<const double> sample(std::size_t i) const {
    return std::span<const double>(inputs).subspan(i * length * dim, length * dim);
  }
};

std::size_t planted_frequency(std::size_t label);

SynthDataset make_synthetic(const SynthConfig& cfg, std::size_t count, std::string_view stream);

// "SPDS", u8 version (1), u64 count, u64 length, u64 dim, u64 classes,
// then count*length*dim little-endian f64 inputs and count u32 labels.
void write_dataset_file(const std::filesystem::path& path, const SynthDataset& data);
SynthDataset read_dataset_file(const std::filesystem::path& path);

}  // namespace splm::dct

#include "splm/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace splm::ops {

using detail::grad_of;
using detail::make_result;
using detail::wants_grad;

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

void require(bool cond, std::string_view what) {
  if (!cond) throw std::invalid_argument(std::string(what));
}

// Number of leading repetitions when `small` is a suffix of `big`.
std::size_t suffix_repeats(const Shape& big, const Shape& small, const char* op) {
  bool ok = small.size() <= big.size() &&
            std::equal(small.rbegin(), small.rend(), big.rbegin());
  if (!ok)
    throw std::invalid_argument(std::string(op) + ": shape " + shape_str(small) +
                                " is not a suffix of " + shape_str(big));
  return numel(big) / std::max<std::size_t>(numel(small), 1);
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t reps = suffix_repeats(a.shape(), b.shape(), "add");
  const std::size_t nb = b.numel();
  auto ad = a.data();
  auto bd = b.data();
  std::vector<T> out(ad.begin(), ad.end());
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t j = 0; j < nb; ++j) out[r * nb + j] += bd[j];
  return make_result<T>(a.shape(), std::move(out), "add", {a, b},
                        [a, b, reps, nb](const TensorImpl<T>& o) {
                          if (wants_grad(a)) {
                            auto& ga = grad_of(a);
                            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i];
                          }
                          if (wants_grad(b)) {
                            auto& gb = grad_of(b);
                            for (std::size_t r = 0; r < reps; ++r)
                              for (std::size_t j = 0; j < nb; ++j) gb[j] += o.grad[r * nb + j];
                          }
                        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t reps = suffix_repeats(a.shape(), b.shape(), "mul");
  const std::size_t nb = b.numel();
  auto ad = a.data();
  auto bd = b.data();
  std::vector<T> out(ad.size());
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t j = 0; j < nb; ++j) out[r * nb + j] = ad[r * nb + j] * bd[j];
  return make_result<T>(a.shape(), std::move(out), "mul", {a, b},
                        [a, b, reps, nb](const TensorImpl<T>& o) {
                          auto ad = a.data();
                          auto bd = b.data();
                          if (wants_grad(a)) {
                            auto& ga = grad_of(a);
                            for (std::size_t r = 0; r < reps; ++r)
                              for (std::size_t j = 0; j < nb; ++j)
                                ga[r * nb + j] += o.grad[r * nb + j] * bd[j];
                          }
                          if (wants_grad(b)) {
                            auto& gb = grad_of(b);
                            for (std::size_t r = 0; r < reps; ++r)
                              for (std::size_t j = 0; j < nb; ++j)
                                gb[j] += o.grad[r * nb + j] * ad[r * nb + j];
                          }
                        });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  auto ad = a.data();
  std::vector<T> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] * factor;
  return make_result<T>(a.shape(), std::move(out), "scale", {a},
                        [a, factor](const TensorImpl<T>& o) {
                          auto& ga = grad_of(a);
                          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i] * factor;
                        });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& x, const Tensor<T>& w) {
  require(w.rank() == 2 && x.rank() >= 1 && x.shape().back() == w.dim(0),
          "matmul: incompatible shapes " + shape_str(x.shape()) + " @ " + shape_str(w.shape()));
  const auto k = static_cast<Eigen::Index>(w.dim(0));
  const auto m = static_cast<Eigen::Index>(w.dim(1));
  const auto rows = static_cast<Eigen::Index>(x.numel() / w.dim(0));
  Shape out_shape = x.shape();
  out_shape.back() = w.dim(1);
  std::vector<T> out(static_cast<std::size_t>(rows * m));
  MapRM<T>(out.data(), rows, m).noalias() =
      CMapRM<T>(x.data().data(), rows, k) * CMapRM<T>(w.data().data(), k, m);
  return make_result<T>(std::move(out_shape), std::move(out), "matmul", {x, w},
                        [x, w, rows, k, m](const TensorImpl<T>& o) {
                          CMapRM<T> g(o.grad.data(), rows, m);
                          if (wants_grad(x)) {
                            MapRM<T>(grad_of(x).data(), rows, k).noalias() +=
                                g * CMapRM<T>(w.data().data(), k, m).transpose();
                          }
                          if (wants_grad(w)) {
                            MapRM<T>(grad_of(w).data(), k, m).noalias() +=
                                CMapRM<T>(x.data().data(), rows, k).transpose() * g;
                          }
                        });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0),
          "bmm: expected [B,n,k] and [B,k,m], got " + shape_str(a.shape()) + ", " +
              shape_str(b.shape()));
  const auto batch = a.dim(0);
  const auto n = static_cast<Eigen::Index>(a.dim(1));
  const auto k = static_cast<Eigen::Index>(a.dim(2));
  const auto m = static_cast<Eigen::Index>(transpose_b ? b.dim(1) : b.dim(2));
  require(static_cast<Eigen::Index>(transpose_b ? b.dim(2) : b.dim(1)) == k,
          "bmm: inner dimensions differ");
  std::vector<T> out(batch * static_cast<std::size_t>(n * m));
  const T* ap = a.data().data();
  const T* bp = b.data().data();
  for (std::size_t i = 0; i < batch; ++i) {
    CMapRM<T> ai(ap + i * n * k, n, k);
    MapRM<T> oi(out.data() + i * n * m, n, m);
    if (transpose_b) {
      oi.noalias() = ai * CMapRM<T>(bp + i * m * k, m, k).transpose();
    } else {
      oi.noalias() = ai * CMapRM<T>(bp + i * k * m, k, m);
    }
  }
  return make_result<T>(
      {batch, static_cast<std::size_t>(n), static_cast<std::size_t>(m)}, std::move(out), "bmm",
      {a, b}, [a, b, transpose_b, batch, n, k, m](const TensorImpl<T>& o) {
        const T* ap = a.data().data();
        const T* bp = b.data().data();
        T* ga = wants_grad(a) ? grad_of(a).data() : nullptr;
        T* gb = wants_grad(b) ? grad_of(b).data() : nullptr;
        for (std::size_t i = 0; i < batch; ++i) {
          CMapRM<T> g(o.grad.data() + i * n * m, n, m);
          CMapRM<T> ai(ap + i * n * k, n, k);
          if (transpose_b) {
            CMapRM<T> bi(bp + i * m * k, m, k);
            if (ga) MapRM<T>(ga + i * n * k, n, k).noalias() += g * bi;
            if (gb) MapRM<T>(gb + i * m * k, m, k).noalias() += g.transpose() * ai;
          } else {
            CMapRM<T> bi(bp + i * k * m, k, m);
            if (ga) MapRM<T>(ga + i * n * k, n, k).noalias() += g * bi.transpose();
            if (gb) MapRM<T>(gb + i * k * m, k, m).noalias() += ai.transpose() * g;
          }
        }
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = xd[i] > T(0) ? xd[i] : T(0);
  return make_result<T>(x.shape(), std::move(out), "relu", {x}, [x](const TensorImpl<T>& o) {
    auto xd = x.data();
    auto& gx = grad_of(x);
    // subgradient at 0 is 0
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (xd[i] > T(0)) gx[i] += o.grad[i];
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-xd[i]));
  return make_result<T>(x.shape(), std::move(out), "sigmoid", {x},
                        [x](const TensorImpl<T>& o) {
                          auto& gx = grad_of(x);
                          for (std::size_t i = 0; i < gx.size(); ++i) {
                            const T y = o.data[i];
                            gx[i] += o.grad[i] * y * (T(1) - y);
                          }
                        });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, bool causal) {
  require(x.rank() >= 1, "softmax: scalar input");
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.numel() / std::max<std::size_t>(width, 1);
  if (causal) {
    require(x.rank() >= 2 && x.shape()[x.rank() - 2] == width,
            "softmax: causal mask needs square trailing block, got " + shape_str(x.shape()));
  }
  auto xd = x.data();
  std::vector<T> out(xd.size(), T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t visible = causal ? (r % width) + 1 : width;
    const T* in = xd.data() + r * width;
    T* y = out.data() + r * width;
    const T mx = *std::max_element(in, in + visible);
    T total = 0;
    for (std::size_t j = 0; j < visible; ++j) {
      y[j] = std::exp(in[j] - mx);
      total += y[j];
    }
    for (std::size_t j = 0; j < visible; ++j) y[j] /= total;
  }
  return make_result<T>(x.shape(), std::move(out), "softmax", {x},
                        [x, rows, width, causal](const TensorImpl<T>& o) {
                          auto& gx = grad_of(x);
                          for (std::size_t r = 0; r < rows; ++r) {
                            const std::size_t visible = causal ? (r % width) + 1 : width;
                            const T* y = o.data.data() + r * width;
                            const T* g = o.grad.data() + r * width;
                            T dot = 0;
                            for (std::size_t j = 0; j < visible; ++j) dot += y[j] * g[j];
                            for (std::size_t j = 0; j < visible; ++j)
                              gx[r * width + j] += y[j] * (g[j] - dot);
                          }
                        });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require(x.rank() >= 1, "layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  require(gamma.rank() == 1 && gamma.dim(0) == d && beta.rank() == 1 && beta.dim(0) == d,
          "layer_norm: gamma/beta must be [" + std::to_string(d) + "]");
  const std::size_t rows = x.numel() / d;
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  std::vector<T> out(xd.size());
  std::vector<T> xhat(xd.size());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xd.data() + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= T(d);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xr[j] - mu) * rstd[r];
      out[r * d + j] = xhat[r * d + j] * gd[j] + bd[j];
    }
  }
  return make_result<T>(
      x.shape(), std::move(out), "layer_norm", {x, gamma, beta},
      [x, gamma, beta, rows, d, xhat = std::move(xhat),
       rstd = std::move(rstd)](const TensorImpl<T>& o) {
        auto gd = gamma.data();
        T* gx = wants_grad(x) ? grad_of(x).data() : nullptr;
        T* gg = wants_grad(gamma) ? grad_of(gamma).data() : nullptr;
        T* gb = wants_grad(beta) ? grad_of(beta).data() : nullptr;
        std::vector<T> dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* g = o.grad.data() + r * d;
          const T* xh = xhat.data() + r * d;
          T mean_dx = 0;
          T mean_dx_xh = 0;
          for (std::size_t j = 0; j < d; ++j) {
            if (gg) gg[j] += g[j] * xh[j];
            if (gb) gb[j] += g[j];
            dxhat[j] = g[j] * gd[j];
            mean_dx += dxhat[j];
            mean_dx_xh += dxhat[j] * xh[j];
          }
          if (!gx) continue;
          mean_dx /= T(d);
          mean_dx_xh /= T(d);
          for (std::size_t j = 0; j < d; ++j)
            gx[r * d + j] += rstd[r] * (dxhat[j] - mean_dx - xh[j] * mean_dx_xh);
        }
      });
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids, const Shape& ids_shape) {
  require(table.rank() == 2, "embedding: table must be [V,d]");
  require(ids.size() == numel(ids_shape), "embedding: ids do not match shape");
  const std::size_t vocab = table.dim(0);
  const std::size_t d = table.dim(1);
  auto td = table.data();
  std::vector<T> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
      throw std::invalid_argument("embedding: id " + std::to_string(ids[i]) + " outside [0," +
                                  std::to_string(vocab) + ")");
    std::copy_n(td.data() + ids[i] * d, d, out.data() + i * d);
  }
  Shape shape = ids_shape;
  shape.push_back(d);
  std::vector<int> saved(ids.begin(), ids.end());
  return make_result<T>(std::move(shape), std::move(out), "embedding", {table},
                        [table, d, saved = std::move(saved)](const TensorImpl<T>& o) {
                          auto& gt = grad_of(table);
                          for (std::size_t i = 0; i < saved.size(); ++i)
                            for (std::size_t j = 0; j < d; ++j)
                              gt[saved[i] * d + j] += o.grad[i * d + j];
                        });
}

template <typename T>
Tensor<T> causal_conv1d(const Tensor<T>& signal, const Tensor<T>& kernel) {
  require(signal.defined() && kernel.defined() && signal.numel() > 0 && kernel.numel() > 0,
          "causal_conv1d: empty signal or kernel");
  const bool single = signal.rank() == 1 && kernel.rank() == 1;
  require(single || (signal.rank() == 2 && kernel.rank() == 2),
          "causal_conv1d: expected [L]*[K] or [N,L]*[M,K], got " + shape_str(signal.shape()) +
              ", " + shape_str(kernel.shape()));
  const std::size_t n_sig = single ? 1 : signal.dim(0);
  const std::size_t len = signal.shape().back();
  const std::size_t n_ker = single ? 1 : kernel.dim(0);
  const std::size_t taps = kernel.shape().back();

  auto sd = signal.data();
  auto kd = kernel.data();
  std::vector<T> out(n_sig * n_ker * len);
  for (std::size_t n = 0; n < n_sig; ++n) {
    const T* s = sd.data() + n * len;
    for (std::size_t m = 0; m < n_ker; ++m) {
      const T* h = kd.data() + m * taps;
      T* y = out.data() + (n * n_ker + m) * len;
      // Tap-major so the t loop vectorizes; each y[t] still sums taps in
      // ascending j, same as the textbook loop.
      for (std::size_t j = 0; j < std::min(taps, len); ++j) {
        const T hj = h[j];
        for (std::size_t t = j; t < len; ++t) y[t] += hj * s[t - j];
      }
    }
  }
  Shape shape = single ? Shape{len} : Shape{n_sig, n_ker, len};
  return make_result<T>(
      std::move(shape), std::move(out), "causal_conv1d", {signal, kernel},
      [signal, kernel, n_sig, n_ker, len, taps](const TensorImpl<T>& o) {
        auto sd = signal.data();
        auto kd = kernel.data();
        T* gs = wants_grad(signal) ? grad_of(signal).data() : nullptr;
        T* gk = wants_grad(kernel) ? grad_of(kernel).data() : nullptr;
        for (std::size_t n = 0; n < n_sig; ++n) {
          const T* s = sd.data() + n * len;
          for (std::size_t m = 0; m < n_ker; ++m) {
            const T* h = kd.data() + m * taps;
            const T* g = o.grad.data() + (n * n_ker + m) * len;
            const std::size_t reach = std::min(taps, len);
            // Loop orders differ from the forward's transpose but every
            // accumulator still receives its terms in ascending t.
            if (gs) {
              T* gsn = gs + n * len;
              for (std::size_t j = 0; j < reach; ++j) {
                const T hj = h[j];
                for (std::size_t t = j; t < len; ++t) gsn[t - j] += g[t] * hj;
              }
            }
            if (gk) {
              T* gkm = gk + m * taps;
              std::size_t j = 0;
              for (; j + 4 <= reach; j += 4) {
                T a0 = gkm[j], a1 = gkm[j + 1], a2 = gkm[j + 2], a3 = gkm[j + 3];
                for (std::size_t t = j; t < len; ++t) {
                  a0 += g[t] * s[t - j];
                  if (t >= j + 1) a1 += g[t] * s[t - j - 1];
                  if (t >= j + 2) a2 += g[t] * s[t - j - 2];
                  if (t >= j + 3) a3 += g[t] * s[t - j - 3];
                }
                gkm[j] = a0;
                gkm[j + 1] = a1;
                gkm[j + 2] = a2;
                gkm[j + 3] = a3;
              }
              for (; j < reach; ++j) {
                T a = gkm[j];
                for (std::size_t t = j; t < len; ++t) a += g[t] * s[t - j];
                gkm[j] = a;
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> mix_channels(const Tensor<T>& tf, const Tensor<T>& w) {
  require(tf.rank() == 3 && w.rank() == 1 && w.dim(0) == tf.dim(1),
          "mix_channels: expected tf[N,M,L] and w[M], got " + shape_str(tf.shape()) + ", " +
              shape_str(w.shape()));
  const std::size_t n_sig = tf.dim(0), ch = tf.dim(1), len = tf.dim(2);
  auto td = tf.data();
  auto wd = w.data();
  std::vector<T> out(n_sig * len, T(0));
  for (std::size_t n = 0; n < n_sig; ++n)
    for (std::size_t m = 0; m < ch; ++m) {
      const T* row = td.data() + (n * ch + m) * len;
      T* y = out.data() + n * len;
      for (std::size_t t = 0; t < len; ++t) y[t] += wd[m] * row[t];
    }
  return make_result<T>({n_sig, len}, std::move(out), "mix_channels", {tf, w},
                        [tf, w, n_sig, ch, len](const TensorImpl<T>& o) {
                          auto td = tf.data();
                          auto wd = w.data();
                          T* gtf = wants_grad(tf) ? grad_of(tf).data() : nullptr;
                          T* gw = wants_grad(w) ? grad_of(w).data() : nullptr;
                          for (std::size_t n = 0; n < n_sig; ++n)
                            for (std::size_t m = 0; m < ch; ++m) {
                              const T* g = o.grad.data() + n * len;
                              const std::size_t base = (n * ch + m) * len;
                              T acc = 0;
                              for (std::size_t t = 0; t < len; ++t) {
                                if (gtf) gtf[base + t] += wd[m] * g[t];
                                acc += g[t] * td[base + t];
                              }
                              if (gw) gw[m] += acc;
                            }
                        });
}

template <typename T>
Tensor<T> mix_channels_tokenwise(const Tensor<T>& tf, const Tensor<T>& weights) {
  require(tf.rank() == 3 && weights.rank() == 3 && weights.dim(0) == tf.dim(0) &&
              weights.dim(1) == tf.dim(2) && weights.dim(2) == tf.dim(1),
          "mix_channels_tokenwise: expected tf[N,M,L] and W[N,L,M], got " +
              shape_str(tf.shape()) + ", " + shape_str(weights.shape()));
  const std::size_t n_sig = tf.dim(0), ch = tf.dim(1), len = tf.dim(2);
  auto td = tf.data();
  auto wd = weights.data();
  std::vector<T> out(n_sig * len, T(0));
  for (std::size_t n = 0; n < n_sig; ++n)
    for (std::size_t t = 0; t < len; ++t) {
      const T* wt = wd.data() + (n * len + t) * ch;
      T acc = 0;
      for (std::size_t m = 0; m < ch; ++m) acc += wt[m] * td[(n * ch + m) * len + t];
      out[n * len + t] = acc;
    }
  return make_result<T>({n_sig, len}, std::move(out), "mix_channels_tokenwise", {tf, weights},
                        [tf, weights, n_sig, ch, len](const TensorImpl<T>& o) {
                          auto td = tf.data();
                          auto wd = weights.data();
                          T* gtf = wants_grad(tf) ? grad_of(tf).data() : nullptr;
                          T* gw = wants_grad(weights) ? grad_of(weights).data() : nullptr;
                          for (std::size_t n = 0; n < n_sig; ++n)
                            for (std::size_t t = 0; t < len; ++t) {
                              const T g = o.grad[n * len + t];
                              const std::size_t wbase = (n * len + t) * ch;
                              for (std::size_t m = 0; m < ch; ++m) {
                                const std::size_t ti = (n * ch + m) * len + t;
                                if (gtf) gtf[ti] += wd[wbase + m] * g;
                                if (gw) gw[wbase + m] += td[ti] * g;
                              }
                            }
                        });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& first = parts.front().shape();
  require(axis < first.size(), "concat: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    require(s.size() == first.size(), "concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      require(i == axis || s[i] == first[i], "concat: extent mismatch off the join axis");
    extents.push_back(s[axis]);
    total += s[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  std::vector<T> out(outer * total * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const std::size_t chunk = extents[p] * inner;
      std::copy_n(parts[p].data().data() + o * chunk, chunk,
                  out.data() + (o * total + offset) * inner);
      offset += extents[p];
    }
  }
  return make_result<T>(std::move(out_shape), std::move(out), "concat", parts,
                        [parts, extents, outer, total, inner](const TensorImpl<T>& o) {
                          std::size_t offset = 0;
                          for (std::size_t p = 0; p < parts.size(); ++p) {
                            const std::size_t chunk = extents[p] * inner;
                            if (wants_grad(parts[p])) {
                              auto& g = grad_of(parts[p]);
                              for (std::size_t a = 0; a < outer; ++a)
                                for (std::size_t i = 0; i < chunk; ++i)
                                  g[a * chunk + i] += o.grad[(a * total + offset) * inner + i];
                            }
                            offset += extents[p];
                          }
                        });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(numel(shape) == x.numel(),
          "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  auto xd = x.data();
  return make_result<T>(std::move(shape), std::vector<T>(xd.begin(), xd.end()), "reshape", {x},
                        [x](const TensorImpl<T>& o) {
                          auto& gx = grad_of(x);
                          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i];
                        });
}

namespace {

// For each flat output index, the flat input index it reads.
std::vector<std::size_t> permute_index(const Shape& in, const std::vector<std::size_t>& perm,
                                       Shape& out_shape) {
  const std::size_t r = in.size();
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  out_shape.resize(r);
  std::vector<std::size_t> stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in[perm[i]];
    stride[i] = in_stride[perm[i]];
  }
  const std::size_t total = numel(in);
  std::vector<std::size_t> index(total);
  std::vector<std::size_t> counter(r, 0);
  std::size_t src = 0;
  for (std::size_t k = 0; k < total; ++k) {
    index[k] = src;
    for (std::size_t ax = r; ax-- > 0;) {
      src += stride[ax];
      if (++counter[ax] < out_shape[ax]) break;
      src -= stride[ax] * out_shape[ax];
      counter[ax] = 0;
    }
  }
  return index;
}

}  // namespace

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  require(perm.size() == x.rank(), "permute: rank mismatch");
  std::vector<bool> used(perm.size(), false);
  for (auto p : perm) {
    require(p < perm.size() && !used[p], "permute: not a permutation");
    used[p] = true;
  }
  Shape out_shape;
  auto index = permute_index(x.shape(), perm, out_shape);
  auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = xd[index[k]];
  return make_result<T>(std::move(out_shape), std::move(out), "permute", {x},
                        [x, index = std::move(index)](const TensorImpl<T>& o) {
                          auto& gx = grad_of(x);
                          for (std::size_t k = 0; k < index.size(); ++k)
                            gx[index[k]] += o.grad[k];
                        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  auto xd = x.data();
  const T total = std::accumulate(xd.begin(), xd.end(), T(0));
  return make_result<T>({}, {total}, "sum", {x}, [x](const TensorImpl<T>& o) {
    auto& gx = grad_of(x);
    for (auto& g : gx) g += o.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  require(x.numel() > 0, "mean: empty tensor");
  return scale(sum(x), T(1) / T(x.numel()));
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis) {
  require(axis < x.rank(), "mean_axis: axis out of range");
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t extent = s[axis];
  require(extent > 0, "mean_axis: empty axis");
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out_shape.push_back(s[i]);
  auto xd = x.data();
  std::vector<T> out(outer * inner, T(0));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t a = 0; a < extent; ++a)
      for (std::size_t i = 0; i < inner; ++i)
        out[o * inner + i] += xd[(o * extent + a) * inner + i];
  for (auto& v : out) v /= T(extent);
  return make_result<T>(std::move(out_shape), std::move(out), "mean_axis", {x},
                        [x, outer, extent, inner](const TensorImpl<T>& o) {
                          auto& gx = grad_of(x);
                          const T inv = T(1) / T(extent);
                          for (std::size_t a = 0; a < outer; ++a)
                            for (std::size_t e = 0; e < extent; ++e)
                              for (std::size_t i = 0; i < inner; ++i)
                                gx[(a * extent + e) * inner + i] += o.grad[a * inner + i] * inv;
                        });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets) {
  require(logits.rank() >= 1, "cross_entropy: scalar logits");
  const std::size_t vocab = logits.shape().back();
  const std::size_t rows = logits.numel() / vocab;
  require(targets.size() == rows, "cross_entropy: " + std::to_string(targets.size()) +
                                      " targets for " + std::to_string(rows) + " rows");
  auto ld = logits.data();
  std::vector<T> probs(ld.size());
  T total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab)
      throw std::invalid_argument("cross_entropy: target outside vocabulary");
    const T* z = ld.data() + r * vocab;
    const T mx = *std::max_element(z, z + vocab);
    T norm = 0;
    for (std::size_t j = 0; j < vocab; ++j) {
      probs[r * vocab + j] = std::exp(z[j] - mx);
      norm += probs[r * vocab + j];
    }
    for (std::size_t j = 0; j < vocab; ++j) probs[r * vocab + j] /= norm;
    total += std::log(norm) + mx - z[targets[r]];
  }
  std::vector<int> saved(targets.begin(), targets.end());
  return make_result<T>(
      {}, {total / T(rows)}, "cross_entropy", {logits},
      [logits, rows, vocab, probs = std::move(probs), saved = std::move(saved)](
          const TensorImpl<T>& o) {
        auto& gl = grad_of(logits);
        const T g = o.grad[0] / T(rows);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < vocab; ++j) gl[r * vocab + j] += g * probs[r * vocab + j];
          gl[r * vocab + saved[r]] -= g;
        }
      });
}

template <typename T>
Tensor<T> huber(const Tensor<T>& pred, std::span<const T> target, T delta) {
  require(target.size() == pred.numel(), "huber: target size mismatch");
  require(delta > T(0), "huber: delta must be positive");
  auto pd = pred.data();
  T total = 0;
  for (std::size_t i = 0; i < pd.size(); ++i) {
    const T d = std::abs(pd[i] - target[i]);
    total += d <= delta ? T(0.5) * d * d : delta * (d - T(0.5) * delta);
  }
  const std::size_t n = pd.size();
  std::vector<T> saved(target.begin(), target.end());
  return make_result<T>({}, {total / T(n)}, "huber", {pred},
                        [pred, delta, n, saved = std::move(saved)](const TensorImpl<T>& o) {
                          auto pd = pred.data();
                          auto& gp = grad_of(pred);
                          const T g = o.grad[0] / T(n);
                          for (std::size_t i = 0; i < n; ++i) {
                            const T d = pd[i] - saved[i];
                            gp[i] += g * std::clamp(d, -delta, delta);
                          }
                        });
}

#define SPLM_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> scale(const Tensor<T>&, T);                                             \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool);                          \
  template Tensor<T> relu(const Tensor<T>&);                                                 \
  template Tensor<T> sigmoid(const Tensor<T>&);                                              \
  template Tensor<T> softmax(const Tensor<T>&, bool);                                        \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);    \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const int>, const Shape&);        \
  template Tensor<T> causal_conv1d(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> mix_channels(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> mix_channels_tokenwise(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                    \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                       \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);             \
  template Tensor<T> sum(const Tensor<T>&);                                                  \
  template Tensor<T> mean(const Tensor<T>&);                                                 \
  template Tensor<T> mean_axis(const Tensor<T>&, std::size_t);                               \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>);                  \
  template Tensor<T> huber(const Tensor<T>&, std::span<const T>, T);

SPLM_INSTANTIATE_OPS(float)
SPLM_INSTANTIATE_OPS(double)

}  // namespace splm::ops

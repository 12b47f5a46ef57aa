#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace splm {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
class Tensor;

template <typename T>
struct TensorImpl;

// One recorded operation. `inputs` keeps its operands alive until the tape is
// released; `backward` reads the output gradient and accumulates into the
// inputs that require grad.
template <typename T>
struct TapeNode {
  std::string op;
  std::vector<Tensor<T>> inputs;
  std::function<void(const TensorImpl<T>& out)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool backward_done = false;
  std::shared_ptr<TapeNode<T>> node;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

// Shared handle to a dense row-major array. Copies alias the same storage.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  std::vector<T> to_vector() const { return impl_->data; }

  bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }
  std::span<T> grad() { return impl_->grad; }
  std::span<const T> grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  // Clears the "already differentiated" mark so backward may run again from
  // this tensor. Gradients are not touched.
  void reset_backward() { impl_->backward_done = false; }

  T item() const;

  bool is_leaf() const { return impl_->node == nullptr; }
  const std::shared_ptr<TapeNode<T>>& node() const { return impl_->node; }

  // New leaf holding a copy of the data, outside of any tape.
  Tensor detach() const;

  TensorImpl<T>* impl() const { return impl_.get(); }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

  std::shared_ptr<TensorImpl<T>> impl_;
};

struct BackwardReport {
  // Loss was not connected to any tensor requiring grad; nothing was done.
  bool detached = false;
  std::size_t nodes_visited = 0;
};

// Reverse-mode sweep from a scalar loss. Throws std::invalid_argument for a
// non-scalar loss and std::logic_error when called twice on the same loss
// without reset_backward().
template <typename T>
BackwardReport backward(Tensor<T>& loss);

// While alive, ops on this thread do not record tape nodes.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

namespace detail {

// Builds an op result. The node is attached only when recording is enabled
// and at least one input requires grad.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::string op,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(const TensorImpl<T>&)> backward_fn);

template <typename T>
inline bool wants_grad(const Tensor<T>& t) {
  return t.defined() && t.requires_grad();
}

// Accumulation target for an input; allocates a zero gradient on first use.
template <typename T>
inline std::vector<T>& grad_of(const Tensor<T>& t) {
  t.impl()->ensure_grad();
  return t.impl()->grad;
}

}  // namespace detail

}  // namespace splm

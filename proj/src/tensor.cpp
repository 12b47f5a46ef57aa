#include "splm/tensor.hpp"

#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace splm {

namespace {
thread_local int no_grad_depth = 0;
}

NoGradGuard::NoGradGuard() { ++no_grad_depth; }
NoGradGuard::~NoGradGuard() { --no_grad_depth; }
bool grad_enabled() { return no_grad_depth == 0; }

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = splm::numel(shape);
  return from(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  if (values.size() != splm::numel(shape)) {
    throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                " values for shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("item() on tensor of shape " + shape_str(shape()));
  }
  return impl_->data[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from(impl_->shape, impl_->data, false);
}

template <typename T>
BackwardReport backward(Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got " +
                                (loss.defined() ? shape_str(loss.shape()) : "undefined"));
  }
  BackwardReport report;
  if (!loss.requires_grad()) {
    report.detached = true;
    return report;
  }
  auto* root = loss.impl();
  if (root->backward_done) {
    throw std::logic_error("backward: already run on this loss; call reset_backward() first");
  }

  // Iterative post-order DFS gives a topological order of the tape.
  std::vector<TensorImpl<T>*> order;
  std::unordered_set<TensorImpl<T>*> seen;
  std::vector<std::pair<TensorImpl<T>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    const auto& node = impl->node;
    if (node && next < node->inputs.size()) {
      auto* child = node->inputs[next++].impl();
      if (child && child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(impl);
    stack.pop_back();
  }

  // Interior gradients restart from zero; only leaves accumulate across calls.
  for (auto* impl : order)
    if (impl->node && !impl->grad.empty()) std::ranges::fill(impl->grad, T(0));
  root->ensure_grad();
  root->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* impl = *it;
    if (!impl->node) continue;
    impl->ensure_grad();
    impl->node->backward(*impl);
    ++report.nodes_visited;
  }
  root->backward_done = true;
  return report;
}

namespace detail {

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::string op,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(const TensorImpl<T>&)> backward_fn) {
  auto out = Tensor<T>::from(std::move(shape), std::move(data), false);
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || wants_grad(in);
  if (!any) return out;
  auto node = std::make_shared<TapeNode<T>>();
  node->op = std::move(op);
  node->inputs = std::move(inputs);
  node->backward = std::move(backward_fn);
  out.impl()->requires_grad = true;
  out.impl()->node = std::move(node);
  return out;
}

template Tensor<float> make_result(Shape, std::vector<float>, std::string,
                                   std::vector<Tensor<float>>,
                                   std::function<void(const TensorImpl<float>&)>);
template Tensor<double> make_result(Shape, std::vector<double>, std::string,
                                    std::vector<Tensor<double>>,
                                    std::function<void(const TensorImpl<double>&)>);

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;
template BackwardReport backward(Tensor<float>&);
template BackwardReport backward(Tensor<double>&);

}  // namespace splm

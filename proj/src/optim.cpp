#include "cosrec/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cosrec {

template <typename T>
void Adam<T>::step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  }
  if (m_.empty()) {
    for (auto* p : params) {
      m_.emplace_back(p->shape());
      v_.emplace_back(p->shape());
    }
  }
  if (m_.size() != params.size()) throw ShapeError("adam: parameter count changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() || m_[i].shape() != grads[i].shape()) {
      throw ShapeError("adam: gradient " + std::to_string(i) + " has shape " + shape_string(grads[i].shape()) +
                       ", parameter has " + shape_string(params[i]->shape()));
    }
    if (!grads[i].all_finite()) throw std::domain_error("adam: non-finite gradient for parameter " + std::to_string(i));
  }

  ++step_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const T lr = static_cast<T>(options_.learning_rate);
  const T eps = static_cast<T>(options_.epsilon);
  const T decay = static_cast<T>(options_.weight_decay);
  const T c1 = static_cast<T>(1.0 / correction1);
  const T c2 = static_cast<T>(1.0 / correction2);
  const T tb1 = static_cast<T>(b1), tb2 = static_cast<T>(b2);

  for (std::size_t i = 0; i < params.size(); ++i) {
    T* p = params[i]->raw();
    const T* g = grads[i].raw();
    T* m = m_[i].raw();
    T* v = v_[i].raw();
    for (std::size_t k = 0; k < grads[i].size(); ++k) {
      const T grad = g[k] + decay * p[k];
      m[k] = tb1 * m[k] + (T{1} - tb1) * grad;
      v[k] = tb2 * v[k] + (T{1} - tb2) * grad * grad;
      p[k] -= lr * (m[k] * c1) / (std::sqrt(v[k] * c2) + eps);
    }
  }
}

template <typename T>
void Adam<T>::restore(std::uint64_t steps, std::vector<Tensor<T>> first, std::vector<Tensor<T>> second) {
  if (first.size() != second.size()) throw ShapeError("adam: moment lists differ in length");
  for (std::size_t i = 0; i < first.size(); ++i) {
    if (first[i].shape() != second[i].shape()) throw ShapeError("adam: moment shapes differ");
  }
  step_ = steps;
  m_ = std::move(first);
  v_ = std::move(second);
}

template class Adam<float>;
template class Adam<double>;

}  // namespace cosrec

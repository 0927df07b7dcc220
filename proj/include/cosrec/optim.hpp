#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cosrec/tensor.hpp"

namespace cosrec {

struct AdamOptions {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;

  friend bool operator==(const AdamOptions&, const AdamOptions&) = default;
};

// Adam with bias correction. Moments are created lazily on the first step
// and must keep the parameter shapes afterwards.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  // Throws ShapeError on shape mismatch and std::domain_error on a
  // non-finite gradient; parameters are untouched in either case.
  void step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads);

  const AdamOptions& options() const { return options_; }
  std::uint64_t steps() const { return step_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }

  void restore(std::uint64_t steps, std::vector<Tensor<T>> first, std::vector<Tensor<T>> second);

 private:
  AdamOptions options_;
  std::uint64_t step_ = 0;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace cosrec

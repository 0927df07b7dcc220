#pragma once

#include <cstddef>
#include <stdexcept>

#include "cosrec/rng.hpp"
#include "cosrec/tensor.hpp"

namespace cosrec {

enum class Mode { train, eval };

class StaleCacheError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Saved forward state is armed by one forward call and consumed by exactly one
// backward call.
class CacheGuard {
 public:
  void arm() { live_ = true; }
  void consume(const char* layer);
  bool live() const { return live_; }

 private:
  bool live_ = false;
};

// ---------------------------------------------------------------------------
// Convolution: stride 1, no padding, cross-correlation.

template <typename T>
struct Conv2d {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  bool has_bias = true;
  Tensor<T> weight;  // out x in x k x k
  Tensor<T> bias;    // out, empty when !has_bias

  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t k, bool with_bias = true);
};

template <typename T>
struct Conv2dCache {
  CacheGuard guard;
  Shape input_shape;
  Tensor<T> columns;  // (B*Ho*Wo) x (C*k*k) gathered patches
};

template <typename T>
struct Conv2dGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Conv2d<T>& layer, Conv2dCache<T>* cache = nullptr);

template <typename T>
Conv2dGrads<T> conv2d_backward(Conv2dCache<T>& cache, const Conv2d<T>& layer, const Tensor<T>& grad_y);

// ---------------------------------------------------------------------------
// Batch normalization over every axis except the channel axis (axis 1).
// Accepts B x C or B x C x H x W input.

template <typename T>
struct BatchNorm {
  std::size_t channels = 0;
  T epsilon = T(1e-5);
  T momentum = T(0.1);
  Tensor<T> scale;
  Tensor<T> shift;
  Tensor<T> running_mean;
  Tensor<T> running_var;

  BatchNorm() = default;
  explicit BatchNorm(std::size_t ch);
};

template <typename T>
struct BatchNormCache {
  CacheGuard guard;
  Mode mode = Mode::train;
  Tensor<T> normalized;
  Tensor<T> inv_std;  // per channel
};

template <typename T>
struct BatchNormGrads {
  Tensor<T> input;
  Tensor<T> scale;
  Tensor<T> shift;
};

// Train mode normalizes with batch statistics and updates the running
// statistics (unbiased variance) as an exponential moving average.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, BatchNorm<T>& layer, Mode mode,
                            BatchNormCache<T>* cache = nullptr);

template <typename T>
Tensor<T> batchnorm_infer(const Tensor<T>& x, const BatchNorm<T>& layer, BatchNormCache<T>* cache = nullptr);

template <typename T>
BatchNormGrads<T> batchnorm_backward(BatchNormCache<T>& cache, const BatchNorm<T>& layer,
                                     const Tensor<T>& grad_y);

// ---------------------------------------------------------------------------
// Fully connected: y = x W^T + b with W stored out x in.

template <typename T>
struct Dense {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  Tensor<T> weight;
  Tensor<T> bias;

  Dense() = default;
  Dense(std::size_t in, std::size_t out);
};

template <typename T>
struct DenseCache {
  CacheGuard guard;
  Tensor<T> input;
};

template <typename T>
struct DenseGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Dense<T>& layer, DenseCache<T>* cache = nullptr);

template <typename T>
DenseGrads<T> dense_backward(DenseCache<T>& cache, const Dense<T>& layer, const Tensor<T>& grad_y);

// ---------------------------------------------------------------------------
// Pointwise activations.

template <typename T>
struct MaskCache {
  CacheGuard guard;
  Tensor<T> mask;  // relu: 0/1 gate, sigmoid: output, dropout: scaled keep mask
};

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x, MaskCache<T>* cache = nullptr);
template <typename T>
Tensor<T> relu_backward(MaskCache<T>& cache, const Tensor<T>& grad_y);

template <typename T>
Tensor<T> sigmoid_forward(const Tensor<T>& x, MaskCache<T>* cache = nullptr);
template <typename T>
Tensor<T> sigmoid_backward(MaskCache<T>& cache, const Tensor<T>& grad_y);

template <typename T>
T sigmoid(T x);

// Inverted dropout: survivors are divided by the keep probability, so eval
// mode is the identity.
struct DropoutSpec {
  double rate = 0.5;
  double keep_probability() const { return 1.0 - rate; }
};

template <typename T>
Tensor<T> dropout_forward(const Tensor<T>& x, const DropoutSpec& spec, Mode mode, Rng& rng,
                          MaskCache<T>* cache = nullptr);

// Applies a caller-supplied 0/1 keep mask, for reproducible gradient checks.
template <typename T>
Tensor<T> dropout_forward_with_mask(const Tensor<T>& x, const DropoutSpec& spec,
                                    const Tensor<T>& keep, MaskCache<T>* cache = nullptr);

template <typename T>
Tensor<T> dropout_backward(MaskCache<T>& cache, const Tensor<T>& grad_y);

}  // namespace cosrec

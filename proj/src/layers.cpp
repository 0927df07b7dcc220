#include "cosrec/layers.hpp"

#include <cmath>
#include <string>

namespace cosrec {

void CacheGuard::consume(const char* layer) {
  if (!live_) {
    throw StaleCacheError(std::string(layer) + " backward called without a fresh forward cache");
  }
  live_ = false;
}

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& got, const Shape& want, const char* what) {
  if (got.shape() != want) {
    throw ShapeError(std::string(what) + ": gradient shape " + shape_string(got.shape()) +
                     " does not match forward output " + shape_string(want));
  }
}

// Spatial positions per channel: 1 for B x C input, H*W for B x C x H x W.
template <typename T>
std::size_t channel_extent(const Tensor<T>& x, std::size_t channels, const char* what) {
  if ((x.rank() != 2 && x.rank() != 4) || x.dim(1) != channels) {
    throw ShapeError(std::string(what) + ": expected B x " + std::to_string(channels) +
                     " [x H x W] input, got " + shape_string(x.shape()));
  }
  return x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
Conv2d<T>::Conv2d(std::size_t in, std::size_t out, std::size_t k, bool with_bias)
    : in_channels(in), out_channels(out), kernel(k), has_bias(with_bias), weight({out, in, k, k}) {
  if (in == 0 || out == 0 || k == 0) throw ShapeError("conv2d: channels and kernel must be >= 1");
  if (with_bias) bias = Tensor<T>({out});
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Conv2d<T>& layer, Conv2dCache<T>* cache) {
  if (x.rank() != 4 || x.dim(1) != layer.in_channels) {
    throw ShapeError("conv2d: expected B x " + std::to_string(layer.in_channels) +
                     " x H x W input, got " + shape_string(x.shape()));
  }
  const std::size_t batch = x.dim(0), channels = x.dim(1), height = x.dim(2), width = x.dim(3);
  const std::size_t k = layer.kernel;
  if (height < k || width < k) {
    throw ShapeError("conv2d: spatial extent " + shape_string(x.shape()) + " smaller than kernel " +
                     std::to_string(k));
  }
  const std::size_t out_h = height - k + 1, out_w = width - k + 1;
  const std::size_t positions = out_h * out_w;
  const std::size_t patch = channels * k * k;

  Tensor<T> columns({batch * positions, patch});
  T* col = columns.raw();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t oh = 0; oh < out_h; ++oh) {
      for (std::size_t ow = 0; ow < out_w; ++ow) {
        for (std::size_t c = 0; c < channels; ++c) {
          for (std::size_t kh = 0; kh < k; ++kh) {
            const T* src = &x.at(n, c, oh + kh, ow);
            for (std::size_t kw = 0; kw < k; ++kw) *col++ = src[kw];
          }
        }
      }
    }
  }

  const Tensor<T> w2d = layer.weight.reshaped({layer.out_channels, patch});
  const Tensor<T> product = matmul(columns, w2d, false, true);  // (B*P) x out

  Tensor<T> y({batch, layer.out_channels, out_h, out_w});
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t p = 0; p < positions; ++p) {
      const T* row = product.raw() + (n * positions + p) * layer.out_channels;
      for (std::size_t o = 0; o < layer.out_channels; ++o) {
        y[(n * layer.out_channels + o) * positions + p] = row[o] + (layer.has_bias ? layer.bias[o] : T{0});
      }
    }
  }

  if (cache) {
    cache->input_shape = x.shape();
    cache->columns = std::move(columns);
    cache->guard.arm();
  }
  return y;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(Conv2dCache<T>& cache, const Conv2d<T>& layer, const Tensor<T>& grad_y) {
  cache.guard.consume("conv2d");
  const Shape& in_shape = cache.input_shape;
  const std::size_t batch = in_shape[0], channels = in_shape[1], height = in_shape[2], width = in_shape[3];
  const std::size_t k = layer.kernel;
  const std::size_t out_h = height - k + 1, out_w = width - k + 1;
  const std::size_t positions = out_h * out_w;
  const std::size_t patch = channels * k * k;
  const std::size_t out_ch = layer.out_channels;
  require_same_shape(grad_y, {batch, out_ch, out_h, out_w}, "conv2d");
  if (cache.columns.dim(1) != patch) throw StaleCacheError("conv2d cache does not match layer");

  Tensor<T> gy({batch * positions, out_ch});
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t o = 0; o < out_ch; ++o) {
      const T* src = grad_y.raw() + (n * out_ch + o) * positions;
      for (std::size_t p = 0; p < positions; ++p) gy[(n * positions + p) * out_ch + o] = src[p];
    }
  }

  Conv2dGrads<T> grads;
  grads.weight = matmul(gy, cache.columns, true, false);
  grads.weight.reshape({out_ch, channels, k, k});
  if (layer.has_bias) {
    grads.bias = Tensor<T>({out_ch});
    for (std::size_t r = 0; r < batch * positions; ++r) {
      for (std::size_t o = 0; o < out_ch; ++o) grads.bias[o] += gy[r * out_ch + o];
    }
  }

  const Tensor<T> w2d = layer.weight.reshaped({out_ch, patch});
  const Tensor<T> grad_cols = matmul(gy, w2d);  // (B*P) x patch
  grads.input = Tensor<T>(in_shape);
  const T* col = grad_cols.raw();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t oh = 0; oh < out_h; ++oh) {
      for (std::size_t ow = 0; ow < out_w; ++ow) {
        for (std::size_t c = 0; c < channels; ++c) {
          for (std::size_t kh = 0; kh < k; ++kh) {
            T* dst = &grads.input.at(n, c, oh + kh, ow);
            for (std::size_t kw = 0; kw < k; ++kw) dst[kw] += *col++;
          }
        }
      }
    }
  }
  cache.columns = Tensor<T>();
  return grads;
}

// ---------------------------------------------------------------------------

template <typename T>
BatchNorm<T>::BatchNorm(std::size_t ch)
    : channels(ch), scale({ch}, T{1}), shift({ch}), running_mean({ch}), running_var({ch}, T{1}) {
  if (ch == 0) throw ShapeError("batchnorm: channels must be >= 1");
}

namespace {

template <typename T>
Tensor<T> batchnorm_apply(const Tensor<T>& x, const BatchNorm<T>& layer, const Tensor<T>& mean,
                          const Tensor<T>& var, Mode mode, BatchNormCache<T>* cache) {
  const std::size_t channels = layer.channels;
  const std::size_t batch = x.dim(0);
  const std::size_t spatial = x.size() / (batch ? batch * channels : 1);
  Tensor<T> inv_std({channels});
  for (std::size_t c = 0; c < channels; ++c) inv_std[c] = T{1} / std::sqrt(var[c] + layer.epsilon);

  Tensor<T> normalized;
  if (cache) normalized = Tensor<T>(x.shape());
  Tensor<T> y(x.shape());
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (n * channels + c) * spatial;
      for (std::size_t s = 0; s < spatial; ++s) {
        const T h = (x[base + s] - mean[c]) * inv_std[c];
        if (cache) normalized[base + s] = h;
        y[base + s] = h * layer.scale[c] + layer.shift[c];
      }
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
    cache->guard.arm();
  }
  return y;
}

}  // namespace

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, BatchNorm<T>& layer, Mode mode, BatchNormCache<T>* cache) {
  if (mode == Mode::eval) return batchnorm_infer(x, layer, cache);
  const std::size_t spatial = channel_extent(x, layer.channels, "batchnorm");
  const std::size_t batch = x.dim(0);
  const std::size_t channels = layer.channels;
  const std::size_t count = batch * spatial;
  if (count < 2) throw ShapeError("batchnorm: train mode needs at least 2 values per channel");

  Tensor<T> mean({channels});
  Tensor<T> var({channels});
  for (std::size_t c = 0; c < channels; ++c) {
    double sum = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
      const T* src = x.raw() + (n * channels + c) * spatial;
      for (std::size_t s = 0; s < spatial; ++s) sum += src[s];
    }
    const double mu = sum / static_cast<double>(count);
    double sq = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
      const T* src = x.raw() + (n * channels + c) * spatial;
      for (std::size_t s = 0; s < spatial; ++s) sq += (src[s] - mu) * (src[s] - mu);
    }
    mean[c] = static_cast<T>(mu);
    var[c] = static_cast<T>(sq / static_cast<double>(count));
    const T unbiased = static_cast<T>(sq / static_cast<double>(count - 1));
    layer.running_mean[c] = (T{1} - layer.momentum) * layer.running_mean[c] + layer.momentum * mean[c];
    layer.running_var[c] = (T{1} - layer.momentum) * layer.running_var[c] + layer.momentum * unbiased;
  }
  return batchnorm_apply(x, layer, mean, var, Mode::train, cache);
}

template <typename T>
Tensor<T> batchnorm_infer(const Tensor<T>& x, const BatchNorm<T>& layer, BatchNormCache<T>* cache) {
  channel_extent(x, layer.channels, "batchnorm");
  return batchnorm_apply(x, layer, layer.running_mean, layer.running_var, Mode::eval, cache);
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(BatchNormCache<T>& cache, const BatchNorm<T>& layer,
                                     const Tensor<T>& grad_y) {
  cache.guard.consume("batchnorm");
  require_same_shape(grad_y, cache.normalized.shape(), "batchnorm");
  const std::size_t channels = layer.channels;
  const std::size_t batch = grad_y.dim(0);
  const std::size_t spatial = grad_y.size() / (batch * channels);
  const T count = static_cast<T>(batch * spatial);

  BatchNormGrads<T> grads{Tensor<T>(grad_y.shape()), Tensor<T>({channels}), Tensor<T>({channels})};
  for (std::size_t c = 0; c < channels; ++c) {
    T sum_g{0}, sum_gh{0};
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t base = (n * channels + c) * spatial;
      for (std::size_t s = 0; s < spatial; ++s) {
        sum_g += grad_y[base + s];
        sum_gh += grad_y[base + s] * cache.normalized[base + s];
      }
    }
    grads.shift[c] = sum_g;
    grads.scale[c] = sum_gh;
    const T gamma_inv = layer.scale[c] * cache.inv_std[c];
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t base = (n * channels + c) * spatial;
      for (std::size_t s = 0; s < spatial; ++s) {
        const T g = grad_y[base + s];
        if (cache.mode == Mode::train) {
          grads.input[base + s] =
              gamma_inv * (g - sum_g / count - cache.normalized[base + s] * sum_gh / count);
        } else {
          grads.input[base + s] = gamma_inv * g;
        }
      }
    }
  }
  cache.normalized = Tensor<T>();
  return grads;
}

// ---------------------------------------------------------------------------

template <typename T>
Dense<T>::Dense(std::size_t in, std::size_t out)
    : in_features(in), out_features(out), weight({out, in}), bias({out}) {
  if (in == 0 || out == 0) throw ShapeError("dense: features must be >= 1");
}

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Dense<T>& layer, DenseCache<T>* cache) {
  if (x.rank() != 2 || x.dim(1) != layer.in_features) {
    throw ShapeError("dense: expected B x " + std::to_string(layer.in_features) + " input, got " +
                     shape_string(x.shape()));
  }
  Tensor<T> y = matmul(x, layer.weight, false, true);
  for (std::size_t n = 0; n < y.dim(0); ++n) {
    for (std::size_t o = 0; o < layer.out_features; ++o) y.at(n, o) += layer.bias[o];
  }
  if (cache) {
    cache->input = x;
    cache->guard.arm();
  }
  return y;
}

template <typename T>
DenseGrads<T> dense_backward(DenseCache<T>& cache, const Dense<T>& layer, const Tensor<T>& grad_y) {
  cache.guard.consume("dense");
  require_same_shape(grad_y, {cache.input.dim(0), layer.out_features}, "dense");
  DenseGrads<T> grads;
  grads.input = matmul(grad_y, layer.weight);
  grads.weight = matmul(grad_y, cache.input, true, false);
  grads.bias = reduce(ReduceOp::sum, grad_y, {0});
  cache.input = Tensor<T>();
  return grads;
}

// ---------------------------------------------------------------------------

template <typename T>
T sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x, MaskCache<T>* cache) {
  Tensor<T> y(x.shape());
  Tensor<T> gate;
  if (cache) gate = Tensor<T>(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool on = x[i] > T{0};
    y[i] = on ? x[i] : T{0};
    if (cache) gate[i] = on ? T{1} : T{0};
  }
  if (cache) {
    cache->mask = std::move(gate);
    cache->guard.arm();
  }
  return y;
}

template <typename T>
Tensor<T> relu_backward(MaskCache<T>& cache, const Tensor<T>& grad_y) {
  cache.guard.consume("relu");
  require_same_shape(grad_y, cache.mask.shape(), "relu");
  return elementwise(BinaryOp::mul, grad_y, cache.mask);
}

template <typename T>
Tensor<T> sigmoid_forward(const Tensor<T>& x, MaskCache<T>* cache) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
  if (cache) {
    cache->mask = y;
    cache->guard.arm();
  }
  return y;
}

template <typename T>
Tensor<T> sigmoid_backward(MaskCache<T>& cache, const Tensor<T>& grad_y) {
  cache.guard.consume("sigmoid");
  require_same_shape(grad_y, cache.mask.shape(), "sigmoid");
  Tensor<T> g(grad_y.shape());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const T s = cache.mask[i];
    g[i] = grad_y[i] * s * (T{1} - s);
  }
  return g;
}

template <typename T>
Tensor<T> dropout_forward(const Tensor<T>& x, const DropoutSpec& spec, Mode mode, Rng& rng,
                          MaskCache<T>* cache) {
  const double keep = spec.keep_probability();
  if (!(keep > 0.0 && keep <= 1.0)) throw std::invalid_argument("dropout: keep probability must be in (0, 1]");
  if (mode == Mode::eval || keep == 1.0) {
    if (cache) {
      cache->mask = Tensor<T>(x.shape(), T{1});
      cache->guard.arm();
    }
    return x;
  }
  Tensor<T> keep_mask(x.shape());
  for (auto& m : keep_mask.data()) m = rng.uniform() < keep ? T{1} : T{0};
  return dropout_forward_with_mask(x, spec, keep_mask, cache);
}

template <typename T>
Tensor<T> dropout_forward_with_mask(const Tensor<T>& x, const DropoutSpec& spec, const Tensor<T>& keep,
                                    MaskCache<T>* cache) {
  if (keep.shape() != x.shape()) {
    throw ShapeError("dropout: mask shape " + shape_string(keep.shape()) + " differs from input " +
                     shape_string(x.shape()));
  }
  const T inv_keep = static_cast<T>(1.0 / spec.keep_probability());
  Tensor<T> scaled_mask(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) scaled_mask[i] = keep[i] != T{0} ? inv_keep : T{0};
  Tensor<T> y = elementwise(BinaryOp::mul, x, scaled_mask);
  if (cache) {
    cache->mask = std::move(scaled_mask);
    cache->guard.arm();
  }
  return y;
}

template <typename T>
Tensor<T> dropout_backward(MaskCache<T>& cache, const Tensor<T>& grad_y) {
  cache.guard.consume("dropout");
  require_same_shape(grad_y, cache.mask.shape(), "dropout");
  return elementwise(BinaryOp::mul, grad_y, cache.mask);
}

#define COSREC_INSTANTIATE(T)                                                                         \
  template struct Conv2d<T>;                                                                          \
  template struct BatchNorm<T>;                                                                       \
  template struct Dense<T>;                                                                           \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Conv2d<T>&, Conv2dCache<T>*);             \
  template Conv2dGrads<T> conv2d_backward(Conv2dCache<T>&, const Conv2d<T>&, const Tensor<T>&);       \
  template Tensor<T> batchnorm_forward(const Tensor<T>&, BatchNorm<T>&, Mode, BatchNormCache<T>*);    \
  template Tensor<T> batchnorm_infer(const Tensor<T>&, const BatchNorm<T>&, BatchNormCache<T>*);                        \
  template BatchNormGrads<T> batchnorm_backward(BatchNormCache<T>&, const BatchNorm<T>&,              \
                                                const Tensor<T>&);                                    \
  template Tensor<T> dense_forward(const Tensor<T>&, const Dense<T>&, DenseCache<T>*);                \
  template DenseGrads<T> dense_backward(DenseCache<T>&, const Dense<T>&, const Tensor<T>&);           \
  template T sigmoid(T);                                                                              \
  template Tensor<T> relu_forward(const Tensor<T>&, MaskCache<T>*);                                   \
  template Tensor<T> relu_backward(MaskCache<T>&, const Tensor<T>&);                                  \
  template Tensor<T> sigmoid_forward(const Tensor<T>&, MaskCache<T>*);                                \
  template Tensor<T> sigmoid_backward(MaskCache<T>&, const Tensor<T>&);                               \
  template Tensor<T> dropout_forward(const Tensor<T>&, const DropoutSpec&, Mode, Rng&, MaskCache<T>*); \
  template Tensor<T> dropout_forward_with_mask(const Tensor<T>&, const DropoutSpec&, const Tensor<T>&, \
                                               MaskCache<T>*);                                        \
  template Tensor<T> dropout_backward(MaskCache<T>&, const Tensor<T>&);

COSREC_INSTANTIATE(float)
COSREC_INSTANTIATE(double)

}  // namespace cosrec

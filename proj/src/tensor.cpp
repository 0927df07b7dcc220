#include "cosrec/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace cosrec {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_string(shape_) + " does not hold " +
                     std::to_string(data_.size()) + " elements");
  }
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  Tensor out = *this;
  out.reshape(std::move(shape));
  return out;
}

template <typename T>
void Tensor<T>::reshape(Shape shape) {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  shape_ = std::move(shape);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using ConstMap = Eigen::Map<const RowMatrix<T>>;

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_a, bool transpose_b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul expects rank-2 operands, got " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }
  const std::size_t m = transpose_a ? a.dim(1) : a.dim(0);
  const std::size_t ka = transpose_a ? a.dim(0) : a.dim(1);
  const std::size_t kb = transpose_b ? b.dim(1) : b.dim(0);
  const std::size_t n = transpose_b ? b.dim(0) : b.dim(1);
  if (ka != kb) {
    throw ShapeError("matmul inner extents disagree: " + shape_string(a.shape()) +
                     (transpose_a ? "^T" : "") + " x " + shape_string(b.shape()) +
                     (transpose_b ? "^T" : ""));
  }
  Tensor<T> out({m, n});
  if (m == 0 || n == 0) return out;
  if (ka == 0) return out;

  ConstMap<T> am(a.raw(), a.dim(0), a.dim(1));
  ConstMap<T> bm(b.raw(), b.dim(0), b.dim(1));
  Eigen::Map<RowMatrix<T>> cm(out.raw(), m, n);
  if (!transpose_a && !transpose_b) {
    cm.noalias() = am * bm;
  } else if (transpose_a && !transpose_b) {
    cm.noalias() = am.transpose() * bm;
  } else if (!transpose_a && transpose_b) {
    cm.noalias() = am * bm.transpose();
  } else {
    cm.noalias() = am.transpose() * bm.transpose();
  }
  return out;
}

template <typename T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b) {
  auto apply = [op](T x, T y) {
    switch (op) {
      case BinaryOp::add: return x + y;
      case BinaryOp::sub: return x - y;
      case BinaryOp::mul: return x * y;
    }
    return x;
  };
  Tensor<T> out(a.shape());
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply(a[i], b[i]);
    return out;
  }
  if (b.rank() == 1 && a.rank() >= 2 && a.dim(1) == b.dim(0)) {
    const std::size_t channels = a.dim(1);
    std::size_t inner = 1;
    for (std::size_t ax = 2; ax < a.rank(); ++ax) inner *= a.dim(ax);
    const std::size_t outer = a.dim(0);
    for (std::size_t n = 0; n < outer; ++n) {
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t base = (n * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) out[base + i] = apply(a[base + i], b[c]);
      }
    }
    return out;
  }
  throw ShapeError("elementwise shapes incompatible: " + shape_string(a.shape()) + " and " +
                   shape_string(b.shape()));
}

template <typename T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& a, std::vector<std::size_t> axes) {
  if (axes.empty()) {
    for (std::size_t ax = 0; ax < a.rank(); ++ax) axes.push_back(ax);
  }
  std::sort(axes.begin(), axes.end());
  if (std::adjacent_find(axes.begin(), axes.end()) != axes.end()) {
    throw ShapeError("reduce: repeated axis");
  }
  std::vector<bool> reduced(a.rank(), false);
  std::size_t count = 1;
  for (auto ax : axes) {
    if (ax >= a.rank()) {
      throw ShapeError("reduce: axis " + std::to_string(ax) + " out of range for " +
                       shape_string(a.shape()));
    }
    if (a.dim(ax) == 0) {
      throw ShapeError("reduce: empty reduction over zero-extent axis " + std::to_string(ax));
    }
    reduced[ax] = true;
    count *= a.dim(ax);
  }

  Shape out_shape;
  for (std::size_t ax = 0; ax < a.rank(); ++ax) {
    if (!reduced[ax]) out_shape.push_back(a.dim(ax));
  }
  const T init = op == ReduceOp::max ? -std::numeric_limits<T>::infinity() : T{0};
  Tensor<T> out(out_shape, init);

  // Walk the input in layout order, tracking the output offset.
  std::vector<std::size_t> index(a.rank(), 0);
  std::vector<std::size_t> out_stride(a.rank(), 0);
  {
    std::size_t stride = 1;
    for (std::size_t ax = a.rank(); ax-- > 0;) {
      if (!reduced[ax]) {
        out_stride[ax] = stride;
        stride *= a.dim(ax);
      }
    }
  }
  std::size_t out_offset = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    T& slot = out[out_offset];
    slot = op == ReduceOp::max ? std::max(slot, a[i]) : slot + a[i];
    for (std::size_t ax = a.rank(); ax-- > 0;) {
      ++index[ax];
      out_offset += out_stride[ax];
      if (index[ax] < a.dim(ax)) break;
      out_offset -= out_stride[ax] * index[ax];
      index[ax] = 0;
    }
  }
  if (op == ReduceOp::mean) {
    for (auto& v : out.data()) v /= static_cast<T>(count);
  }
  return out;
}

template <typename T>
Tensor<T> scaled(const Tensor<T>& a, T factor) {
  Tensor<T> out = a;
  for (auto& v : out.data()) v *= factor;
  return out;
}

template <typename T>
T dot(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.size() != b.size()) {
    throw ShapeError("dot: sizes differ " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  T acc{0};
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

#define COSREC_INSTANTIATE(T)                                                          \
  template class Tensor<T>;                                                            \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&, bool, bool);           \
  template Tensor<T> elementwise(BinaryOp, const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> reduce(ReduceOp, const Tensor<T>&, std::vector<std::size_t>);     \
  template Tensor<T> scaled(const Tensor<T>&, T);                                      \
  template T dot(const Tensor<T>&, const Tensor<T>&);

COSREC_INSTANTIATE(float)
COSREC_INSTANTIATE(double)

}  // namespace cosrec

#include "cosrec/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <type_traits>

namespace cosrec {

std::string to_string(Variant v) { return v == Variant::cnn ? "cnn" : "mlp-base"; }

Variant parse_variant(const std::string& text) {
  if (text == "cnn") return Variant::cnn;
  if (text == "mlp-base" || text == "mlp") return Variant::mlp_base;
  throw std::invalid_argument("unknown model variant '" + text + "' (expected cnn or mlp-base)");
}

void CosRecConfig::validate() const {
  if (num_users == 0 || num_items == 0) throw std::invalid_argument("model needs at least one user and one item");
  if (dim == 0 || markov_order == 0 || horizon == 0) throw std::invalid_argument("d, L and T must be >= 1");
  if (block1_channels == 0 || block2_channels == 0 || mlp_hidden == 0) {
    throw std::invalid_argument("layer widths must be >= 1");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout rate must be in [0, 1)");
  final_spatial();
}

std::size_t CosRecConfig::final_spatial() const {
  std::size_t side = markov_order;
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    if (kernels[i] == 0 || kernels[i] > side) {
      throw std::invalid_argument("convolution chain breaks at layer " + std::to_string(i) + ": kernel " +
                                  std::to_string(kernels[i]) + " on a " + std::to_string(side) + "x" +
                                  std::to_string(side) + " map");
    }
    side = side - kernels[i] + 1;
  }
  return side;
}

std::array<std::size_t, 4> CosRecConfig::kernels_for_first(std::size_t first, std::size_t markov_order) {
  if (first == 0 || first > markov_order) {
    throw std::invalid_argument("first kernel " + std::to_string(first) + " does not fit L = " +
                                std::to_string(markov_order));
  }
  std::size_t remaining = markov_order - first;
  const std::size_t second = 1 + std::min<std::size_t>(2, remaining);
  remaining -= second - 1;
  const std::size_t fourth = 1 + std::min<std::size_t>(2, remaining);
  return {first, second, 1, fourth};
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> lookup_rows(const Tensor<T>& table, std::span<const ItemId> ids) {
  const std::size_t rows = table.dim(0), d = table.dim(1);
  Tensor<T> out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= rows) {
      throw std::out_of_range("embedding id " + std::to_string(ids[i]) + " outside table of " +
                              std::to_string(rows) + " rows");
    }
    std::copy_n(table.raw() + ids[i] * d, d, out.raw() + i * d);
  }
  return out;
}

template <typename T>
void scatter_rows(const Tensor<T>& grad, std::span<const ItemId> ids, Tensor<T>& table_grad) {
  const std::size_t d = table_grad.dim(1);
  if (grad.size() != ids.size() * d) throw ShapeError("scatter_rows: gradient does not match ids");
  for (std::size_t i = 0; i < ids.size(); ++i) {
    T* dst = table_grad.raw() + static_cast<std::size_t>(ids[i]) * d;
    const T* src = grad.raw() + i * d;
    for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
  }
}

template <typename T>
Tensor<T> pairwise_encode_batch(const Tensor<T>& e) {
  if (e.rank() != 3) throw ShapeError("pairwise_encode: expected B x L x d, got " + shape_string(e.shape()));
  const std::size_t batch = e.dim(0), L = e.dim(1), d = e.dim(2);
  Tensor<T> out({batch, 2 * d, L, L});
  for (std::size_t b = 0; b < batch; ++b) {
    const T* rows = e.raw() + b * L * d;
    T* dst = out.raw() + b * 2 * d * L * L;
    for (std::size_t c = 0; c < d; ++c) {
      for (std::size_t i = 0; i < L; ++i) {
        for (std::size_t j = 0; j < L; ++j) {
          dst[(c * L + i) * L + j] = rows[i * d + c];
          dst[((d + c) * L + i) * L + j] = rows[j * d + c];
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> pairwise_encode_batch_backward(const Tensor<T>& g) {
  if (g.rank() != 4 || g.dim(1) % 2 != 0 || g.dim(2) != g.dim(3)) {
    throw ShapeError("pairwise_encode backward: expected B x 2d x L x L, got " + shape_string(g.shape()));
  }
  const std::size_t batch = g.dim(0), d = g.dim(1) / 2, L = g.dim(2);
  Tensor<T> out({batch, L, d});
  for (std::size_t b = 0; b < batch; ++b) {
    const T* src = g.raw() + b * 2 * d * L * L;
    T* rows = out.raw() + b * L * d;
    for (std::size_t c = 0; c < d; ++c) {
      for (std::size_t i = 0; i < L; ++i) {
        for (std::size_t j = 0; j < L; ++j) {
          rows[i * d + c] += src[(c * L + i) * L + j];
          rows[j * d + c] += src[((d + c) * L + i) * L + j];
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> pairwise_encode(const Tensor<T>& embeddings) {
  if (embeddings.rank() != 2) throw ShapeError("pairwise_encode: expected L x d, got " + shape_string(embeddings.shape()));
  Tensor<T> out = pairwise_encode_batch(embeddings.reshaped({1, embeddings.dim(0), embeddings.dim(1)}));
  out.reshape({out.dim(1), out.dim(2), out.dim(3)});
  return out;
}

template <typename T>
Tensor<T> pairwise_encode_backward(const Tensor<T>& grad) {
  if (grad.rank() != 3) throw ShapeError("pairwise_encode backward: expected 2d x L x L, got " + shape_string(grad.shape()));
  Tensor<T> out = pairwise_encode_batch_backward(grad.reshaped({1, grad.dim(0), grad.dim(1), grad.dim(2)}));
  out.reshape({out.dim(1), out.dim(2)});
  return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kConvNames[4] = {"conv1_1", "conv1_2", "conv2_1", "conv2_2"};
constexpr const char* kNormNames[4] = {"bn1_1", "bn1_2", "bn2_1", "bn2_2"};

template <typename T>
T softplus(T x) {
  return x > T{0} ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename T>
void glorot(Tensor<T>& w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : w.data()) v = static_cast<T>(rng.uniform(-bound, bound));
}

}  // namespace

template <typename T>
CosRecModel<T>::CosRecModel(CosRecConfig config) : config_(config) {
  config_.validate();
  const std::size_t d = config_.dim;
  item_embedding_ = Tensor<T>({config_.num_items + 1, d});
  user_embedding_ = Tensor<T>({config_.num_users, d});
  if (config_.variant == Variant::cnn) {
    const std::array<std::size_t, 5> widths{2 * d, config_.block1_channels, config_.block1_channels,
                                            config_.block2_channels, config_.block2_channels};
    for (std::size_t i = 0; i < 4; ++i) {
      // Every convolution feeds a batchnorm, whose shift subsumes the bias.
      convs_[i] = Conv2d<T>(widths[i], widths[i + 1], config_.kernels[i], false);
      norms_[i] = BatchNorm<T>(widths[i + 1]);
    }
    const std::size_t side = config_.final_spatial();
    feature_ = Dense<T>(config_.block2_channels * side * side, d);
  } else {
    const std::size_t L = config_.markov_order;
    mlp_hidden_ = Dense<T>(2 * d * L * L, config_.mlp_hidden);
    mlp_feature_ = Dense<T>(config_.mlp_hidden, d);
  }
  output_ = Dense<T>(2 * d, config_.num_items);
  dropout_.rate = config_.dropout;
}

template <typename T>
std::vector<Named<Tensor<T>>> CosRecModel<T>::parameters() {
  std::vector<Named<Tensor<T>>> out;
  out.push_back({"item_embedding", &item_embedding_});
  out.push_back({"user_embedding", &user_embedding_});
  if (config_.variant == Variant::cnn) {
    for (std::size_t i = 0; i < 4; ++i) {
      out.push_back({std::string(kConvNames[i]) + ".weight", &convs_[i].weight});
      out.push_back({std::string(kNormNames[i]) + ".scale", &norms_[i].scale});
      out.push_back({std::string(kNormNames[i]) + ".shift", &norms_[i].shift});
    }
    out.push_back({"fc.weight", &feature_.weight});
    out.push_back({"fc.bias", &feature_.bias});
  } else {
    out.push_back({"mlp_hidden.weight", &mlp_hidden_.weight});
    out.push_back({"mlp_hidden.bias", &mlp_hidden_.bias});
    out.push_back({"mlp_feature.weight", &mlp_feature_.weight});
    out.push_back({"mlp_feature.bias", &mlp_feature_.bias});
  }
  out.push_back({"out.weight", &output_.weight});
  out.push_back({"out.bias", &output_.bias});
  return out;
}

template <typename T>
std::vector<Named<const Tensor<T>>> CosRecModel<T>::parameters() const {
  std::vector<Named<const Tensor<T>>> out;
  for (auto& p : const_cast<CosRecModel*>(this)->parameters()) out.push_back({p.name, p.value});
  return out;
}

template <typename T>
std::vector<Named<Tensor<T>>> CosRecModel<T>::buffers() {
  std::vector<Named<Tensor<T>>> out;
  if (config_.variant != Variant::cnn) return out;
  for (std::size_t i = 0; i < 4; ++i) {
    out.push_back({std::string(kNormNames[i]) + ".running_mean", &norms_[i].running_mean});
    out.push_back({std::string(kNormNames[i]) + ".running_var", &norms_[i].running_var});
  }
  return out;
}

template <typename T>
std::vector<Named<const Tensor<T>>> CosRecModel<T>::buffers() const {
  std::vector<Named<const Tensor<T>>> out;
  for (auto& p : const_cast<CosRecModel*>(this)->buffers()) out.push_back({p.name, p.value});
  return out;
}

template <typename T>
void CosRecModel<T>::init_parameters(std::uint64_t seed) {
  Rng rng(seed);
  for (auto& v : item_embedding_.data()) v = static_cast<T>(0.01 * rng.normal());
  for (auto& v : user_embedding_.data()) v = static_cast<T>(0.01 * rng.normal());
  auto init_dense = [&rng](Dense<T>& layer) {
    glorot(layer.weight, layer.in_features, layer.out_features, rng);
    layer.bias.fill(T{0});
  };
  if (config_.variant == Variant::cnn) {
    for (std::size_t i = 0; i < 4; ++i) {
      auto& conv = convs_[i];
      const std::size_t area = conv.kernel * conv.kernel;
      glorot(conv.weight, conv.in_channels * area, conv.out_channels * area, rng);
      norms_[i] = BatchNorm<T>(norms_[i].channels);
    }
    init_dense(feature_);
  } else {
    init_dense(mlp_hidden_);
    init_dense(mlp_feature_);
  }
  init_dense(output_);
}

template <typename T>
Tensor<T> CosRecModel<T>::lookup_window(std::span<const ItemId> items) const {
  if (items.size() != config_.markov_order) {
    throw std::invalid_argument("window has " + std::to_string(items.size()) + " items, expected L = " +
                                std::to_string(config_.markov_order));
  }
  return lookup_rows(item_embedding_, items);
}

template <typename T>
void CosRecModel<T>::check_inputs(std::span<const UserId> users, std::span<const ItemId> windows) const {
  if (windows.size() != users.size() * config_.markov_order) {
    throw std::invalid_argument("expected " + std::to_string(users.size()) + " windows of L = " +
                                std::to_string(config_.markov_order) + " items, got " +
                                std::to_string(windows.size()) + " ids");
  }
  for (UserId u : users) {
    if (u >= config_.num_users) throw std::out_of_range("user id " + std::to_string(u) + " out of range");
  }
  for (ItemId i : windows) {
    if (i > config_.num_items) throw std::out_of_range("item id " + std::to_string(i) + " out of range");
  }
}

template <typename T>
template <typename Self>
Tensor<T> CosRecModel<T>::encode(Self& self, std::span<const UserId> users, std::span<const ItemId> windows,
                                 Mode mode, Rng* rng, Trace* trace) {
  const CosRecConfig& cfg = self.config_;
  const std::size_t batch = users.size(), L = cfg.markov_order, d = cfg.dim;
  self.check_inputs(users, windows);

  Tensor<T> embedded = lookup_rows(self.item_embedding_, windows);
  embedded.reshape({batch, L, d});
  Tensor<T> x = pairwise_encode_batch(embedded);

  Rng unused(0);
  Rng& dropout_rng = rng ? *rng : unused;
  if (mode == Mode::train && !rng) throw std::invalid_argument("train mode needs a random generator");

  Tensor<T> v;
  if (cfg.variant == Variant::cnn) {
    for (std::size_t i = 0; i < 4; ++i) {
      x = conv2d_forward(x, self.convs_[i], trace ? &trace->conv[i] : nullptr);
      BatchNormCache<T>* bn_cache = trace ? &trace->norm[i] : nullptr;
      if constexpr (std::is_const_v<Self>) {
        x = batchnorm_infer(x, self.norms_[i], bn_cache);
      } else {
        x = batchnorm_forward(x, self.norms_[i], mode, bn_cache);
      }
      x = relu_forward(x, trace ? &trace->conv_relu[i] : nullptr);
    }
    x.reshape({batch, x.size() / batch});
    v = dense_forward(x, self.feature_, trace ? &trace->feature : nullptr);
    v = relu_forward(v, trace ? &trace->feature_relu : nullptr);
    v = dropout_forward(v, self.dropout_, mode, dropout_rng, trace ? &trace->dropout : nullptr);
  } else {
    x.reshape({batch, x.size() / batch});
    Tensor<T> h = dense_forward(x, self.mlp_hidden_, trace ? &trace->hidden : nullptr);
    h = relu_forward(h, trace ? &trace->hidden_relu : nullptr);
    h = dropout_forward(h, self.dropout_, mode, dropout_rng, trace ? &trace->dropout : nullptr);
    v = dense_forward(h, self.mlp_feature_, trace ? &trace->feature : nullptr);
    v = relu_forward(v, trace ? &trace->feature_relu : nullptr);
  }

  Tensor<T> features({batch, 2 * d});
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(v.raw() + b * d, d, features.raw() + b * 2 * d);
    std::copy_n(self.user_embedding_.raw() + static_cast<std::size_t>(users[b]) * d, d,
                features.raw() + b * 2 * d + d);
  }
  if (trace) {
    trace->users.assign(users.begin(), users.end());
    trace->windows.assign(windows.begin(), windows.end());
    trace->features = features;
  }
  return features;
}

template <typename T>
std::size_t CosRecModel<T>::slot_of(const Tensor<T>& param) const {
  const auto params = parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].value == &param) return i;
  }
  throw std::logic_error("tensor is not a parameter of this model");
}

template <typename T>
std::vector<Tensor<T>> CosRecModel<T>::zero_gradients() const {
  std::vector<Tensor<T>> grads;
  for (const auto& p : parameters()) grads.emplace_back(p.value->shape());
  return grads;
}

template <typename T>
void CosRecModel<T>::encode_backward(Trace& trace, const Tensor<T>& grad_features, std::vector<Tensor<T>>& grads) {
  const std::size_t batch = trace.users.size(), d = config_.dim, L = config_.markov_order;

  Tensor<T> grad_v({batch, d});
  Tensor<T> grad_user({batch, d});
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(grad_features.raw() + b * 2 * d, d, grad_v.raw() + b * d);
    std::copy_n(grad_features.raw() + b * 2 * d + d, d, grad_user.raw() + b * d);
  }
  scatter_rows(grad_user, std::span<const ItemId>(trace.users), grads[slot_of(user_embedding_)]);

  auto accumulate = [&](const Tensor<T>& param, const Tensor<T>& g) {
    auto& slot = grads[slot_of(param)];
    for (std::size_t i = 0; i < g.size(); ++i) slot[i] += g[i];
  };

  Tensor<T> grad_map;
  if (config_.variant == Variant::cnn) {
    Tensor<T> g = dropout_backward(trace.dropout, grad_v);
    g = relu_backward(trace.feature_relu, g);
    auto fc = dense_backward(trace.feature, feature_, g);
    accumulate(feature_.weight, fc.weight);
    accumulate(feature_.bias, fc.bias);
    const std::size_t side = config_.final_spatial();
    g = std::move(fc.input);
    g.reshape({batch, config_.block2_channels, side, side});
    for (std::size_t i = 4; i-- > 0;) {
      g = relu_backward(trace.conv_relu[i], g);
      auto bn = batchnorm_backward(trace.norm[i], norms_[i], g);
      accumulate(norms_[i].scale, bn.scale);
      accumulate(norms_[i].shift, bn.shift);
      auto conv = conv2d_backward(trace.conv[i], convs_[i], bn.input);
      accumulate(convs_[i].weight, conv.weight);
      g = std::move(conv.input);
    }
    grad_map = std::move(g);
  } else {
    Tensor<T> g = relu_backward(trace.feature_relu, grad_v);
    auto feat = dense_backward(trace.feature, mlp_feature_, g);
    accumulate(mlp_feature_.weight, feat.weight);
    accumulate(mlp_feature_.bias, feat.bias);
    g = dropout_backward(trace.dropout, feat.input);
    g = relu_backward(trace.hidden_relu, g);
    auto hidden = dense_backward(trace.hidden, mlp_hidden_, g);
    accumulate(mlp_hidden_.weight, hidden.weight);
    accumulate(mlp_hidden_.bias, hidden.bias);
    grad_map = std::move(hidden.input);
    grad_map.reshape({batch, 2 * d, L, L});
  }

  Tensor<T> grad_rows = pairwise_encode_batch_backward(grad_map);
  grad_rows.reshape({batch * L, d});
  scatter_rows(grad_rows, std::span<const ItemId>(trace.windows), grads[slot_of(item_embedding_)]);
}

template <typename T>
Tensor<T> CosRecModel<T>::forward(std::span<const UserId> users, std::span<const ItemId> windows, Mode mode,
                                  Rng& rng) {
  trace_.reset();
  if (mode == Mode::eval) return score(users, windows);
  Trace trace;
  Tensor<T> features = encode(*this, users, windows, mode, &rng, &trace);
  trace_ = std::move(trace);
  return dense_forward(features, output_);
}

template <typename T>
std::vector<Tensor<T>> CosRecModel<T>::backward(const Tensor<T>& grad_logits) {
  if (!trace_) throw StaleCacheError("backward called without a preceding train-mode forward");
  Trace trace = std::move(*trace_);
  trace_.reset();
  const std::size_t batch = trace.users.size();
  if (grad_logits.shape() != Shape{batch, config_.num_items}) {
    throw ShapeError("logit gradient shape " + shape_string(grad_logits.shape()) + " does not match forward");
  }
  auto grads = zero_gradients();
  DenseCache<T> out_cache;
  out_cache.input = trace.features;
  out_cache.guard.arm();
  auto out = dense_backward(out_cache, output_, grad_logits);
  grads[slot_of(output_.weight)] = std::move(out.weight);
  grads[slot_of(output_.bias)] = std::move(out.bias);
  encode_backward(trace, out.input, grads);
  return grads;
}

template <typename T>
Tensor<T> CosRecModel<T>::score(std::span<const UserId> users, std::span<const ItemId> windows) const {
  const Tensor<T> features = encode(*this, users, windows, Mode::eval, nullptr, nullptr);
  return dense_forward(features, output_);
}

template <typename T>
LossResult<T> CosRecModel<T>::loss_and_backward(std::span<const TrainWindow> batch, std::span<const ItemId> negatives,
                                                Rng& rng) {
  trace_.reset();
  const std::size_t B = batch.size(), L = config_.markov_order, horizon = config_.horizon, d = config_.dim;
  if (B == 0) throw std::invalid_argument("empty batch");
  if (negatives.size() % (B * horizon) != 0 || negatives.empty()) {
    throw std::invalid_argument("negatives must hold N ids for each of the " + std::to_string(B * horizon) +
                                " targets");
  }
  const std::size_t rate = negatives.size() / (B * horizon);

  std::vector<UserId> users;
  std::vector<ItemId> windows;
  users.reserve(B);
  windows.reserve(B * L);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& w = batch[b];
    if (w.input.size() != L || w.targets.size() != horizon) {
      throw std::invalid_argument("training window shape does not match L and T");
    }
    for (ItemId t : w.targets) {
      if (t == kPaddingItem || t > config_.num_items) throw std::out_of_range("target id out of range");
    }
    for (std::size_t k = 0; k < horizon * rate; ++k) {
      const ItemId neg = negatives[b * horizon * rate + k];
      if (neg == kPaddingItem || neg > config_.num_items) throw std::out_of_range("negative id out of range");
      if (std::find(w.targets.begin(), w.targets.end(), neg) != w.targets.end()) {
        throw std::invalid_argument("negative sample " + std::to_string(neg) + " is one of the window's targets");
      }
    }
    users.push_back(w.user);
    windows.insert(windows.end(), w.input.begin(), w.input.end());
  }

  Trace trace;
  const Tensor<T> features = encode(*this, users, windows, Mode::train, &rng, &trace);

  LossResult<T> result;
  result.gradients = zero_gradients();
  Tensor<T>& grad_w = result.gradients[slot_of(output_.weight)];
  Tensor<T>& grad_b = result.gradients[slot_of(output_.bias)];
  Tensor<T> grad_features({B, 2 * d});
  const T inv_batch = T{1} / static_cast<T>(B);
  const std::size_t width = 2 * d;

  double total = 0.0;
  auto visit = [&](std::size_t b, ItemId item, bool positive) {
    const std::size_t row = item - 1;
    const T* w = output_.weight.raw() + row * width;
    const T* f = features.raw() + b * width;
    T logit = output_.bias[row];
    for (std::size_t c = 0; c < width; ++c) logit += w[c] * f[c];
    total += static_cast<double>(positive ? softplus(-logit) : softplus(logit));
    const T g = (positive ? sigmoid(logit) - T{1} : sigmoid(logit)) * inv_batch;
    T* gw = grad_w.raw() + row * width;
    T* gf = grad_features.raw() + b * width;
    for (std::size_t c = 0; c < width; ++c) {
      gw[c] += g * f[c];
      gf[c] += g * w[c];
    }
    grad_b[row] += g;
  };
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < horizon; ++t) {
      visit(b, batch[b].targets[t], true);
      for (std::size_t k = 0; k < rate; ++k) visit(b, negatives[(b * horizon + t) * rate + k], false);
    }
  }
  result.loss = static_cast<T>(total / static_cast<double>(B));
  encode_backward(trace, grad_features, result.gradients);
  return result;
}

#define COSREC_INSTANTIATE(T)                                                                  \
  template Tensor<T> lookup_rows(const Tensor<T>&, std::span<const ItemId>);                   \
  template void scatter_rows(const Tensor<T>&, std::span<const ItemId>, Tensor<T>&);           \
  template Tensor<T> pairwise_encode(const Tensor<T>&);                                        \
  template Tensor<T> pairwise_encode_backward(const Tensor<T>&);                               \
  template Tensor<T> pairwise_encode_batch(const Tensor<T>&);                                  \
  template Tensor<T> pairwise_encode_batch_backward(const Tensor<T>&);                         \
  template class CosRecModel<T>;

COSREC_INSTANTIATE(float)
COSREC_INSTANTIATE(double)

}  // namespace cosrec

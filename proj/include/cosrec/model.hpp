#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cosrec/data.hpp"
#include "cosrec/layers.hpp"
#include "cosrec/rng.hpp"
#include "cosrec/tensor.hpp"

namespace cosrec {

enum class Variant { cnn, mlp_base };

std::string to_string(Variant v);
Variant parse_variant(const std::string& text);

struct CosRecConfig {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::size_t dim = 50;           // d; also the width of the sequential feature
  std::size_t markov_order = 5;   // L
  std::size_t horizon = 3;        // T
  std::size_t block1_channels = 128;
  std::size_t block2_channels = 256;
  // conv1_1, conv1_2, conv2_1, conv2_2
  std::array<std::size_t, 4> kernels{1, 3, 1, 3};
  std::size_t mlp_hidden = 512;
  double dropout = 0.5;
  Variant variant = Variant::cnn;

  // Throws std::invalid_argument if any extent is zero or the convolution
  // chain would shrink the L x L map below 1 x 1.
  void validate() const;

  // Spatial side of the map after the four convolutions.
  std::size_t final_spatial() const;

  // Kernel set with conv1_1 of size `first`; the remaining reduction goes to
  // conv1_2 then conv2_2 (at most 3 x 3 each).
  static std::array<std::size_t, 4> kernels_for_first(std::size_t first, std::size_t markov_order);

  friend bool operator==(const CosRecConfig&, const CosRecConfig&) = default;
};

template <typename TensorType>
struct Named {
  std::string name;
  TensorType* value;
};

template <typename T>
struct LossResult {
  T loss{0};
  std::vector<Tensor<T>> gradients;  // aligned with CosRecModel::parameters()
};

// Rows of `table` for each id, stacked: ids.size() x d.
template <typename T>
Tensor<T> lookup_rows(const Tensor<T>& table, std::span<const ItemId> ids);

// Adds row i of `grad` into row ids[i] of `table_grad`; repeated ids accumulate.
template <typename T>
void scatter_rows(const Tensor<T>& grad, std::span<const ItemId> ids, Tensor<T>& table_grad);

// L x d -> 2d x L x L with channel vector [e_i; e_j] at (i, j).
template <typename T>
Tensor<T> pairwise_encode(const Tensor<T>& embeddings);

// Adjoint of pairwise_encode: 2d x L x L -> L x d.
template <typename T>
Tensor<T> pairwise_encode_backward(const Tensor<T>& grad);

// Batched forms: B x L x d <-> B x 2d x L x L.
template <typename T>
Tensor<T> pairwise_encode_batch(const Tensor<T>& embeddings);
template <typename T>
Tensor<T> pairwise_encode_batch_backward(const Tensor<T>& grad);

template <typename T>
class CosRecModel {
 public:
  explicit CosRecModel(CosRecConfig config);

  const CosRecConfig& config() const { return config_; }

  // Embeddings ~ N(0, 0.01^2); conv and dense weights Glorot-uniform; biases
  // zero; batchnorm scale 1, shift 0, running mean 0, running var 1.
  void init_parameters(std::uint64_t seed);

  // Learnable tensors in a fixed order.
  std::vector<Named<Tensor<T>>> parameters();
  std::vector<Named<const Tensor<T>>> parameters() const;
  // Batchnorm running statistics.
  std::vector<Named<Tensor<T>>> buffers();
  std::vector<Named<const Tensor<T>>> buffers() const;

  const Tensor<T>& item_embeddings() const { return item_embedding_; }
  const Tensor<T>& user_embeddings() const { return user_embedding_; }

  // L x d embedding rows for one window.
  Tensor<T> lookup_window(std::span<const ItemId> items) const;

  // Logits for all |I| real items (column j is item j + 1), B x |I|.
  // `windows` holds B consecutive windows of L ids. Train mode keeps the
  // forward trace for a following backward() call.
  Tensor<T> forward(std::span<const UserId> users, std::span<const ItemId> windows, Mode mode, Rng& rng);

  // Gradients of sum(grad_logits * logits) through the last train-mode forward.
  std::vector<Tensor<T>> backward(const Tensor<T>& grad_logits);

  // Eval-mode logits; does not touch any state.
  Tensor<T> score(std::span<const UserId> users, std::span<const ItemId> windows) const;

  // Binary cross-entropy over each target and its negatives (rate per target,
  // laid out target-major), summed and divided by the batch size. Only the
  // sampled logits are computed.
  LossResult<T> loss_and_backward(std::span<const TrainWindow> batch, std::span<const ItemId> negatives,
                                  Rng& rng);

 private:
  struct Trace {
    std::vector<UserId> users;
    std::vector<ItemId> windows;
    std::array<Conv2dCache<T>, 4> conv;
    std::array<BatchNormCache<T>, 4> norm;
    std::array<MaskCache<T>, 4> conv_relu;
    DenseCache<T> hidden;
    MaskCache<T> hidden_relu;
    DenseCache<T> feature;
    MaskCache<T> feature_relu;
    MaskCache<T> dropout;
    Tensor<T> features;  // B x 2d, [v; e_u]
  };

  // Shared by the mutable (train or eval) and const (eval) paths.
  template <typename Self>
  static Tensor<T> encode(Self& self, std::span<const UserId> users, std::span<const ItemId> windows,
                          Mode mode, Rng* rng, Trace* trace);
  void encode_backward(Trace& trace, const Tensor<T>& grad_features, std::vector<Tensor<T>>& grads);
  std::size_t slot_of(const Tensor<T>& param) const;
  std::vector<Tensor<T>> zero_gradients() const;
  void check_inputs(std::span<const UserId> users, std::span<const ItemId> windows) const;

  CosRecConfig config_;
  Tensor<T> item_embedding_;  // (|I| + 1) x d, row 0 = padding
  Tensor<T> user_embedding_;  // |U| x d
  std::array<Conv2d<T>, 4> convs_;
  std::array<BatchNorm<T>, 4> norms_;
  Dense<T> feature_;     // cnn: D2*s*s -> d
  Dense<T> mlp_hidden_;  // mlp-base: 2d*L*L -> hidden
  Dense<T> mlp_feature_; // mlp-base: hidden -> d
  Dense<T> output_;      // 2d -> |I|
  DropoutSpec dropout_;

  std::optional<Trace> trace_;
};

extern template class CosRecModel<float>;
extern template class CosRecModel<double>;

}  // namespace cosrec

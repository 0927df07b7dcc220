#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cosrec/model.hpp"
#include "cosrec/optim.hpp"
#include "cosrec/rng.hpp"
#include "cosrec/run_config.hpp"

namespace cosrec {

inline constexpr std::string_view kCheckpointMagic = "COSRECCK";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredTensor {
  std::string name;
  Tensor<float> value;

  friend bool operator==(const StoredTensor&, const StoredTensor&) = default;
};

struct StoredAdam {
  std::uint64_t steps = 0;
  std::vector<Tensor<float>> first;
  std::vector<Tensor<float>> second;

  friend bool operator==(const StoredAdam&, const StoredAdam&) = default;
};

// Binary layout: magic, version, run config (JSON text), vocabulary sizes,
// named float32 tensors, optional Adam moments, generator state. All integers
// and reals little-endian.
struct Checkpoint {
  RunConfig run;
  std::uint32_t num_users = 0;
  std::uint32_t num_items = 0;
  std::vector<StoredTensor> tensors;  // parameters then batchnorm buffers
  std::optional<StoredAdam> adam;
  std::string rng_state;

  const StoredTensor* find(std::string_view name) const;
  std::vector<std::string> names() const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

void save_checkpoint(const Checkpoint& checkpoint, std::ostream& out);
Checkpoint load_checkpoint(std::istream& in);

template <typename T>
Checkpoint make_checkpoint(const RunConfig& run, const CosRecModel<T>& model, const Adam<T>* optimizer,
                           const Rng& rng);

// Rebuilds the model described by the checkpoint and loads every tensor.
template <typename T>
CosRecModel<T> restore_model(const Checkpoint& checkpoint);

template <typename T>
Adam<T> restore_optimizer(const Checkpoint& checkpoint);

}  // namespace cosrec

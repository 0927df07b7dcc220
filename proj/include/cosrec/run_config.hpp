#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "cosrec/model.hpp"
#include "cosrec/optim.hpp"

namespace cosrec {

enum class DatasetKind { ml1m, gowalla };

std::string to_string(DatasetKind kind);
DatasetKind parse_dataset_kind(const std::string& text);

// Training hyperparameters. Unset values follow the published setup: L = 5,
// T = 3, N = 3, batch 512, learning rate 0.001, dropout 0.5, and d = 50 on
// ML-1M or 100 on Gowalla.
struct RunConfig {
  DatasetKind dataset = DatasetKind::ml1m;
  std::size_t dim = 50;
  std::size_t markov_order = 5;
  std::size_t horizon = 3;
  std::size_t negatives = 3;
  std::size_t batch_size = 512;
  double learning_rate = 0.001;
  double weight_decay = 0.0;
  double dropout = 0.5;
  std::size_t block1_channels = 128;
  std::size_t block2_channels = 256;
  std::size_t mlp_hidden = 512;
  std::size_t first_kernel = 1;
  Variant variant = Variant::cnn;
  std::size_t epochs = 50;
  double validation_fraction = 0.1;
  std::size_t patience = 5;
  std::uint64_t seed = 1;

  static RunConfig defaults_for(DatasetKind kind);

  CosRecConfig model_config(std::size_t num_users, std::size_t num_items) const;
  AdamOptions adam_options() const;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

}  // namespace cosrec

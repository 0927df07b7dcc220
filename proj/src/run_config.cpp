#include "cosrec/run_config.hpp"

#include <stdexcept>

namespace cosrec {

std::string to_string(DatasetKind kind) { return kind == DatasetKind::ml1m ? "ml1m" : "gowalla"; }

DatasetKind parse_dataset_kind(const std::string& text) {
  if (text == "ml1m" || text == "ml-1m") return DatasetKind::ml1m;
  if (text == "gowalla") return DatasetKind::gowalla;
  throw std::invalid_argument("unknown dataset '" + text + "' (expected ml1m or gowalla)");
}

RunConfig RunConfig::defaults_for(DatasetKind kind) {
  RunConfig c;
  c.dataset = kind;
  c.dim = kind == DatasetKind::ml1m ? 50 : 100;
  return c;
}

CosRecConfig RunConfig::model_config(std::size_t num_users, std::size_t num_items) const {
  CosRecConfig m;
  m.num_users = num_users;
  m.num_items = num_items;
  m.dim = dim;
  m.markov_order = markov_order;
  m.horizon = horizon;
  m.block1_channels = block1_channels;
  m.block2_channels = block2_channels;
  m.mlp_hidden = mlp_hidden;
  m.dropout = dropout;
  m.variant = variant;
  m.kernels = CosRecConfig::kernels_for_first(first_kernel, markov_order);
  m.validate();
  return m;
}

AdamOptions RunConfig::adam_options() const {
  AdamOptions o;
  o.learning_rate = learning_rate;
  o.weight_decay = weight_decay;
  return o;
}

nlohmann::json RunConfig::to_json() const {
  return {{"dataset", to_string(dataset)},
          {"d", dim},
          {"L", markov_order},
          {"T", horizon},
          {"negatives", negatives},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"weight_decay", weight_decay},
          {"dropout", dropout},
          {"D1", block1_channels},
          {"D2", block2_channels},
          {"mlp_hidden", mlp_hidden},
          {"first_kernel", first_kernel},
          {"variant", to_string(variant)},
          {"epochs", epochs},
          {"validation_fraction", validation_fraction},
          {"patience", patience},
          {"seed", seed}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  c.dataset = parse_dataset_kind(j.at("dataset").get<std::string>());
  c.dim = j.at("d").get<std::size_t>();
  c.markov_order = j.at("L").get<std::size_t>();
  c.horizon = j.at("T").get<std::size_t>();
  c.negatives = j.at("negatives").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.dropout = j.at("dropout").get<double>();
  c.block1_channels = j.at("D1").get<std::size_t>();
  c.block2_channels = j.at("D2").get<std::size_t>();
  c.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
  c.first_kernel = j.at("first_kernel").get<std::size_t>();
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.epochs = j.at("epochs").get<std::size_t>();
  c.validation_fraction = j.at("validation_fraction").get<double>();
  c.patience = j.at("patience").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace cosrec

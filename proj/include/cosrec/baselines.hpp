#pragma once

#include <cstdint>
#include <vector>

#include "cosrec/data.hpp"
#include "cosrec/metrics.hpp"
#include "cosrec/model.hpp"

namespace cosrec {

// Non-personalized popularity ranking from training-portion counts.
class PopRec : public Scorer {
 public:
  static PopRec fit(const Dataset& dataset);

  std::size_t num_items() const override { return counts_.size(); }
  std::size_t markov_order() const override { return 0; }
  void score(std::span<const UserId> users, std::span<const ItemId> windows, std::span<double> out) const override;

  // counts()[j] belongs to item j + 1.
  const std::vector<std::uint64_t>& counts() const { return counts_; }

 private:
  std::vector<std::uint64_t> counts_;
};

// Eval-mode logits of a CosRec or CosRec-base model.
template <typename T>
class ModelScorer : public Scorer {
 public:
  explicit ModelScorer(const CosRecModel<T>& model) : model_(model) {}

  std::size_t num_items() const override { return model_.config().num_items; }
  std::size_t markov_order() const override { return model_.config().markov_order; }
  void score(std::span<const UserId> users, std::span<const ItemId> windows, std::span<double> out) const override;

 private:
  const CosRecModel<T>& model_;
};

extern template class ModelScorer<float>;
extern template class ModelScorer<double>;

}  // namespace cosrec

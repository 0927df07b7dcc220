#include "cosrec/baselines.hpp"

#include <algorithm>
#include <stdexcept>

namespace cosrec {

PopRec PopRec::fit(const Dataset& dataset) {
  PopRec model;
  model.counts_.assign(dataset.num_items(), 0);
  for (UserId u = 0; u < dataset.num_users(); ++u) {
    for (ItemId i : dataset.train(u)) {
      if (i != kPaddingItem) ++model.counts_[i - 1];
    }
  }
  return model;
}

void PopRec::score(std::span<const UserId> users, std::span<const ItemId>, std::span<double> out) const {
  if (out.size() != users.size() * counts_.size()) throw std::invalid_argument("poprec: output buffer size mismatch");
  for (std::size_t b = 0; b < users.size(); ++b) {
    std::transform(counts_.begin(), counts_.end(), out.begin() + static_cast<std::ptrdiff_t>(b * counts_.size()),
                   [](std::uint64_t c) { return static_cast<double>(c); });
  }
}

template <typename T>
void ModelScorer<T>::score(std::span<const UserId> users, std::span<const ItemId> windows,
                           std::span<double> out) const {
  const Tensor<T> logits = model_.score(users, windows);
  if (out.size() != logits.size()) throw std::invalid_argument("model scorer: output buffer size mismatch");
  std::copy(logits.data().begin(), logits.data().end(), out.begin());
}

template class ModelScorer<float>;
template class ModelScorer<double>;

}  // namespace cosrec

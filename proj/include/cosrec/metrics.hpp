#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "cosrec/data.hpp"

namespace cosrec {

// Anything that produces one score per real item for a (user, window) pair.
// Column j of a score row belongs to item j + 1.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::size_t num_items() const = 0;
  // Window length the scorer consumes; 0 when it ignores the history.
  virtual std::size_t markov_order() const = 0;
  // `windows` holds users.size() consecutive windows; `out` is users.size() x num_items().
  virtual void score(std::span<const UserId> users, std::span<const ItemId> windows, std::span<double> out) const = 0;
};

// Items sorted by descending score, ties by ascending id, with `exclude`
// removed. scores[j] belongs to item j + 1.
std::vector<ItemId> rank_items(std::span<const double> scores, std::span<const ItemId> exclude);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

// `relevant` must be non-empty; duplicates are ignored.
PrecisionRecall precision_recall_at(std::span<const ItemId> ranked, std::span<const ItemId> relevant, std::size_t n);

// Precision at each hit rank, summed over the full list and divided by the
// number of distinct relevant items.
double average_precision(std::span<const ItemId> ranked, std::span<const ItemId> relevant);

inline constexpr std::array<std::size_t, 3> kCutoffs{1, 5, 10};

struct UserMetrics {
  UserId user = 0;
  double average_precision = 0.0;
  std::array<double, 3> precision{};
  std::array<double, 3> recall{};
};

struct MetricsReport {
  double map = 0.0;
  std::array<double, 3> precision{};  // @1, @5, @10
  std::array<double, 3> recall{};
  std::size_t users = 0;              // users with a non-empty test portion
  std::vector<UserMetrics> per_user;  // filled on request
};

struct EvaluateOptions {
  std::size_t threads = 1;
  std::size_t batch_size = 256;
  bool keep_per_user = false;
};

// One ranking per user: the input is the last L training items, candidates
// exclude the user's training items, and the test items are relevant.
// Results do not depend on the thread count.
MetricsReport evaluate(const Scorer& scorer, const Dataset& dataset, const EvaluateOptions& options = {});

}  // namespace cosrec

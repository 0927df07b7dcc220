#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "cosrec/data.hpp"
#include "cosrec/metrics.hpp"
#include "cosrec/rng.hpp"
#include "cosrec/tensor.hpp"

namespace cosrec::testing {

inline Tensor<double> random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(shape);
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

// Values bounded away from zero so relu kinks stay outside the difference step.
inline Tensor<double> random_away_from_zero(const Shape& shape, Rng& rng, double margin = 0.05) {
  Tensor<double> t(shape);
  for (auto& v : t.data()) {
    const double m = margin + rng.uniform();
    v = rng.uniform() < 0.5 ? -m : m;
  }
  return t;
}

// Central differences of a scalar function of x, perturbing x in place.
inline Tensor<double> numeric_gradient(const std::function<double()>& f, Tensor<double>& x, double step = 1e-5) {
  Tensor<double> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double up = f();
    x[i] = saved - step;
    const double down = f();
    x[i] = saved;
    g[i] = (up - down) / (2 * step);
  }
  return g;
}

// Central differences at step and step / 2. Where the two disagree the
// function is not smooth inside the step (a relu kink), and `smooth` is cleared.
inline Tensor<double> screened_gradient(const std::function<double()>& f, Tensor<double>& x, bool& smooth,
                                        double step = 1e-5) {
  Tensor<double> g(x.shape());
  auto central = [&](std::size_t i, double h) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    return (up - down) / (2 * h);
  };
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double wide = central(i, step), narrow = central(i, step / 2);
    if (std::abs(wide - narrow) > 1e-6 * std::max(1.0, std::abs(wide))) smooth = false;
    g[i] = wide;
  }
  return g;
}

// ||a - b|| / max(||a||, ||b||, 1e-4). The floor keeps gradients that are
// exactly zero from being compared against difference noise.
inline double relative_error(const Tensor<double>& a, const Tensor<double>& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-4});
}

// Weighted sum used to turn a tensor output into a scalar loss.
inline double weighted_sum(const Tensor<double>& y, const Tensor<double>& w) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

template <typename T>
Tensor<T> conv_oracle(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = weight.dim(0), k = weight.dim(2);
  const std::size_t Ho = H - k + 1, Wo = W - k + 1;
  Tensor<T> y({B, O, Ho, Wo});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          double acc = bias.empty() ? 0.0 : static_cast<double>(bias[o]);
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t p = 0; p < k; ++p)
              for (std::size_t q = 0; q < k; ++q)
                acc += static_cast<double>(x.at(n, c, i + p, j + q)) * static_cast<double>(weight.at(o, c, p, q));
          y.at(n, o, i, j) = static_cast<T>(acc);
        }
  return y;
}

// Per-user metrics recomputed from scratch: each candidate's rank is the number
// of candidates that beat it.
inline MetricsReport brute_force_evaluate(const Scorer& scorer, const Dataset& d) {
  MetricsReport r;
  const std::size_t I = d.num_items();
  for (UserId u = 0; u < d.num_users(); ++u) {
    if (d.test(u).empty()) continue;
    const auto window = last_window(d, u, scorer.markov_order());
    std::vector<double> s(I);
    const UserId users[] = {u};
    scorer.score(users, window, s);
    std::vector<bool> trained(I + 1, false), relevant(I + 1, false);
    for (ItemId i : d.train(u)) trained[i] = true;
    std::size_t num_relevant = 0;
    for (ItemId i : d.test(u)) {
      if (!relevant[i]) ++num_relevant;
      relevant[i] = true;
    }
    std::vector<std::size_t> rank(I + 1, 0);
    std::vector<ItemId> hits_by_rank;
    for (ItemId a = 1; a <= I; ++a) {
      if (trained[a]) continue;
      std::size_t beaten = 0;
      for (ItemId b = 1; b <= I; ++b) {
        if (trained[b] || b == a) continue;
        if (s[b - 1] > s[a - 1] || (s[b - 1] == s[a - 1] && b < a)) ++beaten;
      }
      rank[a] = beaten + 1;
      if (relevant[a]) hits_by_rank.push_back(a);
    }
    std::sort(hits_by_rank.begin(), hits_by_rank.end(), [&](ItemId a, ItemId b) { return rank[a] < rank[b]; });
    double ap = 0;
    for (std::size_t h = 0; h < hits_by_rank.size(); ++h) {
      ap += static_cast<double>(h + 1) / static_cast<double>(rank[hits_by_rank[h]]);
    }
    r.map += ap / static_cast<double>(num_relevant);
    for (std::size_t k = 0; k < kCutoffs.size(); ++k) {
      std::size_t within = 0;
      for (ItemId a : hits_by_rank) within += rank[a] <= kCutoffs[k] ? 1 : 0;
      r.precision[k] += static_cast<double>(within) / static_cast<double>(kCutoffs[k]);
      r.recall[k] += static_cast<double>(within) / static_cast<double>(num_relevant);
    }
    ++r.users;
  }
  if (r.users) {
    const double n = static_cast<double>(r.users);
    r.map /= n;
    for (std::size_t k = 0; k < kCutoffs.size(); ++k) {
      r.precision[k] /= n;
      r.recall[k] /= n;
    }
  }
  return r;
}

// Scores drawn from a small set so ties are common.
class TableScorer : public Scorer {
 public:
  TableScorer(std::size_t users, std::size_t items, Rng& rng, int levels = 4) : items_(items), table_(users * items) {
    for (auto& v : table_) v = static_cast<double>(rng.below(static_cast<std::uint64_t>(levels)));
  }
  std::size_t num_items() const override { return items_; }
  std::size_t markov_order() const override { return 2; }
  void score(std::span<const UserId> users, std::span<const ItemId> windows, std::span<double> out) const override {
    for (std::size_t b = 0; b < users.size(); ++b) {
      for (std::size_t j = 0; j < items_; ++j) {
        // mix in the window so history matters
        const double w = static_cast<double>(windows[b * 2 + 1] % 3) * 0.5;
        out[b * items_ + j] = table_[users[b] * items_ + j] + (j % 2 ? w : 0.0);
      }
    }
  }

 private:
  std::size_t items_;
  std::vector<double> table_;
};

// Random dataset: users with 1..max_len actions over `items` items, repeats allowed.
inline Dataset random_dataset(std::size_t users, std::size_t items, std::size_t max_len, Rng& rng) {
  std::vector<std::vector<ItemId>> seqs(users);
  for (auto& s : seqs) {
    const std::size_t n = 1 + rng.below(max_len);
    for (std::size_t k = 0; k < n; ++k) s.push_back(static_cast<ItemId>(1 + rng.below(items)));
  }
  return Dataset::from_sequences(items, std::move(seqs));
}

}  // namespace cosrec::testing

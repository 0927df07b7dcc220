#include "cosrec/metrics.hpp"

#include <algorithm>
#include <exception>
#include <numeric>
#include <stdexcept>
#include <thread>
#include <unordered_set>

namespace cosrec {

std::vector<ItemId> rank_items(std::span<const double> scores, std::span<const ItemId> exclude) {
  std::vector<bool> skip(scores.size() + 1, false);
  for (ItemId i : exclude) {
    if (i >= 1 && i <= scores.size()) skip[i] = true;
  }
  std::vector<ItemId> ranked;
  ranked.reserve(scores.size());
  for (ItemId i = 1; i <= scores.size(); ++i) {
    if (!skip[i]) ranked.push_back(i);
  }
  std::sort(ranked.begin(), ranked.end(), [&](ItemId a, ItemId b) {
    const double sa = scores[a - 1], sb = scores[b - 1];
    if (sa != sb) return sa > sb;
    return a < b;
  });
  return ranked;
}

namespace {

std::vector<ItemId> distinct(std::span<const ItemId> items) {
  std::vector<ItemId> out(items.begin(), items.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

bool contains(const std::vector<ItemId>& sorted, ItemId i) { return std::binary_search(sorted.begin(), sorted.end(), i); }

}  // namespace

PrecisionRecall precision_recall_at(std::span<const ItemId> ranked, std::span<const ItemId> relevant, std::size_t n) {
  if (n == 0) throw std::invalid_argument("precision_recall_at: n must be >= 1");
  const auto rel = distinct(relevant);
  if (rel.empty()) throw std::invalid_argument("precision_recall_at: empty relevant set");
  std::size_t hits = 0;
  for (std::size_t k = 0; k < std::min(n, ranked.size()); ++k) hits += contains(rel, ranked[k]) ? 1 : 0;
  return {static_cast<double>(hits) / static_cast<double>(n),
          static_cast<double>(hits) / static_cast<double>(rel.size())};
}

double average_precision(std::span<const ItemId> ranked, std::span<const ItemId> relevant) {
  const auto rel = distinct(relevant);
  if (rel.empty()) throw std::invalid_argument("average_precision: empty relevant set");
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    if (contains(rel, ranked[k])) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  return sum / static_cast<double>(rel.size());
}

MetricsReport evaluate(const Scorer& scorer, const Dataset& dataset, const EvaluateOptions& options) {
  if (scorer.num_items() != dataset.num_items()) {
    throw std::invalid_argument("scorer covers " + std::to_string(scorer.num_items()) + " items, dataset has " +
                                std::to_string(dataset.num_items()));
  }
  std::vector<UserId> users;
  for (UserId u = 0; u < dataset.num_users(); ++u) {
    if (!dataset.test(u).empty()) users.push_back(u);
  }
  const std::size_t items = dataset.num_items();
  const std::size_t L = scorer.markov_order();
  const std::size_t chunk = std::max<std::size_t>(1, options.batch_size);
  const std::size_t chunks = (users.size() + chunk - 1) / chunk;
  std::vector<UserMetrics> results(users.size());

  auto run_chunk = [&](std::size_t c) {
    const std::size_t begin = c * chunk, end = std::min(users.size(), begin + chunk);
    const std::span<const UserId> batch(users.data() + begin, end - begin);
    std::vector<ItemId> windows;
    windows.reserve(batch.size() * L);
    for (UserId u : batch) {
      const auto w = last_window(dataset, u, L);
      windows.insert(windows.end(), w.begin(), w.end());
    }
    std::vector<double> scores(batch.size() * items);
    scorer.score(batch, windows, scores);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const UserId u = batch[b];
      const auto ranked = rank_items(std::span<const double>(scores.data() + b * items, items), dataset.train(u));
      UserMetrics m;
      m.user = u;
      m.average_precision = average_precision(ranked, dataset.test(u));
      for (std::size_t k = 0; k < kCutoffs.size(); ++k) {
        const auto pr = precision_recall_at(ranked, dataset.test(u), kCutoffs[k]);
        m.precision[k] = pr.precision;
        m.recall[k] = pr.recall;
      }
      results[begin + b] = m;
    }
  };

  const std::size_t threads = std::max<std::size_t>(1, std::min(options.threads, chunks));
  if (threads <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) run_chunk(c);
  } else {
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t c = t; c < chunks; c += threads) run_chunk(c);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  MetricsReport report;
  report.users = results.size();
  for (const auto& m : results) {
    report.map += m.average_precision;
    for (std::size_t k = 0; k < kCutoffs.size(); ++k) {
      report.precision[k] += m.precision[k];
      report.recall[k] += m.recall[k];
    }
  }
  if (report.users > 0) {
    const double n = static_cast<double>(report.users);
    report.map /= n;
    for (std::size_t k = 0; k < kCutoffs.size(); ++k) {
      report.precision[k] /= n;
      report.recall[k] /= n;
    }
  }
  if (options.keep_per_user) report.per_user = std::move(results);
  return report;
}

}  // namespace cosrec

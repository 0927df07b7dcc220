#include "cosrec/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "cosrec/baselines.hpp"

namespace cosrec {

std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t count, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  for (std::size_t begin = 0; begin < count; begin += batch_size) {
    ranges.emplace_back(begin, std::min(count, begin + batch_size));
  }
  if (ranges.size() >= 2 && ranges.back().second - ranges.back().first == 1) {
    ranges[ranges.size() - 2].second = ranges.back().second;
    ranges.pop_back();
  }
  return ranges;
}

namespace {

template <typename T>
struct Snapshot {
  std::vector<Tensor<T>> tensors;

  static Snapshot take(const CosRecModel<T>& model) {
    Snapshot s;
    for (const auto& p : model.parameters()) s.tensors.push_back(*p.value);
    for (const auto& b : model.buffers()) s.tensors.push_back(*b.value);
    return s;
  }

  void apply(CosRecModel<T>& model) const {
    std::size_t i = 0;
    for (auto& p : model.parameters()) *p.value = tensors[i++];
    for (auto& b : model.buffers()) *b.value = tensors[i++];
  }
};

}  // namespace

template <typename T>
TrainOutcome<T> train_model(const Dataset& dataset, const RunConfig& run,
                            const std::function<void(const EpochLog&)>& on_epoch) {
  const bool validate = run.validation_fraction > 0.0;
  const Dataset fit_data = validate ? dataset.with_validation_split(run.validation_fraction) : dataset;

  TrainOutcome<T> out{CosRecModel<T>(run.model_config(dataset.num_users(), dataset.num_items())),
                      Adam<T>(run.adam_options()), Rng(run.seed), {}, 0};
  out.model.init_parameters(run.seed);
  // Separate stream for shuffling, sampling and dropout.
  out.rng = Rng(run.seed ^ 0x9e3779b97f4a7c15ULL);

  const auto windows = generate_windows(fit_data, run.markov_order, run.horizon);
  if (windows.size() < 2) throw std::invalid_argument("need at least two training windows");
  const NegativeSampler sampler(fit_data, run.negatives);

  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  double best_map = -1.0;
  std::size_t stale = 0;
  std::optional<Snapshot<T>> best;

  for (std::size_t epoch = 1; epoch <= run.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[out.rng.below(i)]);

    double loss_sum = 0.0;
    std::vector<TrainWindow> batch;
    std::vector<ItemId> negatives;
    for (const auto& [begin, end] : batch_ranges(order.size(), run.batch_size)) {
      batch.clear();
      negatives.clear();
      for (std::size_t k = begin; k < end; ++k) {
        batch.push_back(windows[order[k]]);
        const auto neg = sampler.sample(batch.back(), out.rng);
        negatives.insert(negatives.end(), neg.begin(), neg.end());
      }
      auto result = out.model.loss_and_backward(batch, negatives, out.rng);
      if (!std::isfinite(static_cast<double>(result.loss))) {
        throw NumericError("non-finite loss in epoch " + std::to_string(epoch) + " at window " +
                           std::to_string(begin));
      }
      loss_sum += static_cast<double>(result.loss) * static_cast<double>(batch.size());
      std::vector<Tensor<T>*> params;
      for (auto& p : out.model.parameters()) params.push_back(p.value);
      try {
        out.optimizer.step(params, result.gradients);
      } catch (const std::domain_error& e) {
        throw NumericError(std::string(e.what()) + " in epoch " + std::to_string(epoch));
      }
    }

    EpochLog log;
    log.epoch = epoch;
    log.windows = windows.size();
    log.loss = loss_sum / static_cast<double>(windows.size());
    if (validate) {
      log.validation = evaluate(ModelScorer<T>(out.model), fit_data);
    }
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.epochs.push_back(log);
    if (on_epoch) on_epoch(log);

    if (validate) {
      if (log.validation->map > best_map) {
        best_map = log.validation->map;
        best = Snapshot<T>::take(out.model);
        out.best_epoch = epoch;
        stale = 0;
      } else if (++stale >= run.patience) {
        break;
      }
    } else {
      out.best_epoch = epoch;
    }
  }
  if (best) best->apply(out.model);
  return out;
}

std::string format_epoch_log(const EpochLog& log) {
  char buf[512];
  int n = std::snprintf(buf, sizeof buf, "{\"epoch\":%zu,\"loss\":%.6f,\"windows\":%zu", log.epoch, log.loss,
                        log.windows);
  std::string s(buf, static_cast<std::size_t>(n));
  if (log.validation) {
    const auto& v = *log.validation;
    n = std::snprintf(buf, sizeof buf,
                      ",\"val_map\":%.4f,\"val_prec@1\":%.4f,\"val_prec@5\":%.4f,\"val_prec@10\":%.4f,"
                      "\"val_recall@1\":%.4f,\"val_recall@5\":%.4f,\"val_recall@10\":%.4f",
                      v.map, v.precision[0], v.precision[1], v.precision[2], v.recall[0], v.recall[1], v.recall[2]);
    s.append(buf, static_cast<std::size_t>(n));
  }
  n = std::snprintf(buf, sizeof buf, ",\"seconds\":%.3f}", log.seconds);
  s.append(buf, static_cast<std::size_t>(n));
  return s;
}

std::string format_metrics(const MetricsReport& r) {
  char buf[512];
  const int n = std::snprintf(buf, sizeof buf,
                              "{\"map\":%.4f,\"prec@1\":%.4f,\"prec@5\":%.4f,\"prec@10\":%.4f,"
                              "\"recall@1\":%.4f,\"recall@5\":%.4f,\"recall@10\":%.4f,\"users\":%zu}",
                              r.map, r.precision[0], r.precision[1], r.precision[2], r.recall[0], r.recall[1],
                              r.recall[2], r.users);
  return std::string(buf, static_cast<std::size_t>(n));
}

template TrainOutcome<float> train_model(const Dataset&, const RunConfig&, const std::function<void(const EpochLog&)>&);
template TrainOutcome<double> train_model(const Dataset&, const RunConfig&, const std::function<void(const EpochLog&)>&);

}  // namespace cosrec
